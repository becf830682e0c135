//! Plain SVG 1.1 panels: one square panel per level, `y` pointing up.

use std::fmt::Write;

use percoqs_core::percolation::PercTree;
use percoqs_core::substitution::FlaggedTree;

use crate::error::CliResult;

/// Unit-square rectangles `(x, y, side)` under a caption.
pub struct Panel {
    pub caption: String,
    pub cells: Vec<(f64, f64, f64)>,
}

pub fn survivor_panels(tree: &PercTree, levels: &[usize]) -> Vec<Panel> {
    let params = tree.params();
    levels
        .iter()
        .map(|&n| {
            let side = (params.base() as f64).powi(-(n as i32));
            let cells = tree
                .survivors(n)
                .map(|w| {
                    let c = crate::commands::corner(params, &w).expect("surviving word");
                    (c[0], c[1], side)
                })
                .collect();
            Panel {
                caption: format!("level {n}"),
                cells,
            }
        })
        .collect()
}

pub fn image_panels(ft: &FlaggedTree, levels: &[usize]) -> CliResult<Vec<Panel>> {
    levels
        .iter()
        .map(|&n| {
            let cells = ft
                .image_cover(n)?
                .into_iter()
                .map(|cell| {
                    let c = cell.image.corner_f64();
                    (c[0], c[1], cell.image.side_f64())
                })
                .collect();
            Ok(Panel {
                caption: format!("image cover, level {n}"),
                cells,
            })
        })
        .collect()
}

pub fn document(panels: &[Panel], size: u32) -> String {
    let s = size as f64;
    let gap = 20.0;
    let caption = 24.0;
    let width = panels.len().max(1) as f64 * (s + gap) + gap;
    let height = s + caption + 2.0 * gap;
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    )
    .unwrap();
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, panel) in panels.iter().enumerate() {
        let x0 = gap + i as f64 * (s + gap);
        let y0 = gap + caption;
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
            x0 + s / 2.0,
            gap + 14.0,
            panel.caption
        )
        .unwrap();
        writeln!(out, "<g fill=\"black\" stroke=\"none\">").unwrap();
        for &(x, y, side) in &panel.cells {
            writeln!(
                out,
                "<rect x=\"{:.4}\" y=\"{:.4}\" width=\"{:.4}\" height=\"{:.4}\"/>",
                x0 + x * s,
                y0 + (1.0 - y - side) * s,
                side * s,
                side * s
            )
            .unwrap();
        }
        out.push_str("</g>\n");
        writeln!(
            out,
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{s}\" height=\"{s}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>"
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
