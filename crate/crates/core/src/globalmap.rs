//! Extension of the substitution map to all of `[0,1]^d`.
//!
//! The auxiliary map `g` is the identity on the boundary of the unit cube,
//! a homothety of the inner cube `I` (side `1-2/M`, same centre) onto the
//! concentric copy of `I` inside `Q_eta`, and interpolates linearly along
//! the segments joining a boundary point `x` to its image under the
//! homothety `[0,1]^d -> I`.
//!
//! Points are binary64 here; addresses and corners stay exact.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{domain, precondition, Result};
use crate::lattice::{big_pow, box_of_word, ExactPoint, Label, MBox, Params, Word};
use crate::substitution::FlaggedTree;

/// Containment tolerance for float points.
pub const CONTAINMENT_TOL: f64 = 1e-12;

/// Geometry of `g` for one parameter set.
#[derive(Clone, Debug)]
pub struct GeomConfig {
    params: Params,
    inner_ratio: f64,
    eta_box: MBox,
    eta_corner: Vec<f64>,
    eta_side: f64,
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

impl GeomConfig {
    pub fn new(params: &Params) -> Result<Self> {
        let eta_box = box_of_word(params, params.eta())?;
        let eta_corner = eta_box.corner_f64();
        let eta_side = eta_box.side_f64();
        Ok(GeomConfig {
            params: params.clone(),
            inner_ratio: 1.0 - 2.0 / params.base() as f64,
            eta_box,
            eta_corner,
            eta_side,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// `1 - 2/M`.
    pub fn inner_ratio(&self) -> f64 {
        self.inner_ratio
    }

    pub fn eta_box(&self) -> &MBox {
        &self.eta_box
    }

    pub fn centre(&self) -> Vec<f64> {
        vec![0.5; self.dim()]
    }

    /// Homothety `[0,1]^d -> Q_eta`.
    pub fn to_eta_box(&self, u: &[f64]) -> Vec<f64> {
        self.eta_corner
            .iter()
            .zip(u)
            .map(|(c, u)| c + self.eta_side * u)
            .collect()
    }

    /// Homothety `[0,1]^d -> I`.
    pub fn to_inner(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|x| 0.5 + self.inner_ratio * (x - 0.5))
            .collect()
    }

    /// Fixed point of the composite homothety `to_eta_box ∘ to_inner`.
    pub fn composite_fixed_point(&self) -> Vec<f64> {
        // z = a + s (0.5 + r (z - 0.5))  =>  z (1 - s r) = a + s 0.5 (1 - r)
        let (s, r) = (self.eta_side, self.inner_ratio);
        self.eta_corner
            .iter()
            .map(|a| (a + s * 0.5 * (1.0 - r)) / (1.0 - s * r))
            .collect()
    }

    /// For `u` outside `I`: the boundary point `x` and parameter `t` with
    /// `u = (1-t) x + t to_inner(x)`. `None` inside `I`.
    pub fn shell_coordinates(&self, u: &[f64]) -> Option<(Vec<f64>, f64)> {
        let c = self.centre();
        let r = linf(u, &c);
        if r <= 0.5 * self.inner_ratio {
            return None;
        }
        let x = u.iter().map(|u| 0.5 + (u - 0.5) / (2.0 * r)).collect();
        let t = 0.5 * self.params.base() as f64 * (1.0 - 2.0 * r);
        Some((x, t))
    }

    /// The inner branch, `g = to_eta_box` on `I`.
    pub fn g_inner(&self, u: &[f64]) -> Vec<f64> {
        self.to_eta_box(u)
    }

    /// The shell branch evaluated through `shell_coordinates`, without the
    /// inside-`I` test. Used to compare branches on `∂I`.
    pub fn g_shell(&self, u: &[f64]) -> Vec<f64> {
        let c = self.centre();
        let r = linf(u, &c).max(f64::MIN_POSITIVE);
        let x: Vec<f64> = u.iter().map(|u| 0.5 + (u - 0.5) / (2.0 * r)).collect();
        let t = 0.5 * self.params.base() as f64 * (1.0 - 2.0 * r);
        let target = self.to_eta_box(&self.to_inner(&x));
        x.iter()
            .zip(&target)
            .map(|(x, y)| (1.0 - t) * x + t * y)
            .collect()
    }

    fn check_unit(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return domain(format!(
                "point has {} coordinates, expected {}",
                u.len(),
                self.dim()
            ));
        }
        if u.iter()
            .any(|&x| !(-CONTAINMENT_TOL..=1.0 + CONTAINMENT_TOL).contains(&x))
        {
            return domain(format!("point {u:?} outside [0,1]^d"));
        }
        Ok(())
    }

    /// The bi-Lipschitz map `g: [0,1]^d -> [0,1]^d`.
    pub fn g(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_unit(u)?;
        if on_unit_boundary(u) {
            return Ok(u.to_vec());
        }
        Ok(match self.shell_coordinates(u) {
            None => self.g_inner(u),
            Some(_) => self.g_shell(u),
        })
    }

    /// `g_Q = h_Q ∘ g ∘ h_Q^{-1}` on the box `Q`.
    pub fn g_localized(&self, q: &MBox, u: &[f64]) -> Result<Vec<f64>> {
        let local = q.invert_f64(u);
        if local.len() != self.dim()
            || local
                .iter()
                .any(|&x| !(-CONTAINMENT_TOL..=1.0 + CONTAINMENT_TOL).contains(&x))
        {
            return domain(format!("point {u:?} outside the box"));
        }
        let local: Vec<f64> = local.into_iter().map(|x| x.clamp(0.0, 1.0)).collect();
        Ok(q.apply_f64(&self.g(&local)?))
    }
}

fn on_unit_boundary(u: &[f64]) -> bool {
    u.iter().any(|&x| x == 0.0 || x == 1.0)
}

fn exact_coords(p: &ExactPoint) -> Vec<BigRational> {
    let den = BigInt::from(big_pow(p.base(), p.level()));
    p.numerators()
        .iter()
        .map(|c| BigRational::new(BigInt::from(c.clone()), den.clone()))
        .collect()
}

fn exact(u: f64) -> BigRational {
    BigRational::from_float(u.clamp(0.0, 1.0)).expect("finite coordinate")
}

/// First `n` letters of the M-adic address of `u`. A coordinate lying on a
/// grid face goes to the cell with the smaller offset (coordinate `1`
/// stays in the top cell).
pub fn address(params: &Params, u: &[f64], n: usize) -> Result<Word> {
    if u.len() != params.dim() {
        return domain("address: dimension mismatch");
    }
    let m = BigRational::from_integer(BigInt::from(params.base()));
    let top = params.base() as i64 - 1;
    let mut coords: Vec<BigRational> = u.iter().map(|&x| exact(x)).collect();
    let mut out = Vec::with_capacity(n);
    let mut offset = vec![0u32; params.dim()];
    for _ in 0..n {
        for (v, o) in coords.iter_mut().zip(offset.iter_mut()) {
            let scaled = &*v * &m;
            let digit = (scaled.ceil().to_integer().to_i64().unwrap_or(0) - 1).clamp(0, top);
            *v = scaled - BigRational::from_integer(BigInt::from(digit));
            *o = digit as u32;
        }
        out.push(params.offset_to_label(&offset)?);
    }
    Ok(Word::new(out))
}

/// Largest `n <= limit` with `w|_n` surviving.
pub fn surviving_prefix_len(ft: &FlaggedTree, w: &[Label], limit: usize) -> usize {
    let tree = ft.tree();
    let mut idx = 0usize;
    for (k, &l) in w.iter().take(limit.min(tree.depth())).enumerate() {
        let range = tree.children(k, idx);
        match tree.child_labels(k, idx).binary_search(&l) {
            Ok(pos) => idx = range.start + pos,
            Err(_) => return k,
        }
    }
    limit.min(tree.depth()).min(w.len())
}

/// Evaluation of the global map at resolution `n_res`.
#[derive(Clone, Debug)]
pub struct GlobalEval {
    pub value: Vec<f64>,
    /// Length of the longest surviving prefix of the address (capped).
    pub surviving: usize,
    /// Whether the `g` branch was taken.
    pub stretched: bool,
}

/// `f` on `[0,1]^d` at address resolution `n_res <= depth`.
///
/// With `n` the longest surviving prefix length of the address `a`, the
/// point is sent by `h_{Q_tilde(a|n)} ∘ h_{Q_{a|n}}^{-1}`, composed with
/// `g` (in the image cube) when `n < n_res` and `a|n` is flagged.
pub fn f_global(ft: &FlaggedTree, cfg: &GeomConfig, u: &[f64], n_res: usize) -> Result<GlobalEval> {
    if n_res > ft.depth() {
        return precondition(format!(
            "resolution {n_res} exceeds tree depth {}",
            ft.depth()
        ));
    }
    cfg.check_unit(u)?;
    if on_unit_boundary(u) {
        return Ok(GlobalEval {
            value: u.to_vec(),
            surviving: 0,
            stretched: false,
        });
    }
    let params = ft.params();
    let addr = address(params, u, n_res)?;
    let n = surviving_prefix_len(ft, &addr, n_res);
    let prefix = &addr[..n];
    let source = box_of_word(params, prefix)?;
    let image = ft.image_box(prefix)?;

    // residual position inside Q_{a|n}, exact
    let scale = BigRational::from_integer(num_traits::pow(BigInt::from(params.base()), n));
    let residual: Vec<BigRational> = u
        .iter()
        .zip(exact_coords(source.corner()))
        .map(|(&x, c)| ((exact(x) - c) * &scale).max(BigRational::zero()))
        .collect();

    let stretched = n < n_res && ft.flag_of(prefix)? == Some(true);
    let value = if stretched {
        let local: Vec<f64> = residual
            .iter()
            .map(|r| r.to_f64().unwrap_or(0.0).clamp(0.0, 1.0))
            .collect();
        image.apply_f64(&cfg.g(&local)?)
    } else {
        let side = image.side().to_ratio();
        exact_coords(image.corner())
            .into_iter()
            .zip(&residual)
            .map(|(c, r)| (c + &side * r).to_f64().unwrap_or(f64::NAN))
            .collect()
    };
    Ok(GlobalEval {
        value,
        surviving: n,
        stretched,
    })
}
