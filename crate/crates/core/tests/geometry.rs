//! Numerical checks of the extension to the whole cube.

use percoqs_core::globalmap::{address, f_global, surviving_prefix_len, GeomConfig};
use percoqs_core::percolation::{sample_nonextinct, sample_tree};
use percoqs_core::substitution::FlaggedTree;
use percoqs_core::verify::{
    boundary_displacement, branch_disagreement, corner_agreement, grid_min_separation,
    lipschitz_bracket, lipschitz_bracket_localized, radial_deviation,
};
use percoqs_core::{Params, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn boundary_fixed_for_sampled_trees() {
    let pr = Params::with_default_eta(2, 3, 0.5, 1).unwrap();
    let cfg = GeomConfig::new(&pr).unwrap();
    for seed in 0..20 {
        let ft = FlaggedTree::new(sample_tree(&pr, 5, seed).unwrap()).unwrap();
        let (dg, df) = boundary_displacement(&ft, &cfg, 500, 5, seed).unwrap();
        assert_eq!((dg, df), (0.0, 0.0));
    }
}

#[test]
fn g_is_injective_on_a_fine_grid() {
    let cfg = GeomConfig::new(&Params::with_default_eta(2, 3, 0.5, 1).unwrap()).unwrap();
    assert!(grid_min_separation(&cfg, 1000).unwrap() > 1e-9);
}

#[test]
fn bilipschitz_bracket_is_stable() {
    for &(m, d, k) in &[
        (3u32, 2usize, 1usize),
        (3, 2, 2),
        (4, 2, 1),
        (3, 3, 1),
        (5, 1, 1),
    ] {
        let cfg = GeomConfig::new(&Params::with_default_eta(d, m, 0.5, k).unwrap()).unwrap();
        let (lo, hi) = lipschitz_bracket(&cfg, 100_000, 7).unwrap();
        let (lo_s, hi_s) = lipschitz_bracket(&cfg, 10_000, 7).unwrap();
        assert!(
            hi / lo <= (m as f64).powi(k as i32 + 2),
            "M={m} d={d} K={k}: [{lo}, {hi}]"
        );
        // the smaller sample already sees most of the spread
        assert!(hi / lo <= 1.5 * hi_s / lo_s);
    }
}

#[test]
fn localized_bracket_matches() {
    let pr = Params::with_default_eta(2, 3, 0.5, 1).unwrap();
    let cfg = GeomConfig::new(&pr).unwrap();
    let (lo, hi) = lipschitz_bracket(&cfg, 10_000, 3).unwrap();
    let (lq, hq) = lipschitz_bracket_localized(&cfg, &[9, 2, 5], 10_000, 3).unwrap();
    assert!((lq / lo - 1.0).abs() < 1e-6 && (hq / hi - 1.0).abs() < 1e-6);
}

#[test]
fn branches_and_rays() {
    for &(m, d, k) in &[(3u32, 2usize, 1usize), (4, 2, 2), (3, 3, 1)] {
        let cfg = GeomConfig::new(&Params::with_default_eta(d, m, 0.5, k).unwrap()).unwrap();
        assert!(branch_disagreement(&cfg, 10_000, 1) <= 1e-12);
        assert!(radial_deviation(&cfg, 200, 50, 2).unwrap() <= 1e-12);
    }
}

#[test]
fn global_map_agrees_on_corners() {
    let pr = Params::with_default_eta(2, 3, 0.45, 1).unwrap();
    let cfg = GeomConfig::new(&pr).unwrap();
    for seed in 0..10 {
        let ft = FlaggedTree::new(sample_nonextinct(&pr, 5, seed * 31).unwrap().tree).unwrap();
        for n in 1..=5 {
            let (err, _) = corner_agreement(&ft, &cfg, n).unwrap();
            assert!(err <= 1e-9, "seed {seed} n {n}: {err}");
        }
    }
}

#[test]
fn global_comparability() {
    // |f(x) - f(y)| M^{|tilde(k|n)| - n} / |x - y| for the meet k of the
    // addresses and its longest surviving prefix k|n
    let (m, k) = (3u32, 1usize);
    let pr = Params::with_default_eta(2, m, 0.5, k).unwrap();
    let cfg = GeomConfig::new(&pr).unwrap();
    let depth = 6;
    let bound = (m as f64).powi(k as i32 + 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for seed in 0..5 {
        let ft = FlaggedTree::new(sample_nonextinct(&pr, depth, seed).unwrap().tree).unwrap();
        for _ in 0..2000 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen::<f64>()).collect();
            let scale = 10f64.powf(-rng.gen_range(0.5..3.0));
            let y: Vec<f64> = x
                .iter()
                .map(|v| (v + scale * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0))
                .collect();
            let (ax, ay) = (
                address(&pr, &x, depth).unwrap(),
                address(&pr, &y, depth).unwrap(),
            );
            let meet: Word = ax.meet(&ay);
            let n = surviving_prefix_len(&ft, &meet, depth);
            if n == depth {
                continue;
            }
            let stretch = ft.tilde(&meet[..n]).unwrap().len() as i32 - n as i32;
            let fx = f_global(&ft, &cfg, &x, depth).unwrap().value;
            let fy = f_global(&ft, &cfg, &y, depth).unwrap().value;
            let r = linf(&fx, &fy) * (m as f64).powi(stretch) / linf(&x, &y);
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    assert!(lo >= 1.0 / bound && hi <= bound, "[{lo}, {hi}]");
}
