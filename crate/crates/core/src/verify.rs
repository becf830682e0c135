//! Structural checks on sampled trees and on the global map. Each returns
//! the measured quantity so callers can report it next to the verdict.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Result};
use crate::globalmap::{f_global, GeomConfig};
use crate::lattice::{dist_max, pi_finite, Label, Word};
use crate::percolation::subtree;
use crate::substitution::FlaggedTree;

/// Tilde words of every level `0..=depth`, built level by level.
pub fn tilde_words(ft: &FlaggedTree) -> Vec<Vec<Word>> {
    let tree = ft.tree();
    let eta = ft.params().eta();
    let mut out: Vec<Vec<Word>> = vec![vec![Word::empty()]];
    for lv in 1..=ft.depth() {
        let prev = &out[lv - 1];
        let row = (0..tree.count(lv))
            .map(|i| {
                let par = tree.parent(lv, i);
                let mut w = prev[par].clone();
                if ft.flag(lv - 1, par) == Some(true) {
                    w = w.concat(eta);
                }
                w.push(tree.label(lv, i));
                w
            })
            .collect();
        out.push(row);
    }
    out
}

/// Distinct survivors of equal length have distinct tilde words, at every
/// level. Returns the number of words compared.
pub fn check_injectivity(ft: &FlaggedTree) -> Result<usize> {
    let mut total = 0;
    for (lv, mut row) in tilde_words(ft).into_iter().enumerate() {
        total += row.len();
        row.sort_unstable();
        if let Some(w) = row.windows(2).find(|w| w[0] == w[1]) {
            return precondition(format!(
                "two survivors of level {lv} share the tilde word {}",
                w[0]
            ));
        }
    }
    Ok(total)
}

/// `tilde(p j) = tilde(p) ++ tilde'(j)` where `tilde'` is computed on the
/// subtree rooted at `p`, for every surviving `p` with `|p| <= max_prefix`
/// and every descendant `j`. Returns the number of identities checked.
pub fn check_splitting(ft: &FlaggedTree, max_prefix: usize) -> Result<usize> {
    let tree = ft.tree();
    let full = tilde_words(ft);
    let mut checked = 0;
    for plen in 0..=max_prefix.min(ft.depth().saturating_sub(1)) {
        for pi in 0..tree.count(plen) {
            let p = tree.word(plen, pi);
            let sub = FlaggedTree::new(subtree(tree, &p)?)?;
            let local = tilde_words(&sub);
            let tp = &full[plen][pi];
            for (m, row) in local.iter().enumerate().skip(1) {
                let range = crate::analysis::descendants(tree, plen, pi, plen + m);
                if range.len() != row.len() {
                    return precondition(format!("subtree of {p} has the wrong size at level {m}"));
                }
                for (tj, whole) in row.iter().zip(&full[plen + m][range]) {
                    if tp.concat(tj) != *whole {
                        return precondition(format!(
                            "splitting fails below {p}: {} != {tp} ++ {tj}",
                            whole
                        ));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceStats {
    /// Realized pairs of face-approach tails.
    pub pairs: usize,
    /// Largest `dist / bound`; at most one when the check passes.
    pub worst: f64,
}

/// Well-definedness across shared faces.
///
/// For a surviving `k` with surviving children `a`, `b = a + e_axis`, walk
/// pairs of surviving tails of length `n_tail` below `k a` and `k b`: the
/// first takes letters on the far face (`offset[axis] = M-1`), the second on
/// the near face (`offset[axis] = 0`), with equal offsets in every other
/// coordinate. Both corners then approach the same face point, and their
/// images must satisfy
/// `|f(k a i') - f(k b j')| <= M^{-(N-1)} M^{-|tilde k|+1}` exactly.
pub fn check_shared_faces(ft: &FlaggedTree, n_tail: usize) -> Result<FaceStats> {
    if n_tail == 0 {
        return domain("tail length must be at least 1");
    }
    let tree = ft.tree();
    let params = ft.params();
    let base = params.base();
    let top = base - 1;
    let dim = params.dim();
    let m = BigRational::from_integer(BigInt::from(base));
    let mut stats = FaceStats {
        pairs: 0,
        worst: 0.0,
    };
    if ft.depth() < n_tail + 1 {
        return Ok(stats);
    }
    for klen in 0..ft.depth() - n_tail {
        for ki in 0..tree.count(klen) {
            let k = tree.word(klen, ki);
            let tk = ft.tilde(&k)?.len() as i32;
            let scale = num_traits::pow::Pow::pow(&m, n_tail as i32 + tk - 2);
            let kids = tree.children(klen, ki);
            for ai in kids.clone() {
                for bi in kids.clone() {
                    let (la, lb) = (tree.label(klen + 1, ai), tree.label(klen + 1, bi));
                    let (oa, ob) = (params.offset(la), params.offset(lb));
                    let Some(axis) = (0..dim).find(|&x| ob[x] == oa[x] + 1) else {
                        continue;
                    };
                    if (0..dim).any(|x| x != axis && oa[x] != ob[x]) {
                        continue;
                    }
                    // lockstep walk over realized tail pairs
                    let mut frontier = vec![(ai, bi)];
                    for step in 0..n_tail {
                        let lv = klen + 1 + step;
                        let mut next = Vec::new();
                        for &(x, y) in &frontier {
                            for xc in tree.children(lv, x) {
                                let ox = params.offset(tree.label(lv + 1, xc));
                                if ox[axis] != top {
                                    continue;
                                }
                                for yc in tree.children(lv, y) {
                                    let oy = params.offset(tree.label(lv + 1, yc));
                                    if oy[axis] == 0
                                        && (0..dim).all(|c| c == axis || ox[c] == oy[c])
                                    {
                                        next.push((xc, yc));
                                    }
                                }
                            }
                        }
                        frontier = next;
                    }
                    let lv = klen + 1 + n_tail;
                    for (x, y) in frontier {
                        let fx = ft.f_point(&tree.word(lv, x))?;
                        let fy = ft.f_point(&tree.word(lv, y))?;
                        let r = dist_max(&fx, &fy).to_ratio() * &scale;
                        stats.pairs += 1;
                        stats.worst = stats.worst.max(r.to_f64().unwrap_or(f64::INFINITY));
                        if r > BigRational::one() {
                            return precondition(format!(
                                "images of face-approach tails below {k} are {} apart, above the bound",
                                r
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(stats)
}

/// Minimum and maximum of `comparability_ratio` over every pair of
/// level-`n` survivors, and the number of pairs.
pub fn comparability_exhaustive(ft: &FlaggedTree, n: usize) -> Result<(f64, f64, usize)> {
    let words: Vec<Word> = ft.tree().survivors(n).collect();
    let (mut lo, mut hi, mut count) = (f64::INFINITY, 0.0f64, 0);
    for (a, wa) in words.iter().enumerate() {
        for wb in &words[a + 1..] {
            let r = ft.comparability_ratio(wa, wb)?.to_f64().unwrap_or(f64::NAN);
            lo = lo.min(r);
            hi = hi.max(r);
            count += 1;
        }
    }
    Ok((lo, hi, count))
}

/// A random point with one coordinate pinned to `value`, the others uniform
/// on `[lo, hi]`.
fn pinned_point(rng: &mut ChaCha8Rng, dim: usize, value: f64, lo: f64, hi: f64) -> Vec<f64> {
    let axis = rng.gen_range(0..dim);
    (0..dim)
        .map(|c| {
            if c == axis {
                value
            } else {
                rng.gen_range(lo..=hi)
            }
        })
        .collect()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest `|g(u) - u|` and `|f(u) - u|` over random boundary points.
/// The boundary branch makes both exactly zero.
pub fn boundary_displacement(
    ft: &FlaggedTree,
    cfg: &GeomConfig,
    points: usize,
    n_res: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dg, mut df) = (0.0f64, 0.0f64);
    for _ in 0..points {
        let side = if rng.gen_bool(0.5) { 0.0 } else { 1.0 };
        let u = pinned_point(&mut rng, cfg.dim(), side, 0.0, 1.0);
        dg = dg.max(linf(&cfg.g(&u)?, &u));
        df = df.max(linf(&f_global(ft, cfg, &u, n_res)?.value, &u));
    }
    Ok((dg, df))
}

/// Largest disagreement between the inner and shell branches of `g` on `∂I`.
pub fn branch_disagreement(cfg: &GeomConfig, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 0.5 * cfg.inner_ratio();
    (0..points)
        .map(|_| {
            let face = if rng.gen_bool(0.5) { 0.5 - h } else { 0.5 + h };
            let u = pinned_point(&mut rng, cfg.dim(), face, 0.5 - h, 0.5 + h);
            linf(&cfg.g_inner(&u), &cfg.g_shell(&u))
        })
        .fold(0.0, f64::max)
}

/// Bracket `[c, C]` of `|g(u) - g(v)| / |u - v|` over random pairs. Half the
/// pairs are uniform, half are local at a random scale in `[1e-6, 1e-1]`.
pub fn lipschitz_bracket(cfg: &GeomConfig, pairs: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = cfg.dim();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..pairs {
        let u: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        let v: Vec<f64> = if i % 2 == 0 {
            (0..dim).map(|_| rng.gen::<f64>()).collect()
        } else {
            let scale = 10f64.powf(-rng.gen_range(1.0..6.0));
            u.iter()
                .map(|x| (x + scale * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0))
                .collect()
        };
        let d = linf(&u, &v);
        if d == 0.0 {
            continue;
        }
        let r = linf(&cfg.g(&u)?, &cfg.g(&v)?) / d;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

/// Same bracket for `g_Q` on the box of `w`, with the pairs of
/// [`lipschitz_bracket`] transported into `Q`.
pub fn lipschitz_bracket_localized(
    cfg: &GeomConfig,
    w: &[Label],
    pairs: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let q = crate::lattice::box_of_word(cfg.params(), w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = cfg.dim();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..pairs {
        let u: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        let v: Vec<f64> = if i % 2 == 0 {
            (0..dim).map(|_| rng.gen::<f64>()).collect()
        } else {
            let scale = 10f64.powf(-rng.gen_range(1.0..6.0));
            u.iter()
                .map(|x| (x + scale * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0))
                .collect()
        };
        let (qu, qv) = (q.apply_f64(&u), q.apply_f64(&v));
        let d = linf(&qu, &qv);
        if d == 0.0 {
            continue;
        }
        let r = linf(&cfg.g_localized(&q, &qu)?, &cfg.g_localized(&q, &qv)?) / d;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

/// Smallest image separation of `g` over the `k^2` grid of cell centres of
/// `[0,1]^2`, found with a bucket grid. Also confirms `g` maps into the
/// cube. Only `d = 2`.
pub fn grid_min_separation(cfg: &GeomConfig, k: usize) -> Result<f64> {
    if cfg.dim() != 2 {
        return domain("grid injectivity probe is implemented for d = 2");
    }
    let mut images = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let u = [(i as f64 + 0.5) / k as f64, (j as f64 + 0.5) / k as f64];
            let g = cfg.g(&u)?;
            if g.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return precondition(format!("g({u:?}) = {g:?} leaves the cube"));
            }
            images.push([g[0], g[1]]);
        }
    }
    // buckets of side h; the nearest neighbour of any point within h is in
    // the surrounding 3x3 block
    let h = 1.0 / k as f64;
    let cells = k + 1;
    let key = |x: f64| ((x / h) as usize).min(cells - 1);
    let mut bucket: Vec<Vec<u32>> = vec![Vec::new(); cells * cells];
    for (n, g) in images.iter().enumerate() {
        bucket[key(g[0]) * cells + key(g[1])].push(n as u32);
    }
    let mut best = f64::INFINITY;
    for (n, g) in images.iter().enumerate() {
        let (bx, by) = (key(g[0]), key(g[1]));
        for x in bx.saturating_sub(1)..=(bx + 1).min(cells - 1) {
            for y in by.saturating_sub(1)..=(by + 1).min(cells - 1) {
                for &o in &bucket[x * cells + y] {
                    if o as usize != n {
                        best = best.min(linf(g, &images[o as usize]));
                    }
                }
            }
        }
    }
    Ok(best)
}

/// Along sampled rays `u_t = (1-t) x + t to_inner(x)`, `g(u_t)` lies on the
/// line through `x` and the fixed point `z` of the composite homothety, and
/// moves monotonically towards `z`. Returns the largest distance from that
/// line.
pub fn radial_deviation(cfg: &GeomConfig, rays: usize, steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = cfg.composite_fixed_point();
    let mut worst = 0.0f64;
    for _ in 0..rays {
        let side = if rng.gen_bool(0.5) { 0.0 } else { 1.0 };
        let x = pinned_point(&mut rng, cfg.dim(), side, 0.0, 1.0);
        let inner = cfg.to_inner(&x);
        let dir: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a - b).collect();
        let norm2: f64 = dir.iter().map(|v| v * v).sum();
        let mut last = f64::INFINITY;
        for s in 1..steps {
            let t = s as f64 / steps as f64;
            let u: Vec<f64> = x
                .iter()
                .zip(&inner)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            let g = cfg.g(&u)?;
            let rel: Vec<f64> = g.iter().zip(&z).map(|(a, b)| a - b).collect();
            let lambda = rel.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / norm2;
            let off = rel
                .iter()
                .zip(&dir)
                .map(|(a, b)| (a - lambda * b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(off);
            if !(lambda < last) {
                return precondition(format!("g reverses the order along the ray from {x:?}"));
            }
            last = lambda;
        }
    }
    Ok(worst)
}

/// Largest `|f_global(Pi(w)) - f_point(w)|` over the level-`n` survivors.
pub fn corner_agreement(ft: &FlaggedTree, cfg: &GeomConfig, n: usize) -> Result<(f64, usize)> {
    let params = ft.params();
    let mut worst = 0.0f64;
    let mut count = 0;
    for w in ft.tree().survivors(n) {
        let u = pi_finite(params, &w)?.to_f64();
        let a = f_global(ft, cfg, &u, n)?.value;
        let b = ft.f_point(&w)?.to_f64();
        worst = worst.max(linf(&a, &b));
        count += 1;
    }
    Ok((worst, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::sample_tree;
    use crate::substitution::compute_flags;
    use crate::Params;

    #[test]
    fn tilde_words_match_direct() {
        let pr = Params::with_default_eta(2, 3, 0.45, 2).unwrap();
        let ft = compute_flags(&sample_tree(&pr, 5, 4).unwrap()).unwrap();
        let all = tilde_words(&ft);
        for (lv, words) in all.iter().enumerate() {
            for (i, w) in ft.tree().survivors(lv).enumerate() {
                assert_eq!(words[i], ft.tilde(&w).unwrap().labels);
            }
        }
    }

    #[test]
    fn structural_checks_pass_on_samples() {
        let pr = Params::with_default_eta(2, 3, 0.5, 1).unwrap();
        for seed in 0..5 {
            let ft = compute_flags(&sample_tree(&pr, 5, seed).unwrap()).unwrap();
            check_injectivity(&ft).unwrap();
            check_splitting(&ft, 2).unwrap();
            let s = check_shared_faces(&ft, 2).unwrap();
            assert!(s.worst <= 1.0);
        }
    }

    #[test]
    fn face_pairs_found_in_full_tree() {
        let pr = Params::with_default_eta(2, 3, 1.0 - f64::EPSILON / 2.0, 1).unwrap();
        let ft = compute_flags(&sample_tree(&pr, 3, 0).unwrap()).unwrap();
        let s = check_shared_faces(&ft, 1).unwrap();
        assert!(s.pairs > 0);
        // identity map: distance M^{-|k|-2}, bound M^{-|k|+1}
        assert!((s.worst - 1.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn geometry_checks() {
        let pr = Params::with_default_eta(2, 3, 0.5, 1).unwrap();
        let cfg = GeomConfig::new(&pr).unwrap();
        assert!(branch_disagreement(&cfg, 1000, 1) <= 1e-12);
        let (lo, hi) = lipschitz_bracket(&cfg, 2000, 2).unwrap();
        assert!(lo > 0.0 && hi / lo <= 81.0, "{lo} {hi}");
        assert!(radial_deviation(&cfg, 50, 20, 3).unwrap() <= 1e-12);
        assert!(grid_min_separation(&cfg, 100).unwrap() > 1e-9);
    }
}
