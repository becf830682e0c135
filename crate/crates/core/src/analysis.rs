//! Closed-form contraction factors, the dimension bound and its solvers,
//! partition sums over the image cover, and the Monte Carlo experiments
//! built on them.

use std::ops::RangeInclusive;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Error, Result};
use crate::lattice::{dist_max, pi_finite, Params};
use crate::percolation::{survival_threshold, PercTree, SeedPolicy};
use crate::substitution::FlaggedTree;

/// Iteration cap for every bisection.
pub const MAX_BISECTIONS: u32 = 200;

/// Tolerance on `p M^{d-t} kappa(t,K) - 1` and on the epsilon equation.
pub const SOLVER_TOL: f64 = 1e-12;

/// Largest alphabet the level-one enumeration accepts (`2^25` configurations).
pub const ORACLE_MAX_ALPHABET: u32 = 25;

/// The pieces of `kappa` for one `(M, d, p)`, kept apart so that `1 - kappa`
/// is never formed by cancellation.
#[derive(Clone, Copy, Debug)]
struct KappaTerms {
    ln_m: f64,
    /// `((M-2)/M)^d`
    interior: f64,
    /// `(1-p)^{M^d-(M-2)^d}`
    boundary_death: f64,
}

impl KappaTerms {
    fn new(base: u32, dim: usize, p: f64) -> Self {
        let m = base as f64;
        let boundary = (base as f64).powi(dim as i32) - ((base - 2) as f64).powi(dim as i32);
        KappaTerms {
            ln_m: m.ln(),
            interior: ((m - 2.0) / m).powi(dim as i32),
            boundary_death: (1.0 - p).powf(boundary),
        }
    }

    fn of(params: &Params) -> Self {
        Self::new(params.base(), params.dim(), params.p())
    }

    /// `1 - kappa(s, K)`.
    fn deficit(&self, s: f64, k: usize) -> f64 {
        let stretch = -(-s * k as f64 * self.ln_m).exp_m1();
        self.interior * stretch * self.boundary_death
    }

    fn deficit_prime(&self) -> f64 {
        self.interior * self.boundary_death
    }

    fn ln_kappa(&self, s: f64, k: usize) -> f64 {
        (-self.deficit(s, k)).ln_1p()
    }

    fn ln_kappa_prime(&self) -> f64 {
        (-self.deficit_prime()).ln_1p()
    }
}

/// `kappa(s,K) = 1 - ((M-2)^d/M^d)(1-M^{-sK})(1-p)^{M^d-(M-2)^d}`.
pub fn kappa(params: &Params, s: f64, k: usize) -> Result<f64> {
    if !(s >= 0.0) {
        return domain(format!("kappa needs s >= 0, got {s}"));
    }
    Ok(1.0 - KappaTerms::of(params).deficit(s, k))
}

/// The `K -> infinity` limit of `kappa`.
pub fn kappa_prime(params: &Params) -> f64 {
    1.0 - KappaTerms::of(params).deficit_prime()
}

/// `d + log_M p`, the almost sure dimension of the limit set.
pub fn hausdorff_dim(params: &Params) -> f64 {
    params.dim() as f64 + params.p().ln() / (params.base() as f64).ln()
}

/// Bisection for a sign change of `f` on `[lo, hi]`. Returns the endpoint
/// with the smaller `|f|` and the number of halvings.
pub fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Result<(f64, u32)> {
    let mut flo = f(lo);
    let mut fhi = f(hi);
    if flo == 0.0 {
        return Ok((lo, 0));
    }
    if fhi == 0.0 {
        return Ok((hi, 0));
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return precondition(format!("no sign change on [{lo}, {hi}] (f = {flo}, {fhi})"));
    }
    let mut iters = 0;
    while iters < MAX_BISECTIONS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        iters += 1;
        let fm = f(mid);
        if fm == 0.0 {
            return Ok((mid, iters));
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
    }
    Ok(if flo.abs() <= fhi.abs() {
        (lo, iters)
    } else {
        (hi, iters)
    })
}

/// Solution of `p M^{d-t} kappa(t,K) = 1` next to the Hausdorff dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimReport {
    #[serde(rename = "M")]
    pub m: u32,
    pub d: usize,
    pub p: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub s_hausdorff: f64,
    /// `None` when `p <= M^{-d}`: no root in `[0, d]`.
    pub t_upper: Option<f64>,
    pub kappa_at_t: Option<f64>,
    /// `s_hausdorff - t_upper`, solved for directly.
    pub gap: Option<f64>,
    /// `-log_M kappa'`, the largest gap any `K` can produce.
    pub gap_bound: f64,
    /// `p M^{d-t} kappa(t,K) - 1`.
    pub residual: Option<f64>,
    pub iterations: u32,
    pub flags: Vec<String>,
}

impl DimReport {
    /// All solver invariants that can be checked from the report alone.
    pub fn is_sound(&self) -> bool {
        match (self.t_upper, self.gap, self.residual) {
            (Some(t), Some(gap), Some(res)) => {
                res.abs() <= SOLVER_TOL
                    && t > 0.0
                    && gap > 0.0
                    && t < self.s_hausdorff
                    && gap <= self.gap_bound
            }
            _ => false,
        }
    }
}

/// Solves for `t` with the `K` given (independent of `params.eta`).
///
/// The unknown is the gap `delta = s - t`, which solves
/// `delta ln M + ln kappa(s - delta) = 0` on `[0, min(s, -log_M kappa')]`.
/// Working with the gap keeps full relative precision when it is tiny.
pub fn solve_t(params: &Params, k: usize) -> Result<DimReport> {
    if k == 0 {
        return domain("K must be at least 1");
    }
    let terms = KappaTerms::of(params);
    let (m, d, p) = (params.base(), params.dim(), params.p());
    let s = hausdorff_dim(params);
    let gap_bound = -terms.ln_kappa_prime() / terms.ln_m;
    let mut report = DimReport {
        m,
        d,
        p,
        k,
        s_hausdorff: s,
        t_upper: None,
        kappa_at_t: None,
        gap: None,
        gap_bound,
        residual: None,
        iterations: 0,
        flags: Vec::new(),
    };
    if s <= 0.0 {
        report.flags.push(format!(
            "extinction: p = {p} <= M^-d, the set is almost surely empty and the equation has no root in [0, d]"
        ));
        return Ok(report);
    }
    let h = |delta: f64| delta * terms.ln_m + terms.ln_kappa(s - delta, k);
    let hi = gap_bound.min(s);
    let (delta, iters) = if gap_bound > 0.0 {
        bisect(0.0, hi, h)?
    } else {
        report
            .flags
            .push("boundary death probability underflows; gap is zero in double precision".into());
        (0.0, 0)
    };
    let t = s - delta;
    report.iterations = iters;
    report.t_upper = Some(t);
    report.gap = Some(delta);
    report.kappa_at_t = Some(1.0 - terms.deficit(t, k));
    let log_eq = p.ln() + (d as f64 - t) * terms.ln_m + terms.ln_kappa(t, k);
    report.residual = Some(log_eq.exp_m1());
    if delta > 0.0 && t >= s {
        report
            .flags
            .push("gap below the resolution of s_hausdorff; t_upper rounds to it".into());
    }
    Ok(report)
}

/// Largest `p` with `1 - kappa' >= deficit`; beyond it the gap `s - t`
/// falls below what a double next to `s` can show.
pub fn resolvable_p_max(base: u32, dim: usize, deficit: f64) -> f64 {
    let m = base as f64;
    let interior = ((m - 2.0) / m).powi(dim as i32);
    let boundary = m.powi(dim as i32) - (m - 2.0).powi(dim as i32);
    1.0 - (deficit / interior).powf(1.0 / boundary)
}

/// One row of the epsilon table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    #[serde(rename = "M")]
    pub m: u32,
    pub d: usize,
    pub p_star: f64,
    pub epsilon: f64,
    pub residual: f64,
    pub iterations: u32,
}

/// Root `p*` of `d + log_M p + log_M kappa'(p) = 1` and
/// `epsilon = d - 1 + log_M p*`. Below `p*` the bound `t_upper` already
/// drops under 1; above it `t_upper >= d - 1 + epsilon`.
pub fn solve_epsilon(base: u32, dim: usize) -> Result<EpsilonRow> {
    if base < 3 || dim < 2 {
        return domain(format!(
            "epsilon needs M >= 3 and d >= 2, got M={base}, d={dim}"
        ));
    }
    let ln_m = (base as f64).ln();
    let f = |p: f64| {
        let terms = KappaTerms::new(base, dim, p);
        dim as f64 - 1.0 + (p.ln() + terms.ln_kappa_prime()) / ln_m
    };
    let lo = (base as f64).powi(-(dim as i32)) + 1e-9;
    let (p_star, iterations) = bisect(lo, 1.0 - 1e-9, f)?;
    Ok(EpsilonRow {
        m: base,
        d: dim,
        p_star,
        epsilon: dim as f64 - 1.0 + p_star.ln() / ln_m,
        residual: f(p_star),
        iterations,
    })
}

/// The `(M, d)` pairs of the published table.
pub const EPSILON_TABLE: [(u32, usize); 5] = [(3, 2), (4, 2), (5, 2), (3, 3), (4, 3)];

pub fn epsilon_table() -> Result<Vec<EpsilonRow>> {
    EPSILON_TABLE
        .iter()
        .map(|&(m, d)| solve_epsilon(m, d))
        .collect()
}

/// `(|tilde w|, multiplicity)` over the survivors of level `n`, ascending.
pub fn tilde_length_histogram(ft: &FlaggedTree, n: usize) -> Result<Vec<(u32, u64)>> {
    if n > ft.depth() {
        return precondition(format!("level {n} exceeds depth {}", ft.depth()));
    }
    let mut lens: Vec<u32> = (0..ft.tree().count(n))
        .map(|i| ft.tilde_len(n, i))
        .collect();
    lens.sort_unstable();
    let mut out: Vec<(u32, u64)> = Vec::new();
    for l in lens {
        match out.last_mut() {
            Some((len, c)) if *len == l => *c += 1,
            _ => out.push((l, 1)),
        }
    }
    Ok(out)
}

fn sum_histogram(hist: &[(u32, u64)], s: f64, ln_m: f64) -> f64 {
    hist.iter()
        .map(|&(len, c)| c as f64 * (-s * len as f64 * ln_m).exp())
        .sum()
}

/// `Y^s_n = sum over T_n of M^{-s |tilde i|}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSum {
    pub tree_seed: u64,
    pub s: f64,
    pub n: usize,
    pub value: f64,
    /// Present when `s` is a non-negative integer.
    pub exact: Option<BigRational>,
    pub histogram: Vec<(u32, u64)>,
}

pub fn partition_sum(ft: &FlaggedTree, s: f64, n: usize) -> Result<PartitionSum> {
    if !(s >= 0.0) {
        return domain(format!("partition sums need s >= 0, got {s}"));
    }
    let histogram = tilde_length_histogram(ft, n)?;
    let base = ft.params().base();
    let value = sum_histogram(&histogram, s, (base as f64).ln());
    let exact = (s.fract() == 0.0 && s <= u32::MAX as f64).then(|| {
        let si = s as u32;
        histogram
            .iter()
            .fold(BigRational::zero(), |acc, &(len, c)| {
                let den = num_traits::pow(BigUint::from(base), (si * len) as usize);
                acc + BigRational::new(BigInt::from(c), BigInt::from(den))
            })
    });
    Ok(PartitionSum {
        tree_seed: ft.tree().seed(),
        s,
        n,
        value,
        exact,
        histogram,
    })
}

/// `E[sum over alive children of M^{-s Delta}]` for one node by listing every
/// survival configuration of its `M^d` children.
pub fn level1_oracle(params: &Params, s: f64, k: usize) -> Result<f64> {
    let n = params.alphabet_size();
    if n > ORACLE_MAX_ALPHABET {
        return Err(Error::Capacity {
            what: format!("level-one enumeration over 2^{n} configurations"),
            limit: 1 << ORACLE_MAX_ALPHABET,
        });
    }
    if !(s >= 0.0) {
        return domain(format!("oracle needs s >= 0, got {s}"));
    }
    let p = params.p();
    let b = params.boundary_count();
    let boundary_mask: u32 = (1u32 << b) - 1;
    let weight: Vec<f64> = (0..=n)
        .map(|alive| p.powi(alive as i32) * (1.0 - p).powi((n - alive) as i32))
        .collect();
    let m = params.base() as f64;
    let plain = m.powf(-s);
    let stretched = m.powf(-s * (1 + k) as f64);
    // Neumaier summation; the terms are all positive but span many scales.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for mask in 0u32..(1u32 << n) {
        let alive_b = (mask & boundary_mask).count_ones();
        let alive_i = (mask & !boundary_mask).count_ones();
        let per_child = if alive_b == 0 { stretched } else { plain };
        let term = weight[(alive_b + alive_i) as usize]
            * (alive_b as f64 * plain + alive_i as f64 * per_child);
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    Ok(sum + comp)
}

/// `p M^{d-s} kappa(s,K)`, the one-step mean factor of `Y^s`.
pub fn mean_factor(params: &Params, s: f64, k: usize) -> Result<f64> {
    let m = params.base() as f64;
    Ok(params.p() * m.powf(params.dim() as f64 - s) * kappa(params, s, k)?)
}

/// Resampling estimate of `E(Y^s_{n+1} | T_0..T_n)` for a frozen tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleStat {
    pub s: f64,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub y_n: f64,
    pub mean: f64,
    pub stderr: f64,
    pub theoretical: f64,
    /// `mean / theoretical`.
    pub ratio: f64,
    pub ratio_stderr: f64,
}

impl MartingaleStat {
    /// Distance of the ratio from one in standard errors.
    pub fn z(&self) -> f64 {
        (self.ratio - 1.0) / self.ratio_stderr
    }
}

/// Minimum number of resamples accepted by [`martingale_check`].
pub const MIN_RESAMPLES: usize = 100;

/// Freezes `ft` at its depth `n` and redraws generation `n+1` independently
/// `trials` times. Resample `r` uses a ChaCha stream seeded from
/// `(seed, "resample", r)`; the sums run in trial order, so the result
/// does not depend on the thread count.
pub fn martingale_check(
    ft: &FlaggedTree,
    s: f64,
    trials: usize,
    seed: u64,
) -> Result<MartingaleStat> {
    if trials < MIN_RESAMPLES {
        return precondition(format!(
            "martingale check needs at least {MIN_RESAMPLES} resamples, got {trials}"
        ));
    }
    if !(s >= 0.0) {
        return domain(format!("martingale check needs s >= 0, got {s}"));
    }
    let params = ft.params();
    let n = ft.depth();
    let tree = ft.tree();
    let m = params.base() as f64;
    let k = params.k();
    let alphabet = params.alphabet_size();
    let boundary = params.boundary_count();
    let threshold = survival_threshold(params.p());
    let weights: Vec<f64> = (0..tree.count(n))
        .map(|i| m.powf(-s * ft.tilde_len(n, i) as f64))
        .collect();
    let y_n: f64 = weights.iter().sum();
    let plain = m.powf(-s);
    let stretched = m.powf(-s * (1 + k) as f64);
    let policy = SeedPolicy::new(seed);
    let draws: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.derive("resample", r).master_seed);
            let mut y = 0.0;
            for w in &weights {
                let (mut alive_b, mut alive_i) = (0u32, 0u32);
                for label in 1..=alphabet {
                    if (rng.gen::<u64>() as u128) < threshold {
                        if label <= boundary {
                            alive_b += 1;
                        } else {
                            alive_i += 1;
                        }
                    }
                }
                let inner = if alive_b == 0 { stretched } else { plain };
                y += w * (alive_b as f64 * plain + alive_i as f64 * inner);
            }
            y
        })
        .collect();
    let (mean, stderr) = mean_stderr(&draws);
    let theoretical = mean_factor(params, s, k)? * y_n;
    Ok(MartingaleStat {
        s,
        n,
        trials,
        seed,
        y_n,
        mean,
        stderr,
        theoretical,
        ratio: mean / theoretical,
        ratio_stderr: stderr / theoretical,
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// First downward zero crossing of `slopes` along the increasing `grid`,
/// linearly interpolated.
pub fn zero_crossing(grid: &[f64], slopes: &[f64]) -> Option<f64> {
    grid.windows(2).zip(slopes.windows(2)).find_map(|(g, y)| {
        if y[0] == 0.0 {
            Some(g[0])
        } else if y[0] > 0.0 && y[1] <= 0.0 {
            Some(g[0] + (g[1] - g[0]) * y[0] / (y[0] - y[1]))
        } else {
            None
        }
    })
}

/// Zero-slope exponent: the `s` where `n -> log_y(s, n)` has slope zero.
pub fn zero_slope_exponent(
    ns: &[usize],
    grid: &[f64],
    log_y: impl Fn(f64, usize) -> f64,
) -> Option<f64> {
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slopes: Vec<f64> = grid
        .iter()
        .map(|&s| {
            let ys: Vec<f64> = ns.iter().map(|&n| log_y(s, n)).collect();
            ols_slope(&xs, &ys)
        })
        .collect();
    zero_crossing(grid, &slopes)
}

/// Linear-interpolated sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Minimum number of non-extinct trees for a dimension fit.
pub const MIN_DIM_TREES: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimEstimate {
    pub trees: usize,
    pub n_range: (usize, usize),
    pub grid: Vec<f64>,
    /// Slope of `log_M E[Y^s_n]` in `n` at each grid point.
    pub slopes: Vec<f64>,
    pub s_hat: f64,
    pub t_hat: Option<f64>,
    pub s_ci: (f64, f64),
    pub t_ci: Option<(f64, f64)>,
    pub bootstrap: usize,
    pub seed: u64,
    pub flags: Vec<String>,
}

/// Per-tree tilde length histograms for every `n` of the range.
struct Histograms {
    ns: Vec<usize>,
    /// `[tree][n index]`
    hist: Vec<Vec<Vec<(u32, u64)>>>,
    ln_m: f64,
}

impl Histograms {
    fn log_mean_y(&self, pick: &[usize], s: f64, ni: usize) -> f64 {
        let sum: f64 = pick
            .iter()
            .map(|&t| sum_histogram(&self.hist[t][ni], s, self.ln_m))
            .sum();
        (sum / pick.len() as f64).ln() / self.ln_m
    }

    fn slopes(&self, pick: &[usize], grid: &[f64]) -> Vec<f64> {
        let xs: Vec<f64> = self.ns.iter().map(|&n| n as f64).collect();
        grid.iter()
            .map(|&s| {
                let ys: Vec<f64> = (0..self.ns.len())
                    .map(|ni| self.log_mean_y(pick, s, ni))
                    .collect();
                ols_slope(&xs, &ys)
            })
            .collect()
    }

    fn s_hat(&self, pick: &[usize]) -> f64 {
        self.slopes(pick, &[0.0])[0]
    }
}

fn widened_grid(grid: &[f64], dim: usize) -> Vec<f64> {
    let mut g: Vec<f64> = grid.to_vec();
    g.extend((0..=100).map(|i| dim as f64 * i as f64 / 100.0));
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Fits `s_hat` (box-count slope of the set) and `t_hat` (zero-slope
/// exponent of the image cover) from a sample of non-extinct trees, with
/// percentile bootstrap intervals over trees.
pub fn estimate_dims(
    trees: &[FlaggedTree],
    grid: &[f64],
    n_range: RangeInclusive<usize>,
    bootstrap: usize,
    seed: u64,
) -> Result<DimEstimate> {
    let alive: Vec<&FlaggedTree> = trees.iter().filter(|t| !t.tree().is_extinct()).collect();
    if alive.is_empty() {
        return precondition("every tree is extinct");
    }
    if alive.len() < MIN_DIM_TREES {
        return precondition(format!(
            "dimension fits need at least {MIN_DIM_TREES} non-extinct trees, got {}",
            alive.len()
        ));
    }
    let ns: Vec<usize> = n_range.clone().collect();
    if ns.len() < 3 {
        return precondition("dimension fits need at least 3 levels");
    }
    let min_depth = alive.iter().map(|t| t.depth()).min().unwrap_or(0);
    if *n_range.end() > min_depth {
        return precondition(format!(
            "level range ends at {} but a tree has depth {min_depth}",
            n_range.end()
        ));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return domain("s-grid must be strictly increasing with at least two points");
    }
    let params = alive[0].params();
    let hist = alive
        .par_iter()
        .map(|t| ns.iter().map(|&n| tilde_length_histogram(t, n)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let h = Histograms {
        ns,
        hist,
        ln_m: (params.base() as f64).ln(),
    };
    let all: Vec<usize> = (0..alive.len()).collect();
    let mut flags = Vec::new();
    let mut grid = grid.to_vec();
    let mut slopes = h.slopes(&all, &grid);
    let mut t_hat = zero_crossing(&grid, &slopes);
    if t_hat.is_none() {
        grid = widened_grid(&grid, params.dim());
        slopes = h.slopes(&all, &grid);
        t_hat = zero_crossing(&grid, &slopes);
        flags.push(if t_hat.is_some() {
            "no zero crossing on the requested grid; widened to [0, d]".into()
        } else {
            "no zero crossing even on the widened grid".into()
        });
    }
    let s_hat = h.s_hat(&all);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec<usize>> = (0..bootstrap)
        .map(|_| {
            (0..alive.len())
                .map(|_| rng.gen_range(0..alive.len()))
                .collect()
        })
        .collect();
    let boot: Vec<(f64, Option<f64>)> = picks
        .par_iter()
        .map(|pick| (h.s_hat(pick), zero_crossing(&grid, &h.slopes(pick, &grid))))
        .collect();
    let ci = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.975))
    };
    let s_ci = if bootstrap > 0 {
        ci(boot.iter().map(|b| b.0).collect())
    } else {
        (f64::NAN, f64::NAN)
    };
    let t_boot: Vec<f64> = boot.iter().filter_map(|b| b.1).collect();
    if t_boot.len() < boot.len() {
        flags.push(format!(
            "{} bootstrap replicates had no zero crossing",
            boot.len() - t_boot.len()
        ));
    }
    let t_ci = (!t_boot.is_empty()).then(|| ci(t_boot));
    Ok(DimEstimate {
        trees: alive.len(),
        n_range: (*n_range.start(), *n_range.end()),
        grid,
        slopes,
        s_hat,
        t_hat,
        s_ci,
        t_ci,
        bootstrap,
        seed,
        flags,
    })
}

/// Distortion statistics of `f` on triples of level-`n` corners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QsScan {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    /// Triples with `z = x`, skipped.
    pub degenerate: usize,
    /// Triples with `y = x` (both ratios zero).
    pub coincident: usize,
    /// `max r_out / max(r_in, r_in^{K+1})`.
    pub c_emp: f64,
    /// Quantiles 0.5, 0.9, 0.99 of the same quotient.
    pub quotient_quantiles: [f64; 3],
    pub comparability_min: f64,
    pub comparability_max: f64,
    /// `(r_in, r_out)` per non-degenerate triple.
    #[serde(skip)]
    pub samples: Vec<(f64, f64)>,
}

/// `max(r, r^{K+1})`.
pub fn control(r: f64, k: usize) -> f64 {
    r.max(r.powi(k as i32 + 1))
}

/// Index range of the level-`n` descendants of node `idx` of `level`.
pub fn descendants(tree: &PercTree, level: usize, idx: usize, n: usize) -> std::ops::Range<usize> {
    let mut range = idx..idx + 1;
    for k in level..n {
        if range.is_empty() {
            return 0..0;
        }
        range = tree.children(k, range.start).start..tree.children(k, range.end - 1).end;
    }
    range
}

fn ancestor(tree: &PercTree, n: usize, mut idx: usize, level: usize) -> usize {
    for k in (level + 1..=n).rev() {
        idx = tree.parent(k, idx);
    }
    idx
}

/// Samples `trials` triples of level-`n` corners: `x` uniform, `y` and `z`
/// uniform among the level-`n` descendants of `x|l` for a uniform
/// `l in 0..n` each, so that all scales are represented.
pub fn qs_ratio_scan(ft: &FlaggedTree, trials: usize, n: usize, seed: u64) -> Result<QsScan> {
    if n == 0 || n > ft.depth() {
        return precondition(format!("scan level must be in 1..={}", ft.depth()));
    }
    let tree = ft.tree();
    let count = tree.count(n);
    if count < 3 {
        return precondition(format!(
            "need at least 3 survivors at level {n}, found {count}"
        ));
    }
    let params = ft.params();
    let k = params.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let near = |rng: &mut ChaCha8Rng, x: usize| {
        let l = rng.gen_range(0..n);
        let r = descendants(tree, l, ancestor(tree, n, x, l), n);
        rng.gen_range(r)
    };
    let triples: Vec<(usize, usize, usize)> = (0..trials)
        .map(|_| {
            let x = rng.gen_range(0..count);
            let y = near(&mut rng, x);
            let z = near(&mut rng, x);
            (x, y, z)
        })
        .collect();
    let degenerate = triples.iter().filter(|t| t.2 == t.0).count();
    let coincident = triples.iter().filter(|t| t.1 == t.0 && t.2 != t.0).count();

    struct Eval {
        r_in: f64,
        r_out: f64,
        comparability: Option<f64>,
    }
    let evals = triples
        .par_iter()
        .filter(|t| t.2 != t.0)
        .map(|&(x, y, z)| -> Result<Eval> {
            let (wx, wy, wz) = (tree.word(n, x), tree.word(n, y), tree.word(n, z));
            let px = pi_finite(params, &wx)?;
            let fx = ft.f_point(&wx)?;
            let dxz = dist_max(&px, &pi_finite(params, &wz)?).to_f64();
            let fdxz = dist_max(&fx, &ft.f_point(&wz)?).to_f64();
            if y == x {
                return Ok(Eval {
                    r_in: 0.0,
                    r_out: 0.0,
                    comparability: None,
                });
            }
            let dxy = dist_max(&px, &pi_finite(params, &wy)?).to_f64();
            let fdxy = dist_max(&fx, &ft.f_point(&wy)?).to_f64();
            let comparability = num_traits::ToPrimitive::to_f64(&ft.comparability_ratio(&wx, &wy)?);
            Ok(Eval {
                r_in: dxy / dxz,
                r_out: fdxy / fdxz,
                comparability,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut quotients: Vec<f64> = evals
        .iter()
        .filter(|e| e.r_in > 0.0)
        .map(|e| e.r_out / control(e.r_in, k))
        .collect();
    quotients.sort_by(f64::total_cmp);
    let c_emp = quotients.last().copied().unwrap_or(0.0);
    let comp: Vec<f64> = evals.iter().filter_map(|e| e.comparability).collect();
    Ok(QsScan {
        n,
        trials,
        seed,
        degenerate,
        coincident,
        c_emp,
        quotient_quantiles: [0.5, 0.9, 0.99].map(|q| quantile_sorted(&quotients, q)),
        comparability_min: comp.iter().copied().fold(f64::INFINITY, f64::min),
        comparability_max: comp.iter().copied().fold(0.0, f64::max),
        samples: evals.iter().map(|e| (e.r_in, e.r_out)).collect(),
    })
}
