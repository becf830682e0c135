//! Distributional checks against independent closed forms.

use percoqs_core::analysis::{kappa, level1_oracle, mean_stderr, partition_sum};
use percoqs_core::percolation::{sample_tree, subtree};
use percoqs_core::substitution::FlaggedTree;
use percoqs_core::Params;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

fn params(m: u32, d: usize, p: f64) -> Params {
    Params::with_default_eta(d, m, p, 1).unwrap()
}

#[test]
fn subtree_offspring_is_binomial() {
    // The subtree below the first surviving level-1 node is a fresh
    // process, so its root has Binomial(M^d, p) children.
    let pr = params(3, 1, 0.6);
    let mut observed = [0u64; 4];
    for seed in 0..5000 {
        let t = sample_tree(&pr, 2, seed).unwrap();
        if t.count(1) == 0 {
            continue;
        }
        let sub = subtree(&t, &t.word(1, 0)).unwrap();
        observed[sub.count(1)] += 1;
    }
    let total: u64 = observed.iter().sum();
    let law = Binomial::new(0.6, 3).unwrap();
    let chi2: f64 = (0..4)
        .map(|k| {
            let e = total as f64 * law.pmf(k as u64);
            (observed[k] as f64 - e).powi(2) / e
        })
        .sum();
    let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(0.999);
    assert!(chi2 < crit, "chi2 = {chi2}, observed {observed:?}");
}

#[test]
fn branching_mean() {
    let pr = params(3, 2, 0.7);
    let trees: Vec<_> = (0..600).map(|s| sample_tree(&pr, 4, s).unwrap()).collect();
    for n in 1..=4 {
        let counts: Vec<f64> = trees.iter().map(|t| t.count(n) as f64).collect();
        let (mean, se) = mean_stderr(&counts);
        let expect = 6.3f64.powi(n as i32);
        assert!(
            (mean - expect).abs() <= 3.0 * se,
            "n={n}: {mean} vs {expect} (se {se})"
        );
    }
}

#[test]
fn survival_to_depth_matches_recursion() {
    // q_{k+1} = 1 - (1 - p q_k)^{M^d}, q_0 = 1
    let (m, d, p) = (3u32, 1usize, 0.5);
    let pr = params(m, d, p);
    let depth = 6;
    let mut q = 1.0f64;
    for _ in 0..depth {
        q = 1.0 - (1.0 - p * q).powi((m as i32).pow(d as u32));
    }
    let alive: Vec<f64> = (0..4000)
        .map(|s| (!sample_tree(&pr, depth, s).unwrap().is_extinct()) as u8 as f64)
        .collect();
    let (mean, se) = mean_stderr(&alive);
    assert!((mean - q).abs() <= 3.0 * se, "{mean} vs {q} (se {se})");
}

#[test]
fn partition_sum_expectation() {
    for &(m, d, p) in &[(3u32, 2usize, 0.6), (3, 1, 0.6)] {
        let pr = params(m, d, p);
        let trees: Vec<FlaggedTree> = (0..2000)
            .map(|s| FlaggedTree::new(sample_tree(&pr, 5, s).unwrap()).unwrap())
            .collect();
        for s in [0.5, 1.0, 1.5] {
            let factor = p * (m as f64).powf(d as f64 - s) * kappa(&pr, s, 1).unwrap();
            for n in 1..=5 {
                let ys: Vec<f64> = trees
                    .iter()
                    .map(|t| partition_sum(t, s, n).unwrap().value)
                    .collect();
                let (mean, se) = mean_stderr(&ys);
                let expect = factor.powi(n as i32);
                assert!(
                    (mean - expect).abs() <= 3.0 * se,
                    "M={m} d={d} s={s} n={n}: {mean} vs {expect} (se {se})"
                );
            }
        }
    }
}

#[test]
fn oracle_identity_grid() {
    for &(m, d) in &[(3u32, 2usize), (4, 2)] {
        for &p in &[0.3, 0.5, 0.7] {
            for k in 1..=2 {
                let pr = Params::with_default_eta(d, m, p, k).unwrap();
                for j in 1..=8 {
                    let s = 0.25 * j as f64;
                    let closed = p * (m as f64).powf(d as f64 - s) * kappa(&pr, s, k).unwrap();
                    let o = level1_oracle(&pr, s, k).unwrap();
                    assert!((o - closed).abs() <= 1e-12, "{m} {d} {p} {k} {s}");
                }
            }
        }
    }
}
