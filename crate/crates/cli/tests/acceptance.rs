//! Acceptance gate: ten criteria, one PASS/FAIL line each. Exits non-zero
//! when any criterion fails.

use std::fs;
use std::time::{Duration, Instant};

use percoqs_cli::commands::{qs_experiment, sample_trials};
use percoqs_core::analysis::{
    estimate_dims, hausdorff_dim, kappa, level1_oracle, martingale_check, mean_stderr,
    resolvable_p_max, solve_epsilon, solve_t,
};
use percoqs_core::globalmap::GeomConfig;
use percoqs_core::percolation::{sample_nonextinct, sample_tree, SampleOptions};
use percoqs_core::substitution::FlaggedTree;
use percoqs_core::verify;
use percoqs_core::Params;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Verdict);

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

/// epsilon(M, d) against the published table, within 1e-5.
fn c1_epsilon_table() -> Verdict {
    let start = Instant::now();
    let table = [
        (3, 2, 0.00389),
        (4, 2, 0.00556),
        (5, 2, 0.00608),
        (3, 3, 0.00157),
        (4, 3, 0.00240),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (m, d, expected) in table {
        let row = solve_epsilon(m, d).map_err(err)?;
        worst = worst.max((row.epsilon - expected).abs());
        parts.push(format!("e({m},{d})={:.5}", row.epsilon));
    }
    let t = start.elapsed();
    Ok((
        worst <= 1e-5 && within(t, 1.0),
        format!("{}; max deviation {worst:.1e}; {t:.2?}", parts.join(" ")),
    ))
}

/// Exact enumeration of one generation against p M^{d-s} kappa(s,K).
fn c2_oracle() -> Verdict {
    let mut worst = 0.0f64;
    let mut times = Vec::new();
    let mut ok_time = true;
    for (m, d, limit) in [(3u32, 2usize, 10.0), (4, 2, 300.0)] {
        let start = Instant::now();
        for p in [0.3, 0.5, 0.7] {
            for k in 1..=2 {
                let params = Params::with_default_eta(d, m, p, k).map_err(err)?;
                for j in 1..=8 {
                    let s = 0.25 * j as f64;
                    let o = level1_oracle(&params, s, k).map_err(err)?;
                    // closed form written out here rather than reused
                    let mf = m as f64;
                    let interior = ((mf - 2.0) / mf).powi(d as i32);
                    let boundary = mf.powi(d as i32) - (mf - 2.0).powi(d as i32);
                    let kap =
                        1.0 - interior * (1.0 - mf.powf(-s * k as f64)) * (1.0 - p).powf(boundary);
                    let closed = p * mf.powf(d as f64 - s) * kap;
                    worst = worst.max((o - closed).abs());
                }
            }
        }
        let t = start.elapsed();
        ok_time &= within(t, limit);
        times.push(format!("M^d={}: {t:.2?}", m.pow(d as u32)));
    }
    Ok((
        worst <= 1e-12 && ok_time,
        format!(
            "96 grid points, max residual {worst:.1e}; {}",
            times.join(", ")
        ),
    ))
}

/// Solver soundness on 50 random parameter sets.
fn c3_solver() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_res, mut failures) = (0.0f64, Vec::new());
    for _ in 0..50 {
        let m: u32 = rng.gen_range(3..=6);
        let d: usize = rng.gen_range(1..=3);
        let k: usize = rng.gen_range(1..=4);
        let crit = (m as f64).powi(-(d as i32));
        // beyond this p the gap s - t is below double resolution next to s
        let hi = resolvable_p_max(m, d, 1e-9);
        let p = rng.gen_range(crit * 1.001..hi);
        let params = Params::with_default_eta(d, m, p, k).map_err(err)?;
        let r = solve_t(&params, k).map_err(err)?;
        let Some(t) = r.t_upper else {
            failures.push(format!("no root for M={m} d={d} p={p}"));
            continue;
        };
        let mf = m as f64;
        let ln_m = mf.ln();
        let interior = ((mf - 2.0) / mf).powi(d as i32);
        let boundary = mf.powi(d as i32) - (mf - 2.0).powi(d as i32);
        let death = (1.0 - p).powf(boundary);
        let kap_t = 1.0 - interior * (1.0 - mf.powf(-t * k as f64)) * death;
        let residual = p * mf.powf(d as f64 - t) * kap_t - 1.0;
        let s = d as f64 + p.ln() / ln_m;
        // t >= d + log_M p + log_M kappa', i.e. s - t <= -log_M kappa'
        let max_gap = -(-interior * death).ln_1p() / ln_m;
        worst_res = worst_res.max(residual.abs());
        if !(residual.abs() <= 1e-12 && t > 0.0 && t < s && s - t <= max_gap) {
            failures.push(format!(
                "M={m} d={d} p={p} K={k}: t={t} s={s} res={residual:e}"
            ));
        }
    }
    let t = start.elapsed();
    Ok((
        failures.is_empty() && within(t, 5.0),
        if failures.is_empty() {
            format!("50 parameter sets, max residual {worst_res:.1e}; {t:.2?}")
        } else {
            failures.join("; ")
        },
    ))
}

/// Mean survivor counts over 2000 unconditioned trees against (p M^d)^n.
fn c4_branching_mean() -> Verdict {
    let start = Instant::now();
    let params = Params::with_default_eta(2, 3, 0.7, 1).map_err(err)?;
    let counts: Vec<Vec<usize>> = (0..2000u64)
        .map(|s| sample_tree(&params, 5, s).map(|t| t.counts()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 1..=5 {
        let xs: Vec<f64> = counts.iter().map(|c| c[n] as f64).collect();
        let (mean, se) = mean_stderr(&xs);
        let expect = 6.3f64.powi(n as i32);
        let z = (mean - expect) / se;
        ok &= z.abs() <= 3.0;
        parts.push(format!("n={n}: z={z:+.2}"));
    }
    let t = start.elapsed();
    Ok((
        ok && within(t, 60.0),
        format!("{}; {t:.2?}", parts.join(" ")),
    ))
}

/// Resampled conditional mean of Y^t_{n+1} / Y^t_n at s = t_upper.
fn c5_martingale() -> Verdict {
    let start = Instant::now();
    let params = Params::with_default_eta(2, 3, 0.7, 1).map_err(err)?;
    let t = solve_t(&params, 1)
        .map_err(err)?
        .t_upper
        .ok_or("no t_upper")?;
    let tree = sample_nonextinct(&params, 4, 7).map_err(err)?.tree;
    let ft = FlaggedTree::new(tree).map_err(err)?;
    let st = martingale_check(&ft, t, 10_000, 99).map_err(err)?;
    let factor = params.p() * 3f64.powf(2.0 - t) * kappa(&params, t, 1).map_err(err)?;
    let ratio = st.mean / st.y_n;
    let se = st.stderr / st.y_n;
    let elapsed = start.elapsed();
    Ok((
        (factor - 1.0).abs() <= 1e-12 && (ratio - 1.0).abs() <= 3.0 * se && within(elapsed, 120.0),
        format!(
            "ratio {ratio:.5} +- {se:.5} (z={:+.2}), one-step factor {factor:.15}; {elapsed:.2?}",
            (ratio - 1.0) / se
        ),
    ))
}

/// Dimension estimates from 200 non-extinct trees of depth 6.
fn c6_dimension_drop() -> Verdict {
    let start = Instant::now();
    let params = Params::with_default_eta(2, 3, 0.7, 1).map_err(err)?;
    let opts = SampleOptions::default();
    let (trees, _) = sample_trials(&params, &opts, 6, 200, 6).map_err(err)?;
    let grid: Vec<f64> = (0..=100).map(|i| 1.4 + 0.005 * i as f64).collect();
    let est = estimate_dims(&trees, &grid, 3..=6, 200, 6).map_err(err)?;
    let t_up = solve_t(&params, 1)
        .map_err(err)?
        .t_upper
        .ok_or("no t_upper")?;
    let t_hat = est.t_hat.ok_or("no zero crossing")?;
    let s_hat = est.s_hat;
    let elapsed = start.elapsed();
    Ok((
        (s_hat - 1.675).abs() <= 0.05
            && t_hat < s_hat
            && (t_hat - t_up).abs() <= 0.05
            && within(elapsed, 600.0),
        format!(
            "s_hat={s_hat:.5} t_hat={t_hat:.5} (s_hat-t_hat={:.2e}) t_upper={t_up:.5} (s_hausdorff={:.5}); {elapsed:.2?}",
            s_hat - t_hat,
            hausdorff_dim(&params)
        ),
    ))
}

/// Quasisymmetry scan over 20 trees at depths 8 and 5.
fn c7_quasisymmetry() -> Verdict {
    let start = Instant::now();
    let params = Params::with_default_eta(2, 3, 0.7, 1).map_err(err)?;
    let out =
        qs_experiment(&params, &SampleOptions::default(), 7, 20, 8, 5, 10_000).map_err(err)?;
    let bound = 3f64.powi(1 + 3);
    let elapsed = start.elapsed();
    Ok((
        out.skipped_trees == 0
            && out.control_violations == 0
            && out.c_deep <= bound
            && out.c_deep <= 1.5 * out.c_base
            && within(elapsed, 300.0),
        format!(
            "C_emp(8)={:.4} C_emp(5)={:.4} bound {bound}; violations {}; comparability [{:.4}, {:.4}]; {elapsed:.2?}",
            out.c_deep, out.c_base, out.control_violations, out.comparability.0, out.comparability.1
        ),
    ))
}

/// Injectivity, splitting identity and the shared-face bound, exactly.
fn c8_structure() -> Verdict {
    let start = Instant::now();
    let inj = Params::with_default_eta(2, 3, 0.5, 1).map_err(err)?;
    let mut words = 0;
    for seed in 0..50 {
        let ft = FlaggedTree::new(sample_tree(&inj, 8, seed).map_err(err)?).map_err(err)?;
        words += verify::check_injectivity(&ft).map_err(err)?;
    }
    let split = Params::with_default_eta(2, 3, 0.6, 2).map_err(err)?;
    let mut identities = 0;
    for seed in 0..10 {
        let ft = FlaggedTree::new(sample_nonextinct(&split, 6, seed * 101).map_err(err)?.tree)
            .map_err(err)?;
        identities += verify::check_splitting(&ft, 3).map_err(err)?;
    }
    let faces = Params::with_default_eta(2, 3, 0.6, 1).map_err(err)?;
    let (mut pairs, mut worst) = (0, 0.0f64);
    for seed in 0..20 {
        let ft = FlaggedTree::new(sample_nonextinct(&faces, 6, seed * 17).map_err(err)?.tree)
            .map_err(err)?;
        let s = verify::check_shared_faces(&ft, 2).map_err(err)?;
        pairs += s.pairs;
        worst = worst.max(s.worst);
    }
    let elapsed = start.elapsed();
    Ok((
        pairs > 0 && worst <= 1.0 && within(elapsed, 120.0),
        format!(
            "{words} tilde words distinct; {identities} splitting identities; {pairs} face pairs, worst {worst:.4}; {elapsed:.2?}"
        ),
    ))
}

/// Global map: boundary, branch agreement, bi-Lipschitz bracket, corners.
fn c9_global_map() -> Verdict {
    let start = Instant::now();
    let params = Params::with_default_eta(2, 3, 0.5, 1).map_err(err)?;
    let cfg = GeomConfig::new(&params).map_err(err)?;
    let (mut boundary, mut corner) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let ft = FlaggedTree::new(sample_nonextinct(&params, 5, seed * 13).map_err(err)?.tree)
            .map_err(err)?;
        let (dg, df) = verify::boundary_displacement(&ft, &cfg, 10_000, 5, seed).map_err(err)?;
        boundary = boundary.max(dg).max(df);
        if seed < 10 {
            for n in 1..=5 {
                corner = corner.max(verify::corner_agreement(&ft, &cfg, n).map_err(err)?.0);
            }
        }
    }
    let branch = verify::branch_disagreement(&cfg, 100_000, 1);
    let (lo, hi) = verify::lipschitz_bracket(&cfg, 100_000, 2).map_err(err)?;
    let cap = 3f64.powi(1 + 2);
    let elapsed = start.elapsed();
    Ok((
        boundary == 0.0
            && branch <= 1e-12
            && lo > 0.0
            && hi / lo <= cap
            && corner <= 1e-9
            && within(elapsed, 120.0),
        format!(
            "boundary {boundary:e}; branches {branch:.1e}; Lipschitz [{lo:.4}, {hi:.4}] C/c={:.3} <= {cap}; corners {corner:.1e}; {elapsed:.2?}",
            hi / lo
        ),
    ))
}

/// Byte-identical tree and report files for 1, 4 and 16 workers.
fn c10_determinism() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let jobs: [&[&str]; 5] = [
        &["sample", "--depth", "6", "--seed", "42"],
        &["check", "martingale", "--depth", "4", "--trials", "500"],
        &[
            "check",
            "dims",
            "--depth",
            "4",
            "--trials",
            "30",
            "--bootstrap",
            "20",
            "--grid",
            "1:2:0.01",
        ],
        &[
            "check",
            "qs",
            "--depth",
            "5",
            "--baseline",
            "3",
            "--trees",
            "2",
            "--trials",
            "300",
        ],
        &[
            "check", "global", "--depth", "3", "--trials", "2000", "--grid", "50",
        ],
    ];
    let mut compared = 0;
    for (j, job) in jobs.iter().enumerate() {
        let mut outputs = Vec::new();
        for workers in ["1", "4", "16"] {
            let out = dir.path().join(format!("job{j}_{workers}.json"));
            let csv = dir.path().join(format!("job{j}_{workers}.csv"));
            let mut argv: Vec<String> = vec!["percoqs".into()];
            argv.extend(job.iter().map(|s| s.to_string()));
            argv.extend([
                "--workers".into(),
                workers.into(),
                "--quiet".into(),
                "-o".into(),
                out.display().to_string(),
                "--csv".into(),
                csv.display().to_string(),
            ]);
            let code = percoqs_cli::run(&argv);
            if code != 0 {
                return Err(format!("{} exited with {code}", job.join(" ")));
            }
            let mut bytes = fs::read(&out).map_err(err)?;
            if let Ok(extra) = fs::read(&csv) {
                bytes.extend(extra);
            }
            outputs.push(bytes);
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            return Ok((false, format!("outputs differ for `{}`", job.join(" "))));
        }
        compared += 1;
    }
    let elapsed = start.elapsed();
    Ok((
        true,
        format!("{compared} commands byte-identical across workers 1/4/16; {elapsed:.2?}"),
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("epsilon table", c1_epsilon_table),
        ("closed form vs enumeration", c2_oracle),
        ("solver soundness", c3_solver),
        ("branching mean", c4_branching_mean),
        ("martingale property", c5_martingale),
        ("dimension drop", c6_dimension_drop),
        ("quasisymmetry scan", c7_quasisymmetry),
        ("structural invariants", c8_structure),
        ("global map", c9_global_map),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (pass, detail) = match run() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{:>2}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" },
            i + 1
        );
    }
    println!(
        "acceptance: {}/{} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
