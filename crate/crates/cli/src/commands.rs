use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use percoqs_core::analysis::{
    self, control, estimate_dims, kappa, kappa_prime, level1_oracle, martingale_check, mean_factor,
    qs_ratio_scan, solve_t, SOLVER_TOL,
};
use percoqs_core::globalmap::{f_global, GeomConfig};
use percoqs_core::lattice::pi_finite;
use percoqs_core::percolation::{
    sample_nonextinct_with, sample_tree_with, PercTree, SampleOptions, SeedPolicy,
    DEFAULT_REJECTION_BUDGET,
};
use percoqs_core::report::{Report, SeriesRow, SERIES_HEADER};
use percoqs_core::substitution::FlaggedTree;
use percoqs_core::verify;
use percoqs_core::{Error as CoreError, Label, Params, Word};
use serde_json::{json, Map, Value};

use crate::args::{CheckWhat, Command, Common, ExportWhat, SolveWhat};
use crate::error::{usage, CliError, CliResult};
use crate::svg;

pub fn dispatch(common: &Common, command: &Command) -> CliResult<()> {
    let opts = SampleOptions::from_env()?.with_workers(common.workers);
    opts.install(|| match command {
        Command::Sample { nonextinct } => cmd_sample(common, &opts, *nonextinct),
        Command::Render {
            tree,
            levels,
            image,
            size,
        } => cmd_render(
            common,
            &opts,
            tree.as_deref(),
            levels.as_deref(),
            *image,
            *size,
        ),
        Command::Solve { what } => cmd_solve(common, what),
        Command::Check { what } => cmd_check(common, &opts, what),
        Command::Export { what } => cmd_export(common, &opts, what),
    })
}

pub fn parse_word(s: &str) -> CliResult<Word> {
    s.split('.')
        .map(|t| {
            t.trim()
                .parse::<Label>()
                .map_err(|_| CliError::Usage(format!("bad label {t:?} in word {s:?}")))
        })
        .collect::<CliResult<Vec<_>>>()
        .map(Word::new)
}

pub fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad number {t:?}")))
        })
        .collect()
}

fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts = s
        .split(':')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("grid {s:?} is not lo:hi:step")))?;
    let [lo, hi, step] = parts[..] else {
        return usage(format!("grid {s:?} is not lo:hi:step"));
    };
    if !(step > 0.0 && hi > lo) {
        return usage(format!("grid {s:?} must have lo < hi and step > 0"));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

pub fn params_from(common: &Common) -> CliResult<Params> {
    Ok(match &common.eta {
        Some(e) => {
            let w = parse_word(e)?;
            if let Some(k) = common.k {
                if k != w.len() {
                    return usage(format!(
                        "--K {k} disagrees with --eta of length {}",
                        w.len()
                    ));
                }
            }
            Params::new(common.d, common.m, common.p, w)?
        }
        None => Params::with_default_eta(common.d, common.m, common.p, common.k.unwrap_or(1))?,
    })
}

/// Resolved configuration embedded in every output. Worker count and file
/// paths are left out so that they cannot change the bytes.
fn config_json(params: &Params, seed: u64, extra: Value) -> Value {
    let mut map = Map::new();
    map.insert("M".into(), json!(params.base()));
    map.insert("d".into(), json!(params.dim()));
    map.insert("p".into(), json!(params.p()));
    map.insert("K".into(), json!(params.k()));
    map.insert("eta".into(), json!(params.eta().to_string()));
    map.insert("seed".into(), json!(seed));
    if let Value::Object(extra) = extra {
        map.extend(extra);
    }
    Value::Object(map)
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

fn read_tree(path: &Path) -> CliResult<PercTree> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(PercTree::from_json_bytes(&bytes)?)
}

fn write_series(path: &Path, rows: &[SeriesRow]) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    w.write_record(SERIES_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn row(quantity: &str, s: Option<f64>, n: Option<usize>, value: f64) -> SeriesRow {
    SeriesRow {
        quantity: quantity.into(),
        s,
        n,
        value,
        stderr: None,
        seed_count: 1,
    }
}

/// Writes the report (and series), echoes the verdicts on stderr and turns
/// failed checks into exit code 4.
fn finish(common: &Common, report: &Report, series: &[SeriesRow]) -> CliResult<()> {
    write_out(common.out.as_deref(), &report.to_json_bytes()?)?;
    if let Some(path) = &common.csv {
        write_series(path, series)?;
    }
    for c in report.checks.iter().filter(|_| !common.quiet) {
        eprintln!(
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed: Vec<String> = report.failures().map(|c| c.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(failed))
    }
}

/// Tree from `--tree`, or a non-extinct sample from the flags.
fn obtain_tree(
    common: &Common,
    opts: &SampleOptions,
    path: Option<&Path>,
    default_depth: usize,
) -> CliResult<(PercTree, Value)> {
    match path {
        Some(p) => {
            let tree = read_tree(p)?;
            let info = json!({
                "source": "file",
                "tree_seed": tree.seed(),
                "depth": tree.depth(),
            });
            Ok((tree, info))
        }
        None => {
            let params = params_from(common)?;
            let depth = common.depth.unwrap_or(default_depth);
            let c = sample_nonextinct_with(
                &params,
                depth,
                common.seed,
                opts,
                DEFAULT_REJECTION_BUDGET,
            )?;
            let info = json!({
                "source": "sampled",
                "tree_seed": c.tree.seed(),
                "depth": depth,
                "rejections": c.rejections,
            });
            Ok((c.tree, info))
        }
    }
}

/// Seed of the `i`-th tree of a multi-tree experiment.
pub fn trial_seed(master: u64, i: u64) -> u64 {
    SeedPolicy::new(master).derive("tree", i).master_seed
}

fn cmd_sample(common: &Common, opts: &SampleOptions, nonextinct: bool) -> CliResult<()> {
    let params = params_from(common)?;
    let depth = common.depth.unwrap_or(5);
    let tree = if nonextinct {
        sample_nonextinct_with(&params, depth, common.seed, opts, DEFAULT_REJECTION_BUDGET)?.tree
    } else {
        sample_tree_with(&params, depth, common.seed, opts)?
    };
    write_out(common.out.as_deref(), &tree.to_json_bytes())?;
    for (lv, c) in tree.counts().iter().enumerate().filter(|_| !common.quiet) {
        if common.out.is_some() {
            println!("level {lv}: {c}");
        } else {
            eprintln!("level {lv}: {c}");
        }
    }
    Ok(())
}

fn cmd_render(
    common: &Common,
    opts: &SampleOptions,
    path: Option<&Path>,
    levels: Option<&str>,
    image: bool,
    size: u32,
) -> CliResult<()> {
    let tree = match path {
        Some(p) => read_tree(p)?,
        None => sample_tree_with(
            &params_from(common)?,
            common.depth.unwrap_or(3),
            common.seed,
            opts,
        )?,
    };
    if tree.params().dim() != 2 {
        return usage(format!(
            "render supports d = 2 only, tree has d = {}",
            tree.params().dim()
        ));
    }
    let levels: Vec<usize> = match levels {
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad level {t:?}")))
            })
            .collect::<CliResult<_>>()?,
        None => (1..=tree.depth().min(3)).collect(),
    };
    if let Some(&bad) = levels.iter().find(|&&l| l > tree.depth()) {
        return usage(format!("level {bad} exceeds depth {}", tree.depth()));
    }
    let panels = if image {
        if tree.depth() == 0 {
            return usage("image mode needs depth >= 1");
        }
        let ft = FlaggedTree::new(tree)?;
        svg::image_panels(&ft, &levels)?
    } else {
        svg::survivor_panels(&tree, &levels)
    };
    write_out(
        common.out.as_deref(),
        svg::document(&panels, size).as_bytes(),
    )
}

fn cmd_solve(common: &Common, what: &SolveWhat) -> CliResult<()> {
    match what {
        SolveWhat::T => {
            let params = params_from(common)?;
            let r = solve_t(&params, params.k())?;
            let mut report = Report::new(
                "solve t",
                config_json(&params, common.seed, json!({})),
                common.seed,
            )
            .with_results(serde_json::to_value(&r).map_err(CoreError::from)?);
            report.check("root in [0, d]", r.t_upper.is_some(), r.flags.join("; "));
            if let (Some(t), Some(gap), Some(res)) = (r.t_upper, r.gap, r.residual) {
                report.check(
                    "residual <= 1e-12",
                    res.abs() <= SOLVER_TOL,
                    format!("{res:e}"),
                );
                report.check(
                    "0 < t_upper < s_hausdorff",
                    t > 0.0 && gap > 0.0 && t <= r.s_hausdorff,
                    format!("t = {t}, s = {}, gap = {gap:e}", r.s_hausdorff),
                );
                report.check(
                    "t_upper >= d + log_M p + log_M kappa'",
                    gap <= r.gap_bound,
                    format!("gap {gap:e} <= {:e}", r.gap_bound),
                );
            }
            let mut series = vec![row("s_hausdorff", None, None, r.s_hausdorff)];
            if let (Some(t), Some(g)) = (r.t_upper, r.gap) {
                series.push(row("t_upper", None, None, t));
                series.push(row("gap", None, None, g));
            }
            finish(common, &report, &series)
        }
        SolveWhat::EpsilonTable => {
            let rows = analysis::epsilon_table()?;
            let mut report = Report::new(
                "solve epsilon-table",
                json!({ "table": analysis::EPSILON_TABLE }),
                common.seed,
            )
            .with_results(serde_json::to_value(&rows).map_err(CoreError::from)?);
            for r in &rows {
                report.check(
                    format!("epsilon({},{}) residual <= 1e-12", r.m, r.d),
                    r.residual.abs() <= SOLVER_TOL,
                    format!("epsilon = {:.5}, p* = {}", r.epsilon, r.p_star),
                );
            }
            if common.out.is_some() {
                for r in &rows {
                    println!(
                        "M={} d={} epsilon={:.5} p*={:.6}",
                        r.m, r.d, r.epsilon, r.p_star
                    );
                }
            }
            let series: Vec<SeriesRow> = rows
                .iter()
                .map(|r| {
                    row(
                        &format!("epsilon(M={},d={})", r.m, r.d),
                        None,
                        None,
                        r.epsilon,
                    )
                })
                .collect();
            finish(common, &report, &series)
        }
        SolveWhat::Kappa { s } => {
            let params = params_from(common)?;
            let ss = parse_list(s)?;
            let k = params.k();
            let values = ss
                .iter()
                .map(|&s| Ok(json!({ "s": s, "kappa": kappa(&params, s, k)? })))
                .collect::<Result<Vec<_>, CoreError>>()?;
            let kp = kappa_prime(&params);
            let report = Report::new(
                "solve kappa",
                config_json(&params, common.seed, json!({ "s": ss })),
                common.seed,
            )
            .with_results(json!({ "kappa": values, "kappa_prime": kp }));
            let mut series: Vec<SeriesRow> = ss
                .iter()
                .map(|&s| Ok(row("kappa", Some(s), None, kappa(&params, s, k)?)))
                .collect::<Result<_, CoreError>>()?;
            series.push(row("kappa_prime", None, None, kp));
            finish(common, &report, &series)
        }
    }
}

fn cmd_check(common: &Common, opts: &SampleOptions, what: &CheckWhat) -> CliResult<()> {
    match what {
        CheckWhat::Oracle { s } => check_oracle(common, s),
        CheckWhat::Martingale { tree, s } => check_martingale(common, opts, tree.as_deref(), *s),
        CheckWhat::Qs { trees, baseline } => check_qs(common, opts, *trees, *baseline),
        CheckWhat::Dims {
            grid,
            from,
            bootstrap,
            tol,
        } => check_dims(common, opts, grid.as_deref(), *from, *bootstrap, *tol),
        CheckWhat::Global { tree, grid } => check_global(common, opts, tree.as_deref(), *grid),
        CheckWhat::Structure { prefix, tail } => check_structure(common, opts, *prefix, *tail),
    }
}

fn check_oracle(common: &Common, s: &str) -> CliResult<()> {
    let params = params_from(common)?;
    let ss = parse_list(s)?;
    let k = params.k();
    let mut report = Report::new(
        "check oracle",
        config_json(&params, common.seed, json!({ "s": ss })),
        common.seed,
    );
    let mut results = Vec::new();
    let mut series = Vec::new();
    let mut worst = 0.0f64;
    for &s in &ss {
        let oracle = level1_oracle(&params, s, k)?;
        let closed = mean_factor(&params, s, k)?;
        worst = worst.max((oracle - closed).abs());
        results.push(
            json!({ "s": s, "oracle": oracle, "closed_form": closed, "residual": oracle - closed }),
        );
        series.push(row("oracle", Some(s), Some(1), oracle));
        series.push(row("closed_form", Some(s), Some(1), closed));
    }
    report.check(
        "oracle residual < 1e-12",
        worst < 1e-12,
        format!("max |oracle - p M^(d-s) kappa| = {worst:e}"),
    );
    let report = report.with_results(json!({ "rows": results, "max_residual": worst }));
    finish(common, &report, &series)
}

fn check_martingale(
    common: &Common,
    opts: &SampleOptions,
    path: Option<&Path>,
    s: Option<f64>,
) -> CliResult<()> {
    let (tree, info) = obtain_tree(common, opts, path, 4)?;
    let ft = FlaggedTree::new(tree)?;
    let params = ft.params().clone();
    let s = match s {
        Some(s) => s,
        None => match solve_t(&params, params.k())?.t_upper {
            Some(t) => t,
            None => return usage("p <= M^-d has no dimension bound; pass --s"),
        },
    };
    let trials = common.trials.unwrap_or(10_000);
    let stat = martingale_check(&ft, s, trials, common.seed)?;
    let mut report = Report::new(
        "check martingale",
        config_json(
            &params,
            common.seed,
            json!({ "s": s, "trials": trials, "tree": info, "depth": ft.depth() }),
        ),
        common.seed,
    )
    .with_results(serde_json::to_value(&stat).map_err(CoreError::from)?);
    report.check(
        "conditional mean ratio within 3 standard errors",
        stat.z().abs() <= 3.0,
        format!("ratio = {} +- {}", stat.ratio, stat.ratio_stderr),
    );
    let series = vec![SeriesRow {
        quantity: "Y_next_mean".into(),
        s: Some(s),
        n: Some(ft.depth() + 1),
        value: stat.mean,
        stderr: Some(stat.stderr),
        seed_count: trials,
    }];
    finish(common, &report, &series)
}

fn check_qs(common: &Common, opts: &SampleOptions, trees: usize, baseline: usize) -> CliResult<()> {
    let params = params_from(common)?;
    let depth = common.depth.unwrap_or(8);
    let trials = common.trials.unwrap_or(10_000);
    if baseline == 0 || baseline > depth {
        return usage(format!("baseline depth must be in 1..={depth}"));
    }
    let outcome = qs_experiment(&params, opts, common.seed, trees, depth, baseline, trials)?;
    let k = params.k();
    let bound = (params.base() as f64).powi(k as i32 + 3);
    let mut report = Report::new(
        "check qs",
        config_json(
            &params,
            common.seed,
            json!({ "trees": trees, "depth": depth, "baseline": baseline, "trials": trials }),
        ),
        common.seed,
    );
    report.check(
        "C_emp <= M^(K+3)",
        outcome.c_deep <= bound,
        format!("C_emp = {} at depth {depth}, bound {bound}", outcome.c_deep),
    );
    report.check(
        "C_emp(depth) <= 1.5 C_emp(baseline)",
        outcome.c_deep <= 1.5 * outcome.c_base,
        format!("{} vs {}", outcome.c_deep, outcome.c_base),
    );
    report.check(
        "r_out <= C_emp max(r_in, r_in^(K+1))",
        outcome.control_violations == 0,
        format!("{} violations", outcome.control_violations),
    );
    report.check(
        "comparability ratios within [M^-(K+3), M^(K+3)]",
        outcome.comparability.0 >= 1.0 / bound && outcome.comparability.1 <= bound,
        format!("[{}, {}]", outcome.comparability.0, outcome.comparability.1),
    );
    let series = vec![
        row("C_emp", None, Some(depth), outcome.c_deep),
        row("C_emp", None, Some(baseline), outcome.c_base),
    ];
    let report = report.with_results(serde_json::to_value(&outcome).map_err(CoreError::from)?);
    finish(common, &report, &series)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct QsOutcome {
    pub c_deep: f64,
    pub c_base: f64,
    pub control_violations: usize,
    pub comparability: (f64, f64),
    pub degenerate: usize,
    pub skipped_trees: usize,
    pub per_tree: Vec<(u64, f64, f64)>,
}

/// The quasisymmetry scan over `trees` non-extinct trees at two depths.
pub fn qs_experiment(
    params: &Params,
    opts: &SampleOptions,
    seed: u64,
    trees: usize,
    depth: usize,
    baseline: usize,
    trials: usize,
) -> CliResult<QsOutcome> {
    let k = params.k();
    let mut out = QsOutcome {
        c_deep: 0.0,
        c_base: 0.0,
        control_violations: 0,
        comparability: (f64::INFINITY, 0.0),
        degenerate: 0,
        skipped_trees: 0,
        per_tree: Vec::new(),
    };
    for i in 0..trees as u64 {
        let c = sample_nonextinct_with(
            params,
            depth,
            trial_seed(seed, i),
            opts,
            DEFAULT_REJECTION_BUDGET,
        )?;
        let tree_seed = c.tree.seed();
        let ft = FlaggedTree::new(c.tree)?;
        if ft.tree().count(baseline) < 3 || ft.tree().count(depth) < 3 {
            out.skipped_trees += 1;
            continue;
        }
        let scan_seed = SeedPolicy::new(seed).derive("qs", i).master_seed;
        let deep = qs_ratio_scan(&ft, trials, depth, scan_seed)?;
        let base = qs_ratio_scan(&ft, trials, baseline, scan_seed)?;
        for scan in [&deep, &base] {
            out.control_violations += scan
                .samples
                .iter()
                .filter(|(r_in, r_out)| *r_in > 0.0 && *r_out / control(*r_in, k) > scan.c_emp)
                .count();
            out.comparability.0 = out.comparability.0.min(scan.comparability_min);
            out.comparability.1 = out.comparability.1.max(scan.comparability_max);
            out.degenerate += scan.degenerate;
        }
        out.c_deep = out.c_deep.max(deep.c_emp);
        out.c_base = out.c_base.max(base.c_emp);
        out.per_tree.push((tree_seed, deep.c_emp, base.c_emp));
    }
    Ok(out)
}

/// `trees` non-extinct trees of `depth`, seeded per trial.
pub fn sample_trials(
    params: &Params,
    opts: &SampleOptions,
    seed: u64,
    trees: usize,
    depth: usize,
) -> CliResult<(Vec<FlaggedTree>, u64)> {
    let mut out = Vec::with_capacity(trees);
    let mut rejections = 0;
    for i in 0..trees as u64 {
        let c = sample_nonextinct_with(
            params,
            depth,
            trial_seed(seed, i),
            opts,
            DEFAULT_REJECTION_BUDGET,
        )?;
        rejections += c.rejections;
        out.push(FlaggedTree::new(c.tree)?);
    }
    Ok((out, rejections))
}

fn check_dims(
    common: &Common,
    opts: &SampleOptions,
    grid: Option<&str>,
    from: Option<usize>,
    bootstrap: usize,
    tol: f64,
) -> CliResult<()> {
    let params = params_from(common)?;
    let depth = common.depth.unwrap_or(6);
    let trees = common.trials.unwrap_or(200);
    let from = from.unwrap_or(depth.saturating_sub(3).max(1));
    let s_h = analysis::hausdorff_dim(&params);
    let mut grid = match grid {
        Some(g) => parse_grid(g)?,
        None => parse_grid(&format!("0:{}:0.01", params.dim()))?,
    };
    grid.push(s_h);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (sample, rejections) = sample_trials(&params, opts, common.seed, trees, depth)?;
    let est = estimate_dims(&sample, &grid, from..=depth, bootstrap, common.seed)?;
    let t = solve_t(&params, params.k())?;
    let mut report = Report::new(
        "check dims",
        config_json(
            &params,
            common.seed,
            json!({
                "trials": trees, "depth": depth, "from": from,
                "bootstrap": bootstrap, "tol": tol,
            }),
        ),
        common.seed,
    );
    let slope_at_s = est
        .grid
        .iter()
        .position(|&g| g == s_h)
        .map(|i| est.slopes[i]);
    match est.t_hat {
        Some(t_hat) => {
            report.check(
                "t_hat < s_hat",
                t_hat < est.s_hat,
                format!("t_hat = {t_hat}, s_hat = {}", est.s_hat),
            );
            if let Some(t_up) = t.t_upper {
                report.check(
                    "t_hat within tol of t_upper",
                    (t_hat - t_up).abs() <= tol,
                    format!("|{t_hat} - {t_up}|"),
                );
            }
        }
        None => report.check("t_hat < s_hat", false, est.flags.join("; ")),
    }
    report.check(
        "s_hat within tol of s_hausdorff",
        (est.s_hat - s_h).abs() <= tol,
        format!("|{} - {s_h}|", est.s_hat),
    );
    if let Some(slope) = slope_at_s {
        report.check(
            "slope at s_hausdorff < 0",
            slope < 0.0,
            format!("{slope:e}"),
        );
    }
    let series: Vec<SeriesRow> = est
        .grid
        .iter()
        .zip(&est.slopes)
        .map(|(&s, &v)| SeriesRow {
            quantity: "slope_log_Y".into(),
            s: Some(s),
            n: None,
            value: v,
            stderr: None,
            seed_count: est.trees,
        })
        .collect();
    let report = report.with_results(json!({
        "estimate": est,
        "s_hausdorff": s_h,
        "t_upper": t.t_upper,
        "rejections": rejections,
    }));
    finish(common, &report, &series)
}

fn check_global(
    common: &Common,
    opts: &SampleOptions,
    path: Option<&Path>,
    grid: usize,
) -> CliResult<()> {
    let (tree, info) = obtain_tree(common, opts, path, 5)?;
    let ft = FlaggedTree::new(tree)?;
    let params = ft.params().clone();
    let cfg = GeomConfig::new(&params)?;
    let pairs = common.trials.unwrap_or(100_000);
    let k = params.k();
    let m = params.base() as f64;
    let depth = ft.depth();
    let mut report = Report::new(
        "check global",
        config_json(
            &params,
            common.seed,
            json!({ "tree": info, "trials": pairs, "grid": grid, "depth": depth }),
        ),
        common.seed,
    );
    let (dg, df) = verify::boundary_displacement(&ft, &cfg, 10_000, depth, common.seed)?;
    report.check(
        "boundary fixed exactly",
        dg == 0.0 && df == 0.0,
        format!("max |g(u)-u| = {dg:e}, max |f(u)-u| = {df:e}"),
    );
    let branch = verify::branch_disagreement(&cfg, 10_000, common.seed);
    report.check(
        "branches of g agree on the inner cube boundary",
        branch <= 1e-12,
        format!("{branch:e}"),
    );
    let (lo, hi) = verify::lipschitz_bracket(&cfg, pairs, common.seed)?;
    let cap = m.powi(k as i32 + 2);
    report.check(
        "bi-Lipschitz bracket C/c <= M^(K+2)",
        lo > 0.0 && hi / lo <= cap,
        format!("[{lo}, {hi}], ratio {}", hi / lo),
    );
    let radial = verify::radial_deviation(&cfg, 200, 50, common.seed)?;
    report.check("rays stay on lines", radial <= 1e-12, format!("{radial:e}"));
    let mut corner = 0.0f64;
    for n in 1..=depth {
        corner = corner.max(verify::corner_agreement(&ft, &cfg, n)?.0);
    }
    report.check(
        "f_global matches f_point on corners",
        corner <= 1e-9,
        format!("{corner:e}"),
    );
    let mut separation = Value::Null;
    if params.dim() == 2 && grid > 0 {
        let sep = verify::grid_min_separation(&cfg, grid)?;
        separation = json!(sep);
        report.check(
            "g injective on grid",
            sep > 1e-9,
            format!("min separation {sep:e}"),
        );
    }
    let report = report.with_results(json!({
        "boundary_g": dg, "boundary_f": df, "branch": branch,
        "lipschitz": [lo, hi], "radial": radial, "corner": corner,
        "grid_separation": separation,
    }));
    finish(common, &report, &[])
}

fn check_structure(
    common: &Common,
    opts: &SampleOptions,
    prefix: usize,
    tail: usize,
) -> CliResult<()> {
    let params = params_from(common)?;
    let depth = common.depth.unwrap_or(6);
    let trees = common.trials.unwrap_or(50);
    let (sample, _) = sample_trials(&params, opts, common.seed, trees, depth)?;
    let mut report = Report::new(
        "check structure",
        config_json(
            &params,
            common.seed,
            json!({ "trials": trees, "depth": depth, "prefix": prefix, "tail": tail }),
        ),
        common.seed,
    );
    let (mut words, mut splits, mut pairs, mut worst) = (0, 0, 0, 0.0f64);
    let mut errors = Vec::new();
    for ft in &sample {
        match verify::check_injectivity(ft) {
            Ok(n) => words += n,
            Err(e) => errors.push(format!("injectivity: {e}")),
        }
        match verify::check_splitting(ft, prefix) {
            Ok(n) => splits += n,
            Err(e) => errors.push(format!("splitting: {e}")),
        }
        match verify::check_shared_faces(ft, tail) {
            Ok(s) => {
                pairs += s.pairs;
                worst = worst.max(s.worst);
            }
            Err(e) => errors.push(format!("faces: {e}")),
        }
    }
    let failed = |tag: &str| errors.iter().any(|e| e.starts_with(tag));
    report.check(
        "tilde injective",
        !failed("injectivity"),
        format!("{words} words"),
    );
    report.check(
        "splitting identity",
        !failed("splitting"),
        format!("{splits} identities"),
    );
    report.check(
        "shared-face bound",
        !failed("faces"),
        format!("{pairs} pairs, worst ratio {worst}"),
    );
    let report = report.with_results(json!({
        "words": words, "identities": splits, "face_pairs": pairs,
        "face_worst": worst, "errors": errors,
    }));
    finish(common, &report, &[])
}

fn cmd_export(common: &Common, opts: &SampleOptions, what: &ExportWhat) -> CliResult<()> {
    let mut buf = Vec::new();
    match what {
        ExportWhat::Cover { tree, level } => {
            let (tree, _) = obtain_tree(common, opts, tree.as_deref(), 4)?;
            let ft = FlaggedTree::new(tree)?;
            let n = level.unwrap_or(ft.depth());
            let dim = ft.params().dim();
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec![
                "source_word".to_string(),
                "tilde_word".into(),
                "level".into(),
            ];
            header.extend((0..dim).map(|c| format!("corner_{c}")));
            w.write_record(&header)?;
            for cell in ft.image_cover(n)? {
                let mut rec = vec![
                    cell.source.to_string(),
                    cell.tilde.labels.to_string(),
                    cell.image.level().to_string(),
                ];
                rec.extend(cell.image.corner_f64().iter().map(|x| x.to_string()));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|source| CliError::Io {
                path: PathBuf::from("<buffer>"),
                source,
            })?;
        }
        ExportWhat::Grid { tree, points } => {
            let (tree, _) = obtain_tree(common, opts, tree.as_deref(), 4)?;
            let ft = FlaggedTree::new(tree)?;
            let cfg = GeomConfig::new(ft.params())?;
            let dim = ft.params().dim();
            let total = (*points as u64).checked_pow(dim as u32).unwrap_or(u64::MAX);
            const MAX_POINTS: u64 = 10_000_000;
            if total > MAX_POINTS {
                return Err(CoreError::Capacity {
                    what: format!("grid of {points}^{dim} points"),
                    limit: MAX_POINTS,
                }
                .into());
            }
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header: Vec<String> = (0..dim).map(|c| format!("u_{c}")).collect();
            header.extend((0..dim).map(|c| format!("f_{c}")));
            header.push("surviving".into());
            header.push("stretched".into());
            w.write_record(&header)?;
            let mut idx = vec![0usize; dim];
            for _ in 0..total {
                let u: Vec<f64> = idx
                    .iter()
                    .map(|&i| (i as f64 + 0.5) / *points as f64)
                    .collect();
                let e = f_global(&ft, &cfg, &u, ft.depth())?;
                let mut rec: Vec<String> = u.iter().map(|x| x.to_string()).collect();
                rec.extend(e.value.iter().map(|x| x.to_string()));
                rec.push(e.surviving.to_string());
                rec.push(e.stretched.to_string());
                w.write_record(&rec)?;
                for c in (0..dim).rev() {
                    idx[c] += 1;
                    if idx[c] < *points {
                        break;
                    }
                    idx[c] = 0;
                }
            }
            w.flush().map_err(|source| CliError::Io {
                path: PathBuf::from("<buffer>"),
                source,
            })?;
        }
    }
    write_out(common.out.as_deref(), &buf)
}

/// Corner of a word as floats; used by the renderer.
pub(crate) fn corner(params: &Params, w: &Word) -> CliResult<Vec<f64>> {
    Ok(pi_finite(params, w)?.to_f64())
}
