use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "percoqs",
    version,
    about = "Fractal percolation and its dimension-lowering substitution map"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Subdivision base M (>= 3).
    #[arg(long = "M", global = true, default_value_t = 3)]
    pub m: u32,

    /// Dimension d.
    #[arg(long, global = true, default_value_t = 2)]
    pub d: usize,

    /// Survival probability, 0 < p < 1.
    #[arg(long, global = true, default_value_t = 0.7)]
    pub p: f64,

    /// Length of the substitution word when --eta is not given.
    #[arg(long = "K", global = true)]
    pub k: Option<usize>,

    /// Substitution word as dot-joined labels, e.g. 9 or 9.5.
    #[arg(long, global = true)]
    pub eta: Option<String>,

    /// Master seed.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Tree depth (command-specific default).
    #[arg(long, global = true)]
    pub depth: Option<usize>,

    /// Number of trials (command-specific meaning and default).
    #[arg(long, global = true)]
    pub trials: Option<usize>,

    /// Worker threads. Never changes the output.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// Output file; standard output when omitted.
    #[arg(long, short = 'o', global = true)]
    pub out: Option<PathBuf>,

    /// Do not echo check verdicts on standard error.
    #[arg(long, short = 'q', global = true)]
    pub quiet: bool,

    /// Also write the tabular series as CSV.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a tree and write it as percoqs-tree/1 JSON.
    Sample {
        /// Retry seeds seed, seed+1, ... until the deepest level is non-empty.
        #[arg(long)]
        nonextinct: bool,
    },
    /// Draw levels of a two-dimensional tree as SVG panels.
    Render {
        /// Tree file; sampled from the flags when omitted.
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Comma-separated levels, default 1..=min(3, depth).
        #[arg(long)]
        levels: Option<String>,
        /// Draw the image cover instead of the survivors.
        #[arg(long)]
        image: bool,
        /// Panel size in pixels.
        #[arg(long, default_value_t = 300)]
        size: u32,
    },
    /// Closed-form quantities.
    Solve {
        #[command(subcommand)]
        what: SolveWhat,
    },
    /// Numerical checks; exit code 4 when any check fails.
    Check {
        #[command(subcommand)]
        what: CheckWhat,
    },
    /// CSV exports of covers and global-map evaluations.
    Export {
        #[command(subcommand)]
        what: ExportWhat,
    },
}

#[derive(Debug, Subcommand)]
pub enum SolveWhat {
    /// Dimension bound t and the Hausdorff dimension.
    T,
    /// epsilon(M, d) for the standard table.
    EpsilonTable,
    /// kappa(s, K) and kappa'.
    Kappa {
        /// Comma-separated exponents.
        #[arg(long, default_value = "0,0.5,1,1.5,2")]
        s: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum CheckWhat {
    /// Exact level-one enumeration against the closed form.
    Oracle {
        #[arg(long, default_value = "0.25,0.5,0.75,1,1.25,1.5,1.75,2")]
        s: String,
    },
    /// Resampling of the next generation of a frozen tree.
    Martingale {
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Exponent; the dimension bound t when omitted.
        #[arg(long)]
        s: Option<f64>,
    },
    /// Distortion of relative distances on sampled triples.
    Qs {
        /// Number of trees.
        #[arg(long, default_value_t = 20)]
        trees: usize,
        /// Depth of the comparison scan.
        #[arg(long, default_value_t = 5)]
        baseline: usize,
    },
    /// Dimension estimates from non-extinct trees.
    Dims {
        /// Grid as lo:hi:step; default 0:d:0.005.
        #[arg(long)]
        grid: Option<String>,
        /// First level of the fit; default max(1, depth-3).
        #[arg(long)]
        from: Option<usize>,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
        /// Tolerance for the estimate checks.
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
    /// Boundary identity, branch agreement, bi-Lipschitz bracket and corner
    /// agreement of the global map.
    Global {
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Points per axis of the injectivity grid (d = 2 only; 0 skips).
        #[arg(long, default_value_t = 1000)]
        grid: usize,
    },
    /// Injectivity, splitting identity and shared-face bound on sampled trees.
    Structure {
        #[arg(long, default_value_t = 3)]
        prefix: usize,
        #[arg(long, default_value_t = 2)]
        tail: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExportWhat {
    /// Image cover of one level: source word, tilde word, level, corner.
    Cover {
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        level: Option<usize>,
    },
    /// Global map on the grid of cell centres.
    Grid {
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Points per axis.
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
}
