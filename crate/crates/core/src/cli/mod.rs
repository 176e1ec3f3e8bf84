//! Command-line front end. [`dispatch`] parses arguments, runs one
//! subcommand and maps the outcome onto an exit code.

mod commands;
pub mod config;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use output::{relative_to, Substitution, SUBSTITUTIONS};

use crate::error::{Error, Result};
use crate::synthworld::RenderMode;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "REPRLINK_OUT";

#[derive(Parser, Debug)]
#[command(name = "reprlink", version, about = "Link a classifier's representation space to a generator latent space and quantify what it encodes")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: $REPRLINK_OUT/<command> or ./reprlink-out/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Linear,
    Shapes,
}

impl From<ModeArg> for RenderMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Linear => RenderMode::Linear,
            ModeArg::Shapes => RenderMode::Shapes,
        }
    }
}

#[derive(Args, Debug)]
struct DataArg {
    /// Dataset directory (or its manifest.json).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and train its classifier head.
    Gen {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        d_w: Option<usize>,
        #[arg(long)]
        d_r: Option<usize>,
        #[arg(long)]
        noise_std: Option<f64>,
    },
    /// Fit the linking map R → W on a dataset.
    FitLink {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Full-cycle evaluation of a linking map on fresh latents.
    EvalLink {
        #[command(flatten)]
        data: DataArg,
        /// Directory holding link.rmat / link.json.
        #[arg(long)]
        link: PathBuf,
        #[arg(long)]
        test_per_class: Option<usize>,
    },
    /// k-means/ARI and RSA comparison of W and R.
    CompareSpaces {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n_init: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Fit the few-shot segmenter and score it on held-out renders.
    SegmentFit {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        held_out: Option<usize>,
    },
    /// Sweep units and summarize label changes and class relevance.
    Sweep {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        link: PathBuf,
        /// Segmenter directory; ground-truth masks when absent.
        #[arg(long)]
        segmenter: Option<PathBuf>,
        #[arg(long)]
        seeds_per_class: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Unit list such as 0-7,12 (default: all).
        #[arg(long)]
        units: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        clusters: Option<usize>,
        /// unit:latent_dim[:span]: rewire a unit to drive one latent.
        #[arg(long)]
        dedicate: Option<String>,
        #[arg(long)]
        montage_unit: Option<usize>,
    },
    /// Class relevance sets and class similarity from a sweep.
    Relevance {
        /// Output directory of a `sweep` run.
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Counterfactual trajectories across the decision boundary.
    Counterfactual {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        link: PathBuf,
        #[arg(long)]
        seeds_per_class: Option<usize>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        resample: Option<usize>,
    },
    /// Correspondences, affine alignment and residual field between two images.
    Track {
        /// First image (PGM/PPM); with --b, skips rendering.
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        /// Dataset to render an original/perturbed pair from.
        #[arg(long, conflicts_with = "a")]
        data: Option<PathBuf>,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        delta: Option<f64>,
        #[arg(long)]
        block: Option<usize>,
        #[arg(long)]
        search: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Aggregate finished runs into one report.
    Report {
        /// Run directories (each holding run.json).
        #[arg(num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::FitLink { .. } => "fit-link",
            Command::EvalLink { .. } => "eval-link",
            Command::CompareSpaces { .. } => "compare-spaces",
            Command::SegmentFit { .. } => "segment-fit",
            Command::Sweep { .. } => "sweep",
            Command::Relevance { .. } => "relevance",
            Command::Counterfactual { .. } => "counterfactual",
            Command::Track { .. } => "track",
            Command::Report { .. } => "report",
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Fold flag values into the configuration; flags win.
fn apply_flags(cfg: &mut RunConfig, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Gen { mode, classes, per_class, d_w, d_r, noise_std } => {
            set(&mut cfg.world.mode, mode.map(Into::into));
            set(&mut cfg.world.classes, *classes);
            set(&mut cfg.world.per_class, *per_class);
            set(&mut cfg.world.d_w, *d_w);
            set(&mut cfg.world.d_r, *d_r);
            set(&mut cfg.world.noise_std, *noise_std);
        }
        Command::FitLink { ridge, .. } => set(&mut cfg.link.ridge, *ridge),
        Command::EvalLink { test_per_class, .. } => set(&mut cfg.link.test_per_class, *test_per_class),
        Command::CompareSpaces { k, n_init, per_class, repetitions, .. } => {
            set(&mut cfg.compare.k, *k);
            set(&mut cfg.compare.n_init, *n_init);
            set(&mut cfg.compare.per_class, *per_class);
            set(&mut cfg.compare.repetitions, *repetitions);
        }
        Command::SegmentFit { per_class, held_out, .. } => {
            set(&mut cfg.segment.per_class, *per_class);
            set(&mut cfg.segment.held_out, *held_out);
        }
        Command::Sweep { seeds_per_class, steps, units, threshold, clusters, dedicate, montage_unit, .. } => {
            set(&mut cfg.sweep.seeds_per_class, *seeds_per_class);
            set(&mut cfg.sweep.steps, *steps);
            set(&mut cfg.sweep.relevance_threshold, *threshold);
            set(&mut cfg.sweep.clusters, *clusters);
            set(&mut cfg.sweep.montage_unit, *montage_unit);
            if let Some(u) = units {
                cfg.sweep.units = config::parse_units(u)?;
            }
            if let Some(d) = dedicate {
                cfg.sweep.dedicate = Some(config::parse_dedicate(d)?);
            }
        }
        Command::Relevance { threshold, .. } => set(&mut cfg.sweep.relevance_threshold, *threshold),
        Command::Counterfactual { seeds_per_class, lambda1, lambda2, step, max_steps, resample, .. } => {
            let c = &mut cfg.counterfactual;
            set(&mut c.seeds_per_class, *seeds_per_class);
            set(&mut c.lambda1, *lambda1);
            set(&mut c.lambda2, *lambda2);
            set(&mut c.step, *step);
            set(&mut c.max_steps, *max_steps);
            set(&mut c.resample, *resample);
        }
        Command::Track { sample, latent_dim, delta, block, search, stride, .. } => {
            let t = &mut cfg.track;
            set(&mut t.sample, *sample);
            set(&mut t.latent_dim, *latent_dim);
            set(&mut t.delta, *delta);
            set(&mut t.tracker.block, *block);
            set(&mut t.tracker.search, *search);
            set(&mut t.tracker.stride, *stride);
        }
        Command::Report { .. } => {}
    }
    Ok(())
}

fn out_dir(explicit: Option<PathBuf>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("reprlink-out"));
        root.join(command)
    })
}

fn run(cli: Cli) -> Result<PathBuf> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.threads, cli.threads);
    apply_flags(&mut cfg, &cli.command)?;
    let name = cli.command.name();
    let out = out_dir(cli.out, name);
    let threads = cfg.threads;
    crate::par::with_threads(threads, move || commands::execute(cli.command, &cfg, out))
}

/// Parse `argv` (including the program name), run, and return the exit code:
/// 0 success, 1 usage, 2 data/format, 3 numerical failure.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("reprlink: {e}");
            if let Error::Usage(_) = e {
                eprintln!("run `reprlink --help` for usage");
            }
            e.exit_code()
        }
    }
}
