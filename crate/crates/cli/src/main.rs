mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use hierlogic::inference::{Engine, EVariant};
use hierlogic::io::Format;
use hierlogic::trainer::{CorruptionSpec, SyntheticSpec};
use hierlogic::PeerScope;
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use crate::config::RunConfig;
use crate::error::CliError;

const LOG_ENV: &str = "HIERLOGIC_LOG";

/// Hierarchy-aware logic losses, message-passing inference and path decoding
/// for per-pixel score maps.
#[derive(Debug, Parser)]
#[command(name = "hierlogic", version)]
struct Cli {
    /// Cap on worker threads for loss and inference.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the resolved run configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a hierarchy file and summarise it.
    Validate(HierarchyArgs),
    /// Evaluate the losses of a score map against labels.
    Loss(LossArgs),
    /// Run message passing and decode one root-to-leaf path per pixel.
    Infer(InferArgs),
    /// Train a linear model on synthetic features and report the history.
    TrainDemo(TrainArgs),
    /// Write corrupted one-hot score maps and their labels.
    GenData(GenArgs),
}

#[derive(Debug, Args)]
struct HierarchyArgs {
    /// Hierarchy JSON file, or a bundled name (toy6, cityscapes, mapillary,
    /// pascal_part108, ade20k).
    #[arg(long)]
    hierarchy: String,
    /// Which same-level nodes are mutually exclusive: level or siblings.
    #[arg(long, default_value = "level")]
    peer_scope: PeerScope,
}

#[derive(Debug, Args)]
struct FileArgs {
    /// binary (LSG1/LSL1) or csv.
    #[arg(long, default_value = "binary")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LogicArgs {
    /// Generalized-mean exponent of the quantifiers.
    #[arg(long, default_value_t = 5)]
    q: u32,
    /// Weight of the logic losses relative to BCE.
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long)]
    no_c: bool,
    #[arg(long)]
    no_d: bool,
    #[arg(long)]
    no_e: bool,
}

#[derive(Debug, Args)]
struct InferenceArgs {
    /// Message-passing rounds.
    #[arg(long, default_value_t = 2)]
    iters: usize,
    #[arg(long, default_value = "matrix")]
    engine: Engine,
    #[arg(long, default_value = "per-peer")]
    e_variant: EVariant,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[command(flatten)]
    hierarchy: HierarchyArgs,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    files: FileArgs,
    #[command(flatten)]
    logic: LogicArgs,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    hierarchy: HierarchyArgs,
    #[arg(long)]
    scores: PathBuf,
    /// Ground truth; adds an evaluation report.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    files: FileArgs,
    #[command(flatten)]
    inference: InferenceArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value = "cityscapes")]
    hierarchy: String,
    #[arg(long, default_value = "level")]
    peer_scope: PeerScope,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 5.0)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    /// Training history as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    logic: LogicArgs,
    #[command(flatten)]
    inference: InferenceArgs,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    hierarchy: HierarchyArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    blobs: usize,
    /// Chance that a level's active node is swapped for another.
    #[arg(long, default_value_t = 0.2)]
    flip_rate: f64,
    #[arg(long, default_value = "binary")]
    format: Format,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl LogicArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.loss.fuzzy.q = self.q;
        cfg.loss.alpha = self.alpha;
        cfg.loss.use_c = !self.no_c;
        cfg.loss.use_d = !self.no_d;
        cfg.loss.use_e = !self.no_e;
        cfg.train.q = self.q;
        cfg.train.alpha = self.alpha;
        cfg.train.use_c = !self.no_c;
        cfg.train.use_d = !self.no_d;
        cfg.train.use_e = !self.no_e;
    }
}

impl InferenceArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.inference.iterations = self.iters;
        cfg.inference.engine = self.engine;
        cfg.inference.e_variant = self.e_variant;
    }
}

fn with_hierarchy(args: &HierarchyArgs) -> RunConfig {
    RunConfig { hierarchy: args.hierarchy.clone(), peer_scope: args.peer_scope, ..RunConfig::default() }
}

fn run_config(cli: &Cli) -> RunConfig {
    let mut cfg = match &cli.command {
        Command::Validate(a) => with_hierarchy(a),
        Command::Loss(a) => {
            let mut cfg = with_hierarchy(&a.hierarchy);
            cfg.scores = Some(a.scores.clone());
            cfg.labels = Some(a.labels.clone());
            cfg.format = a.files.format;
            cfg.out = a.files.out.clone();
            a.logic.apply(&mut cfg);
            cfg
        }
        Command::Infer(a) => {
            let mut cfg = with_hierarchy(&a.hierarchy);
            cfg.scores = Some(a.scores.clone());
            cfg.labels = a.labels.clone();
            cfg.format = a.files.format;
            cfg.out = a.files.out.clone();
            a.inference.apply(&mut cfg);
            cfg
        }
        Command::TrainDemo(a) => {
            let mut cfg = RunConfig { hierarchy: a.hierarchy.clone(), peer_scope: a.peer_scope, ..RunConfig::default() };
            cfg.seed = a.seed;
            cfg.out = a.out.clone();
            a.logic.apply(&mut cfg);
            a.inference.apply(&mut cfg);
            cfg.train.seed = a.seed;
            cfg.train.epochs = a.epochs;
            cfg.train.lr = a.lr;
            cfg.train.batch_size = a.batch_size;
            cfg.synthetic = SyntheticSpec { height: a.height, width: a.width, ..SyntheticSpec::standard(a.seed) };
            cfg
        }
        Command::GenData(a) => {
            let mut cfg = with_hierarchy(&a.hierarchy);
            cfg.seed = a.seed;
            cfg.format = a.format;
            cfg.out = Some(a.out.clone());
            cfg.corruption = CorruptionSpec {
                height: a.height,
                width: a.width,
                num_blobs: a.blobs,
                flip_rate: a.flip_rate,
                seed: a.seed,
            };
            cfg
        }
    };
    cfg.threads = cli.threads;
    cfg.verbosity = std::env::var(LOG_ENV).unwrap_or_else(|_| "warn".into());
    cfg
}

/// Writes `report` as pretty JSON to `out`, or to stdout.
fn emit<T: Serialize>(report: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}").and_then(|_| out.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = run_config(cli);
    if cli.print_config {
        return emit(&cfg, None);
    }
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Validate(_) => emit(&commands::validate(&cfg)?, None),
        Command::Loss(_) => emit(&commands::loss(&cfg)?, cfg.out.as_deref()),
        Command::Infer(_) => emit(&commands::infer(&cfg)?, None),
        Command::TrainDemo(_) => emit(&commands::train_demo(&cfg)?, None),
        Command::GenData(_) => emit(&commands::gen_data(&cfg)?, None),
    }
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env(LOG_ENV).unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::new("usage", first.trim_start_matches("error: "));
            eprintln!("{err}");
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
