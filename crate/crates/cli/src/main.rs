//! `ncct`: data generation, noise injection, training, evaluation, k sweeps
//! and reports for negative-class consistency training.

mod commands;
mod manifest;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use ncct::config::{Mode, Precision, TrainConfig};
use ncct::Error;

use manifest::{io_error, FileDigest, Invocation, NoiseKind, RunManifest, TOOL, VERSION};

const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "ncct", version, about = "Negative-class consistency training under label noise")]
struct Cli {
    /// Seed for generation, noise injection and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Training config file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output file (gen-data, inject-noise) or directory (other commands).
    #[arg(short = 'o', long = "out", global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Flip training labels, symmetrically or along class pairs.
    InjectNoise(InjectArgs),
    /// Train a model; writes metrics.csv, final.ncpt and manifest.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Train once per k (and noise rate) and tabulate the results.
    SweepK(SweepArgs),
    /// Render a confusion matrix and accuracy curves.
    Report(ReportArgs),
    /// Run a command again from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 7)]
    classes: usize,
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Within-class variation in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    variation: f64,
    #[arg(long, default_value = "train", value_parser = ["train", "test"])]
    split: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Sym,
    Asym,
}

impl From<KindArg> for NoiseKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Sym => NoiseKind::Sym,
            KindArg::Asym => NoiseKind::Asym,
        }
    }
}

#[derive(Args, Debug)]
struct InjectArgs {
    /// Input dataset.
    #[arg(short = 'i', long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Fraction of samples to relabel, in [0, 1].
    #[arg(long)]
    rate: f64,
    /// Pairs file of `src,dst` lines (asymmetric noise); defaults to the
    /// shipped expression table.
    #[arg(long)]
    pairs: Option<PathBuf>,
}

/// Training settings; each overrides the config file.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "warmup")]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_backbone: Option<f64>,
    #[arg(long)]
    lr_heads: Option<f64>,
    #[arg(long, value_parser = ["adam", "sgd"])]
    optimizer: Option<String>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Record wall-clock seconds in the metrics CSV.
    #[arg(long)]
    timing: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Arithmetic to evaluate in; match the training precision.
    #[arg(long, value_parser = parse_precision, default_value = "f32")]
    precision: Precision,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Clean training set; noise is injected per rate.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated k values (default 1..=C).
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
    /// Comma-separated noise rates.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.6")]
    rates: Vec<f64>,
    #[arg(long, value_enum, default_value = "sym")]
    kind: KindArg,
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Comma-separated modes; modes that ignore k get one row per rate.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "ncct")]
    modes: Vec<Mode>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Sweep CSV to plot as well.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long, value_parser = parse_precision, default_value = "f32")]
    precision: Precision,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
}

fn usage(msg: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::ArgumentConflict, msg)
        .exit()
}

fn require_out(out: &Option<PathBuf>) -> PathBuf {
    match out {
        Some(o) => o.clone(),
        None => Cli::command()
            .error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "the following required arguments were not provided:\n  --out <PATH>",
            )
            .exit(),
    }
}

fn resolve_config(cli: &Cli, flags: &TrainFlags) -> Result<TrainConfig, Error> {
    let mut c = TrainConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        c.apply_text(&text)?;
    }
    if let Some(v) = &flags.optimizer {
        c.set("optimizer", v)?;
    }
    if let Some(v) = flags.mode {
        c.mode = v;
    }
    if let Some(v) = flags.k {
        c.k = v;
    }
    if let Some(v) = flags.epochs {
        c.epochs = v;
    }
    if let Some(v) = flags.warmup_epochs {
        c.warmup_epochs = v;
    }
    if let Some(v) = flags.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = flags.lr_backbone {
        c.lr_backbone = v;
    }
    if let Some(v) = flags.lr_heads {
        c.lr_heads = v;
    }
    if let Some(v) = flags.precision {
        c.precision = v;
    }
    if let Some(v) = flags.checkpoint_every {
        c.checkpoint_every = v;
    }
    if flags.timing {
        c.record_timing = true;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn read_pairs(path: &Option<PathBuf>) -> Result<Option<String>, Error> {
    path.as_ref()
        .map(|p| fs::read_to_string(p).map_err(|e| io_error(p, e)))
        .transpose()
}

fn resolve(cli: &Cli) -> Result<Invocation, Error> {
    let trains = matches!(cli.command, Command::Train(_) | Command::SweepK(_));
    if cli.config.is_some() && !trains {
        usage("--config applies only to train and sweep-k");
    }
    Ok(match &cli.command {
        Command::GenData(a) => Invocation::GenData {
            classes: a.classes,
            per_class: a.per_class,
            size: a.size,
            variation: a.variation,
            split: a.split.clone(),
            seed: cli.seed.unwrap_or(1),
            out: require_out(&cli.out),
        },
        Command::InjectNoise(a) => Invocation::InjectNoise {
            input: a.input.clone(),
            kind: a.kind.into(),
            rate: a.rate,
            pairs: read_pairs(&a.pairs)?,
            seed: cli.seed.unwrap_or(1),
            out: require_out(&cli.out),
        },
        Command::Train(a) => Invocation::Train {
            train: a.train.clone(),
            test: a.test.clone(),
            config: resolve_config(cli, &a.flags)?,
            out: require_out(&cli.out),
        },
        Command::Eval(a) => Invocation::Eval {
            checkpoint: a.checkpoint.clone(),
            test: a.test.clone(),
            precision: a.precision,
            out: cli.out.clone(),
        },
        Command::SweepK(a) => {
            let config = resolve_config(cli, &a.flags)?;
            let ks = if a.ks.is_empty() {
                // Default to every k the data allows; read the class count
                // from the training set.
                let d = ncct::dataset::load_dataset(&a.train)?;
                (1..=d.num_classes).collect()
            } else {
                a.ks.clone()
            };
            Invocation::SweepK {
                train: a.train.clone(),
                test: a.test.clone(),
                config,
                ks,
                modes: a.modes.clone(),
                kind: a.kind.into(),
                rates: a.rates.clone(),
                pairs: read_pairs(&a.pairs)?,
                out: require_out(&cli.out),
            }
        }
        Command::Report(a) => Invocation::Report {
            metrics: a.metrics.clone(),
            checkpoint: a.checkpoint.clone(),
            test: a.test.clone(),
            sweep: a.sweep.clone(),
            precision: a.precision,
            out: require_out(&cli.out),
        },
        Command::Replay(_) => unreachable!("replay is handled before resolution"),
    })
}

/// Runs an invocation and writes its manifest.
fn run(invocation: Invocation, argv: Vec<String>) -> Result<(), Error> {
    let inputs = invocation
        .inputs()
        .iter()
        .map(|p| FileDigest::of(p))
        .collect::<Result<Vec<_>, _>>()?;
    let started_at = manifest::unix_now();
    let outcome = commands::execute(&invocation)?;
    if let Some(path) = invocation.manifest_path() {
        let mut outputs = outcome.outputs;
        outputs.push(path.clone());
        RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            argv,
            config_text: outcome.config_text,
            invocation,
            inputs,
            outputs,
            started_at,
            finished_at: manifest::unix_now(),
        }
        .save(&path)?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Shape(_) => EXIT_USAGE,
        Error::Diverged { .. } | Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => {
            EXIT_DIVERGED
        }
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Truncated { .. }
        | Error::Checksum { .. }
        | Error::Malformed { .. } => EXIT_IO,
        _ => 1,
    }
}

/// Keeps freed per-batch buffers in the heap instead of handing them back to
/// the kernel and faulting them in again on the next step.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    // SAFETY: mallopt only adjusts allocator parameters and is called before
    // any other thread exists.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn main() -> ExitCode {
    tune_allocator();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Replay(r) => RunManifest::load(&r.manifest).and_then(|m| {
            m.verify_inputs()?;
            let mut inv = m.invocation;
            if let Some(out) = &cli.out {
                inv.redirect(out.clone());
            }
            run(inv, argv)
        }),
        _ => resolve(&cli).and_then(|inv| run(inv, argv)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
