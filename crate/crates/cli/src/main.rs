//! `did`: generate, featurize, train, score, fuse, evaluate, benchmark and
//! gradcheck from one binary.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use did_core::config::{RawConfig, RunConfig, SECTIONS};
use did_core::{DidError, Result};

#[derive(Parser, Debug)]
#[command(
    name = "did",
    version,
    about = "Dialect identification with transformer and CNN classifiers",
    after_help = "Any configuration key can be overridden as --SECTION.KEY VALUE, \
                  e.g. --train.learning_rate 0.01. Set DID_LOG=info for progress."
)]
struct Cli {
    /// Sectioned key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-utterance parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Transformer,
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Ops,
    Model,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic corpus (WAVs and train/dev/test manifests).
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute log-mel features for every utterance of a manifest.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier; writes per-epoch and best checkpoints and a log.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior scores of a checkpoint on a manifest.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average two score files utterance by utterance.
    Fuse {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy report: overall, per duration bucket, per class, confusion.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Real-time factor of front end plus forward pass on synthetic audio.
    Benchmark {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Seconds of audio (default: eval.benchmark_seconds).
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_enum, default_value = "on")]
        downsampling: OnOff,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum)]
        scope: Scope,
    },
    /// Print the effective configuration.
    Config,
}

type Overrides = Vec<(String, String)>;

/// Pulls `--section.key value` and `--section.key=value` overrides out of
/// the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg.strip_prefix("--").filter(|a| {
            a.split_once('.')
                .is_some_and(|(s, _)| SECTIONS.contains(&s))
        });
        match dotted {
            Some(body) => {
                let (key, value) = match body.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => {
                        let v = it.next().ok_or_else(|| {
                            DidError::Config(format!("override --{body} needs a value"))
                        })?;
                        (body.to_string(), v)
                    }
                };
                overrides.push((key, value));
            }
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

fn load_config(path: Option<&PathBuf>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut raw = match path {
        Some(p) => RawConfig::read(p)?,
        None => RawConfig::default(),
    };
    for (k, v) in overrides {
        raw.set_dotted(k, v)?;
    }
    raw.build()
}

fn exit_code(err: &DidError) -> u8 {
    match err.kind() {
        "input" => 3,
        "config" => 4,
        "dimension" => 5,
        "format" => 6,
        "alignment" => 7,
        "contract" => 8,
        "numeric" => 9,
        "missing-file" => 10,
        _ => 11,
    }
}

fn run(args: Vec<String>) -> Result<()> {
    let (args, overrides) = split_overrides(args)?;
    let cli = Cli::parse_from(args);
    let mut cfg = load_config(cli.config.as_ref(), &overrides)?;
    cfg.synth.seed = cli.seed;
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| DidError::Config(format!("--jobs {jobs}: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Generate { out } => commands::generate(&cfg, &out),
        Command::Featurize { manifest, out } => commands::featurize(&cfg, &manifest, &out),
        Command::Train {
            model,
            train,
            dev,
            out,
        } => commands::train(&cfg, seed, model, &train, &dev, &out),
        Command::Score {
            checkpoint,
            manifest,
            out,
        } => commands::score(&cfg, &checkpoint, &manifest, &out),
        Command::Fuse { a, b, out } => commands::fuse(&a, &b, &out),
        Command::Evaluate { scores, out } => commands::evaluate(&scores, out.as_deref()),
        Command::Benchmark {
            checkpoint,
            duration,
            downsampling,
        } => commands::benchmark(&cfg, &checkpoint, duration, downsampling == OnOff::On),
        Command::Gradcheck { scope } => commands::gradcheck(&cfg, seed, scope),
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DID_LOG", "error"))
        .format_timestamp(None)
        .init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg = err.to_string().replace('\n', " ");
            eprintln!("error: kind={} {msg}", err.kind());
            ExitCode::from(exit_code(&err))
        }
    }
}
