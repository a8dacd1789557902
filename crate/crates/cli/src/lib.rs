//! Command-line front end: data generation, SENet training and inference,
//! the EnSC oracle, spectral clustering, evaluation, comparisons and
//! ablations.
//!
//! Every command reads an optional JSON [`config::ExperimentConfig`]; any
//! field can be overridden with `--section.field value` (or `--field value`
//! for top-level fields). `--threads 1` makes runs bitwise reproducible.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "senet", version, about = "Self-expressive network subspace clustering")]
pub struct Cli {
    /// Worker threads (default: all cores). `1` gives bitwise reproducible output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Top-level seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config; defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic union-of-subspaces dataset.
    Gen {
        /// Synthetic spec JSON, used verbatim instead of the config's data section.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train SENet and write the checkpoint, loss history and coefficients.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Coefficients of a trained checkpoint on a feature file.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Elastic-net self-expression coefficients.
    Ensc {
        #[command(flatten)]
        common: Common,
    },
    /// Spectral clustering of a coefficient matrix.
    Cluster {
        #[arg(long)]
        coefficients: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Metrics of predicted labels against the truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Adds SRE and CONN.
        #[arg(long)]
        coefficients: Option<PathBuf>,
        /// With `--coefficients`, adds the loss decomposition.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write metrics.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SENet against EnSC on the same training data.
    CompareSenetEnsc {
        #[command(flatten)]
        common: Common,
    },
    /// Naive against two-pass training: gradient parity and end-to-end runs.
    CompareAlgs {
        #[command(flatten)]
        common: Common,
    },
    /// Soft-threshold, depth, width and batch-size sweeps.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

const CONFIG_TOP_KEYS: &[&str] = &[
    "data",
    "preprocess",
    "train_size",
    "hyper",
    "arch",
    "train",
    "spectral",
    "clusters",
    "ensc",
    "ablation",
    "probes",
];

/// A dotted config key and its raw value.
pub type Override = (String, String);

/// Splits config overrides out of `args` (without the program name).
pub fn split_overrides(args: &[String]) -> CliResult<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg.clone());
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        let top = key.split('.').next().unwrap_or_default();
        if !key.contains('.') && !CONFIG_TOP_KEYS.contains(&top) {
            rest.push(arg.clone());
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let (program, args) = match argv.split_first() {
        Some((p, a)) => (p.clone(), a.to_vec()),
        None => ("senet".to_string(), Vec::new()),
    };
    let (rest, overrides) = match split_overrides(&args) {
        Ok(v) => v,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(std::iter::once(program).chain(rest)) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("senet: {}", line.trim_start_matches("error: "));
            return 1;
        }
    };
    match execute(cli, overrides) {
        Ok(()) => 0,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> i32 {
    eprintln!("senet: {e}");
    e.exit_code()
}

pub fn execute(cli: Cli, overrides: Vec<Override>) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    pool.install(|| commands::dispatch(cli.command, cli.seed, overrides))
}
