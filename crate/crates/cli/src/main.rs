mod commands;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mast_core::config::RunConfig;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Environment variable naming the root directory for run outputs.
pub const OUTPUT_ROOT_VAR: &str = "MAST_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "mast", version, about = "Sparse value-decomposition multi-agent Q-learning")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run, or one process per seed with --seeds.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Size and FLOPs report for a config, without training.
    Flops(FlopsArgs),
    /// Nonzero connection counts and mask bitmaps of a checkpoint.
    Maskstats(MaskstatsArgs),
    /// Full enumerable model of an environment preset as JSON.
    SpecDump(SpecDumpArgs),
}

/// Config file plus overrides shared by `train` and `flops`. Any config key
/// can also be given as `--key value`.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// qmix, owqmix or res.
    #[arg(long)]
    pub algo: Option<String>,
    /// max, softmax, mellowmax or soft_mellowmax.
    #[arg(long)]
    pub operator: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub t0: Option<u64>,
    /// Environment preset: climb, penalty, grid2, grid3 or grid4.
    #[arg(long)]
    pub preset: Option<String>,
    /// Generic override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Output root; the run directory is created inside it. Defaults to
    /// $MAST_OUTPUT_ROOT, then `runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed range `a..b` (end exclusive), one child process per seed.
    #[arg(long, conflicts_with = "seed")]
    pub seeds: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config; defaults to `config.toml` beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Print CSV instead of a table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Debug)]
pub struct MaskstatsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SpecDumpArgs {
    #[arg(long, default_value = "grid2")]
    pub preset: String,
    /// Write to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, config or input files: exit 2.
    Usage(anyhow::Error),
    /// Everything else: exit 1.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// Rewrites `--key value` and `--key=value` for config keys without a
/// dedicated flag into `--set key=value`.
fn expand_overrides(args: Vec<OsString>) -> Vec<OsString> {
    const DEDICATED: &[&str] = &["seed", "sparsity", "algo", "operator", "lambda", "t0"];
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter().peekable();
    while let Some(a) = it.next() {
        let Some(flag) = a.to_str().and_then(|s| s.strip_prefix("--")) else {
            out.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.replace('-', "_"), Some(v.to_string())),
            None => (flag.replace('-', "_"), None),
        };
        if DEDICATED.contains(&name.as_str()) || !RunConfig::KEYS.contains(&name.as_str()) {
            out.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => Some(v),
            None => it.next().and_then(|v| v.into_string().ok()),
        };
        match value {
            Some(v) => {
                out.push("--set".into());
                out.push(format!("{name}={v}").into());
            }
            None => out.push(a),
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(expand_overrides(std::env::args_os().collect()));
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Flops(a) => commands::flops(a),
        Command::Maskstats(a) => commands::maskstats(a),
        Command::SpecDump(a) => commands::spec_dump(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
