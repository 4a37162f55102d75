//! `riskmap <gen-data|train|eval|predict|bench> [--config FILE] [--key value ...]`

mod cmd;
mod config;
mod error;
mod export;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use config::{read_json, Overrides};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "riskmap", version, about = "Learned VaR / CVaR traversability costmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic toy1d or terrain dataset with truth tables
    GenData(Args),
    /// Train a model on a dataset and write a checkpoint
    Train(Args),
    /// Compare checkpoints and reference comparators over an α grid
    Eval(Args),
    /// Export VaR / CVaR costmaps for one input
    Predict(Args),
    /// Time the handcrafted and learned pipeline stages
    Bench(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON config file; flags take precedence over its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Settings as `--key value` pairs; keys are dotted config paths
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0.., value_name = "--KEY VALUE")]
    settings: Vec<String>,
}

/// Resolved config file and flag overrides of one invocation.
pub struct Ctx {
    pub file: Option<Value>,
    pub flags: Overrides,
}

impl Ctx {
    fn new(args: &Args) -> CliResult<Ctx> {
        let mut flags = Overrides::parse(&args.settings)?;
        let path = args.config.clone().or_else(|| flags.take("config").map(PathBuf::from));
        let file = path.as_deref().map(read_json).transpose()?;
        Ok(Ctx { file, flags })
    }
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("RISKMAP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("RISKMAP_THREADS must be a positive integer, got {v:?}")))?;
    riskmap::par::set_threads(n).map_err(CliError::usage)
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match &cli.command {
        Command::GenData(a) => cmd::gen_data::run(&Ctx::new(a)?),
        Command::Train(a) => cmd::train::run(&Ctx::new(a)?),
        Command::Eval(a) => cmd::eval::run(&Ctx::new(a)?),
        Command::Predict(a) => cmd::predict::run(&Ctx::new(a)?),
        Command::Bench(a) => cmd::bench::run(&Ctx::new(a)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("riskmap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
