//! `bda`: preprocessing, statistics, training, evaluation and diagnostics.
//!
//! Exit codes: 0 success, 1 data error (or a failed check), 2 usage error.

mod diag;
mod preprocess;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad invocation: missing inputs, conflicting flags, invalid settings.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// A finished command whose outcome is a failure, already reported.
#[derive(Debug)]
pub struct Failed(pub String);

impl fmt::Display for Failed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

#[derive(Parser)]
#[command(name = "bda", version, about = "Building damage assessment from pre/post image pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize label files into mask PNGs.
    Preprocess(preprocess::PreprocessArgs),
    /// Per-level image counts and pixel ratios of damage masks.
    Stats(preprocess::StatsArgs),
    /// Train one variant from dataset manifests.
    Train(run::TrainArgs),
    /// Score a checkpoint on a manifest split, or run a variant sweep.
    Eval(run::EvalArgs),
    /// Finite-difference gradient checks of every component.
    Gradcheck(diag::GradcheckArgs),
    /// Write attention and flow maps of one sample as PNGs.
    DumpAttention(diag::DumpArgs),
    /// Generate a synthetic dataset with a manifest.
    Synth(run::SynthArgs),
    /// List configuration keys with descriptions and defaults.
    Keys,
}

/// Config file and overrides shared by the training commands.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.iterations=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    if let Some(core) = e.downcast_ref::<bda_core::Error>() {
        return if core.is_data_error() { 1 } else { 2 };
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => preprocess::preprocess(&a),
        Command::Stats(a) => preprocess::stats(&a),
        Command::Train(a) => run::train(&a),
        Command::Eval(a) => run::eval(&a),
        Command::Gradcheck(a) => diag::gradcheck(&a),
        Command::DumpAttention(a) => diag::dump_attention(&a),
        Command::Synth(a) => run::synth(&a),
        Command::Keys => {
            print!("{}", bda_core::config::Config::describe());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<Failed>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
