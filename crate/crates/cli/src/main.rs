//! `va-engine`: preprocessing, gradient checks, phantom experiments and
//! metric evaluation from the command line.
//!
//! Exit codes: 0 success, 1 check failure, 2 input or contract error,
//! 3 numeric failure.

mod cmd_eval;
mod cmd_experiment;
mod cmd_gradcheck;
mod cmd_preprocess;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "va-engine", version, about = "Volumetric attention engine")]
struct Cli {
    /// Worker threads for data-parallel kernels.
    #[arg(long, global = true, env = "VA_ENGINE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clamp, resample and rescale a `.vol` and write its slab manifest.
    Preprocess(cmd_preprocess::PreprocessArgs),
    /// Finite-difference check of every op and of the attention forward pass.
    Gradcheck(cmd_gradcheck::GradcheckArgs),
    /// Train and evaluate toy models over paired seeds.
    Experiment(cmd_experiment::ExperimentArgs),
    /// Re-run an experiment along one ablation axis.
    Ablate(cmd_experiment::AblateArgs),
    /// Score predicted lesion maps against ground-truth masks.
    Eval(cmd_eval::EvalArgs),
}

/// Options shared by the experiment-style commands.
#[derive(Args, Clone, Debug)]
pub struct OutDir {
    /// Directory receiving the JSON and CSV outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const CHECK: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const NUMERIC: u8 = 3;

    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: Self::INPUT,
            message: message.into(),
        }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self {
            code: Self::CHECK,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<va_core::Error> for Failure {
    fn from(e: va_core::Error) -> Self {
        Self {
            code: if e.is_numeric() { Self::NUMERIC } else { Self::INPUT },
            message: e.to_string(),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

/// Prints the effective configuration of a command to stderr as one JSON
/// line, so it can be fed back with `--config`.
pub fn echo_config<T: Serialize>(command: &str, cfg: &T) {
    let json = serde_json::to_string(cfg).expect("config serializes");
    eprintln!("effective {command} config: {json}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: thread count must be positive");
            return ExitCode::from(Failure::INPUT);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(Failure::INPUT);
        }
    }
    let result = match cli.command {
        Command::Preprocess(a) => cmd_preprocess::run(a),
        Command::Gradcheck(a) => cmd_gradcheck::run(a),
        Command::Experiment(a) => cmd_experiment::run(a),
        Command::Ablate(a) => cmd_experiment::run_ablate(a),
        Command::Eval(a) => cmd_eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
