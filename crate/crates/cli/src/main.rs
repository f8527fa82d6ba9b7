mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "flexdesign", version, about = "Flexibility network design experiments")]
struct Cli {
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a scenario instance file.
    Gen(commands::GenArgs),
    /// Estimate the objective of a design on fresh samples.
    Eval(commands::EvalArgs),
    /// Run the greedy heuristic.
    Greedy(commands::HeuristicArgs),
    /// Run the stochastic-programming relaxation heuristic.
    Sp(commands::HeuristicArgs),
    /// Upper bound from the continuous relaxation without a budget.
    Bound(commands::BoundArgs),
    /// Train a PPO designer from scratch.
    Train(commands::TrainArgs),
    /// Meta-train an initialization across budgets.
    MetaTrain(commands::MetaTrainArgs),
    /// Train from a meta-trained checkpoint on a new budget.
    Adapt(commands::AdaptArgs),
    /// Run several methods over a list of budgets and tabulate them on shared samples.
    Compare(commands::CompareArgs),
}

/// Flags shared by every command that writes a run directory.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Parent directory of run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record zero for every wall-clock time so reruns are byte-identical.
    #[arg(long)]
    pub fixed_clock: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineArg {
    Flow,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSetArg {
    Add,
    AddDelete,
}

/// Errors that map to specific exit codes.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Validation(_) => EXIT_VALIDATION,
                CliError::Numerical(_) => EXIT_NUMERICAL,
            };
        }
        if let Some(e) = cause.downcast_ref::<flexdesign::Error>() {
            return match e {
                flexdesign::Error::Numerical(_) => EXIT_NUMERICAL,
                e if e.is_validation() => EXIT_VALIDATION,
                _ => EXIT_FAILURE,
            };
        }
        if cause.is::<serde_json::Error>() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_FAILURE
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Eval(a) => commands::eval(a),
        Command::Greedy(a) => commands::heuristic(a, commands::Heuristic::Greedy),
        Command::Sp(a) => commands::heuristic(a, commands::Heuristic::Sp),
        Command::Bound(a) => commands::bound(a),
        Command::Train(a) => commands::train(a),
        Command::MetaTrain(a) => commands::meta_train(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
