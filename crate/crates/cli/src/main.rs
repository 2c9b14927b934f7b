mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::{Format, Status};

#[derive(Parser, Debug)]
#[command(name = "hsd", version, about = "Hierarchical speculative decoding: latency model, optimizer and simulator")]
struct Cli {
    /// Seed for every randomized computation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ProblemSource {
    /// Problem config (JSON).
    #[arg(long, conflicts_with = "example")]
    config: Option<PathBuf>,

    /// Built-in configuration instead of a file.
    #[arg(long, value_enum)]
    example: Option<Example>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Example {
    Example1,
    Example2,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum CaseArg {
    Example1,
    Example2,
    Grid,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    IidCoin,
    ModelBased,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum CostModeArg {
    Configured,
    Wallclock,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find the latency-optimal hierarchy.
    Optimize {
        #[command(flatten)]
        source: ProblemSource,
        /// Override the config's maximum batch size.
        #[arg(long)]
        t_max: Option<u32>,
        /// Use exhaustive search instead of the graph solver.
        #[arg(long)]
        brute_force: bool,
        /// Optimize every prefix of the model list, adding the smallest model each step.
        #[arg(long)]
        ladder: bool,
        /// Solve a synthetic instance with this many drafters instead of a config.
        #[arg(long, conflicts_with_all = ["config", "example"])]
        synthetic: Option<usize>,
    },
    /// Expected latency of a given plan.
    Latency {
        #[command(flatten)]
        source: ProblemSource,
        /// Models of the hierarchy, base first: names or 0-based indices.
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<String>,
        /// Batch sizes, base first.
        #[arg(long = "t", value_delimiter = ',', required = true)]
        t: Vec<u32>,
    },
    /// Expected rounds for a level to collect a batch.
    Gamma {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        ti: u32,
        #[arg(long)]
        tj: u32,
        /// Also estimate by Monte Carlo with this many trials.
        #[arg(long)]
        mc: Option<usize>,
    },
    /// Monte Carlo latency of a plan.
    Simulate {
        #[command(flatten)]
        source: ProblemSource,
        /// Toy model family (JSON); required for model-based or wall-clock runs.
        #[arg(long)]
        family: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<String>,
        #[arg(long = "t", value_delimiter = ',', required = true)]
        t: Vec<u32>,
        /// Tokens per trial.
        #[arg(long, default_value_t = 100_000)]
        tokens: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::IidCoin)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = CostModeArg::Configured)]
        cost_mode: CostModeArg,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        /// Run all four acceptance/cost combinations.
        #[arg(long)]
        compare: bool,
        /// Contexts used to estimate the family's acceptance matrix when no config is given.
        #[arg(long, default_value_t = 1000)]
        contexts: usize,
    },
    /// Estimate a family's acceptance matrix.
    EstimateAlpha {
        #[arg(long)]
        family: PathBuf,
        #[arg(long, default_value_t = 1000)]
        contexts: usize,
    },
    /// Build the reduction graph and optionally export it as DOT.
    Graph {
        #[command(flatten)]
        source: ProblemSource,
        /// DOT output file; the DOT text goes to the report when omitted.
        #[arg(long)]
        dot: Option<PathBuf>,
        #[arg(long)]
        t_max: Option<u32>,
    },
    /// Compare against the published tables.
    Reproduce {
        #[arg(long, value_enum)]
        case: CaseArg,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(report) => match output::emit(&report, cli.format, cli.output.as_deref()) {
            Ok(()) => match report.status {
                Status::Ok => ExitCode::SUCCESS,
                Status::ReproductionFailed => ExitCode::from(1),
            },
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
