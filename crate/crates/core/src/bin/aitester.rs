use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aitester::experiment::Experiment;
use aitester::runner::{self, RunError};

/// Reinforcement-learning test generation for UAV flight software.
#[derive(Parser)]
#[command(name = "aitester", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config; the bundled ArduCopter experiment when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the DQN agent.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<u64>,
        /// Training checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a trained model greedily.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Random-action baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Compare AITester traces against baseline traces.
    Report {
        #[command(flatten)]
        common: Common,
        tester: PathBuf,
        baseline: PathBuf,
    },
    /// Turn evaluation test paths into executable scripts.
    ExportScript {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
}

fn experiment(c: &Common) -> Result<Experiment, RunError> {
    let ex = match &c.config {
        Some(p) => Experiment::load(p)?,
        None => Experiment::builtin()?,
    };
    Ok(match c.seed {
        Some(s) => ex.with_seed(s),
        None => ex,
    })
}

fn run(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Train { common, episodes, resume } => {
            let ex = experiment(&common)?;
            let traces = runner::run_train(&ex, episodes, resume.as_deref(), &common.out)?;
            let mean = traces.iter().map(|t| t.cumulative).sum::<f64>() / traces.len().max(1) as f64;
            println!("trained {} episodes, mean reward {mean:.3}, wrote {}", traces.len(), common.out.display());
        }
        Command::Eval { common, model } => {
            let ex = experiment(&common)?;
            let traces = runner::run_eval(&ex, &model, &common.out)?;
            summarize("evaluated", &traces, &common.out);
        }
        Command::Baseline { common, episodes } => {
            let ex = experiment(&common)?;
            let traces = runner::run_baseline(&ex, episodes, &common.out)?;
            summarize("random baseline ran", &traces, &common.out);
        }
        Command::Report { common, tester, baseline } => {
            let ex = experiment(&common)?;
            print!("{}", runner::run_report(&ex, &tester, &baseline, &common.out)?);
        }
        Command::ExportScript { common, model } => {
            let ex = experiment(&common)?;
            let files = runner::run_export(&ex, &model, &common.out)?;
            println!("wrote {} scripts to {}", files.len(), common.out.display());
        }
    }
    Ok(())
}

fn summarize(what: &str, traces: &[aitester::agent::EpisodeTrace], out: &Path) {
    let failed: usize = traces.iter().flat_map(|t| &t.steps).map(|s| s.failed.len()).sum();
    println!("{what} {} episodes, {failed} constraint failures, wrote {}", traces.len(), out.display());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {} (see --help)", first.trim_start_matches("error: ").trim());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
