//! File-level workflows behind the command-line tool. Every run writes into
//! an output directory:
//!
//! - `traces.csv`: episode traces
//! - `checkpoint.bin`: full training state (train only)
//! - `model.bin`: policy network (train only)
//! - `mar.dat`: episode, reward, moving average (train and baseline)
//! - `report.txt`, `report.tsv`: comparison (report only)
//! - `episode-<n>.script`: exported test scripts (export-script only)

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::{
    evaluate_policy, load_model, load_training, parse_traces, random_baseline, save_model, save_training, train,
    write_traces, append_trace, AgentError, EpisodeTrace, SeedStream, TraceError, TraceFile, episode_seed,
};
use crate::analysis::{compile_report, export_script, mar, parse_template, AnalysisError};
use crate::experiment::{Experiment, ExperimentError};

pub const TRACES: &str = "traces.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const MODEL: &str = "model.bin";
pub const MAR_DATA: &str = "mar.dat";
pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_RECORDS: &str = "report.tsv";

/// Largest moving-average window used for `mar.dat`.
pub const MAR_WINDOW: usize = 350;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Trace { path: String, source: TraceError },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, RunError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

/// Write to a sibling temp file, then rename over the target.
fn write_atomic(path: &Path, data: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, data).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn prepare(out: &Path) -> Result<(), RunError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

pub fn read_traces(path: &Path) -> Result<TraceFile, RunError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_traces(&text).map_err(|source| RunError::Trace {
        path: path.display().to_string(),
        source,
    })
}

/// A directory holding `traces.csv`, or the trace file itself.
fn trace_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(TRACES)
    } else {
        p.to_path_buf()
    }
}

fn write_mar(out: &Path, traces: &[EpisodeTrace]) -> Result<(), RunError> {
    let rewards: Vec<f64> = traces.iter().map(|t| t.cumulative).collect();
    let mut text = String::from("# episode reward mar\n");
    let n = MAR_WINDOW.min(rewards.len().saturating_sub(1)).max(1);
    let series = mar(&rewards, n)?;
    for (i, r) in rewards.iter().enumerate() {
        let m = i
            .checked_sub(n - 1)
            .map_or(String::from("-"), |k| series.values[k].to_string());
        text.push_str(&format!("{} {} {}\n", traces[i].episode, r, m));
    }
    write_atomic(&out.join(MAR_DATA), text.as_bytes())
}

/// Trains, writing traces and checkpoints. With `resume`, training continues
/// from the checkpoint and new episodes are appended to an existing trace file.
pub fn run_train(ex: &Experiment, episodes: Option<u64>, resume: Option<&Path>, out: &Path) -> Result<Vec<EpisodeTrace>, RunError> {
    prepare(out)?;
    let mut cfg = ex.train.clone();
    if let Some(n) = episodes {
        cfg.training_episodes = n;
    }
    let learner = match resume {
        Some(p) => {
            let (l, names) = load_training(&read_bytes(p)?)?;
            ex.setup.check_model(&l.policy, &names)?;
            Some(l)
        }
        None => None,
    };
    let trace_file = out.join(TRACES);
    let mut prior = Vec::new();
    let mut text = match (&learner, trace_file.exists()) {
        (Some(l), true) => {
            let existing = read_traces(&trace_file)?;
            if existing.traces.len() as u64 != l.episodes_done {
                return Err(RunError::Usage(format!(
                    "{} holds {} episodes but the checkpoint has {}",
                    trace_file.display(),
                    existing.traces.len(),
                    l.episodes_done
                )));
            }
            prior = existing.traces;
            fs::read_to_string(&trace_file).map_err(|e| io_err(&trace_file, e))?
        }
        _ => write_traces(&[], cfg.gamma, ex.setup.initial()),
    };
    let mut env = ex.simulator().map_err(ExperimentError::from)?;
    let actions = ex.setup.actions().to_vec();
    let ckpt = out.join(CHECKPOINT);
    let every = cfg.checkpoint_every;
    let result = train(&cfg, &ex.setup, &mut env, learner, |l, t| {
        append_trace(&mut text, t);
        if every > 0 && l.episodes_done % every == 0 {
            write_atomic(&ckpt, &save_training(l, &actions)).map_err(|e| AgentError::Io(e.to_string()))?;
            write_atomic(&trace_file, text.as_bytes()).map_err(|e| AgentError::Io(e.to_string()))?;
        }
        Ok(())
    })?;
    write_atomic(&trace_file, text.as_bytes())?;
    write_atomic(&ckpt, &save_training(&result.learner, &actions))?;
    write_atomic(&out.join(MODEL), &save_model(&result.learner.policy, &actions))?;
    prior.extend(result.traces.iter().cloned());
    write_mar(out, &prior)?;
    Ok(result.traces)
}

fn load_policy(ex: &Experiment, model: &Path) -> Result<crate::Network, RunError> {
    let (net, names) = load_model(&read_bytes(model)?)?;
    ex.setup.check_model(&net, &names)?;
    Ok(net)
}

/// Greedy evaluation of a saved model.
pub fn run_eval(ex: &Experiment, model: &Path, out: &Path) -> Result<Vec<EpisodeTrace>, RunError> {
    prepare(out)?;
    let net = load_policy(ex, model)?;
    let mut env = ex.simulator().map_err(ExperimentError::from)?;
    let traces = evaluate_policy(&ex.train, &ex.setup, &mut env, &net)?;
    write_atomic(&out.join(TRACES), write_traces(&traces, ex.train.gamma, ex.setup.initial()).as_bytes())?;
    Ok(traces)
}

/// Uniform random actions on the evaluation seeds, `episodes` defaulting to
/// the configured evaluation count.
pub fn run_baseline(ex: &Experiment, episodes: Option<u64>, out: &Path) -> Result<Vec<EpisodeTrace>, RunError> {
    prepare(out)?;
    let n = episodes.unwrap_or(ex.train.evaluation_episodes);
    let mut env = ex.simulator().map_err(ExperimentError::from)?;
    let traces = random_baseline(&ex.train, &ex.setup, &mut env, n, SeedStream::Evaluation)?;
    write_atomic(&out.join(TRACES), write_traces(&traces, ex.train.gamma, ex.setup.initial()).as_bytes())?;
    write_mar(out, &traces)?;
    Ok(traces)
}

/// Compares two trace sets; returns the rendered table.
pub fn run_report(ex: &Experiment, tester: &Path, baseline: &Path, out: &Path) -> Result<String, RunError> {
    prepare(out)?;
    let a = read_traces(&trace_path(tester))?;
    let b = read_traces(&trace_path(baseline))?;
    let report = compile_report(&a.traces, &b.traces, &ex.setup.constraints)?;
    let table = report.render_table();
    write_atomic(&out.join(REPORT_TABLE), table.as_bytes())?;
    write_atomic(&out.join(REPORT_RECORDS), report.render_records().as_bytes())?;
    Ok(table)
}

/// File name of an exported script.
pub fn script_name(episode: u64) -> String {
    format!("episode-{episode:03}.script")
}

/// Evaluates the model and writes one test script per episode. Each script
/// records the environment seed its episode ran under.
pub fn run_export(ex: &Experiment, model: &Path, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    prepare(out)?;
    let template = parse_template(&ex.template)?;
    let traces = run_eval(ex, model, out)?;
    let mut written = Vec::new();
    for t in &traces {
        let seed = episode_seed(ex.train.seed, SeedStream::Evaluation, t.episode);
        let script = format!("# env-seed {seed}\n{}", export_script(t, &template)?);
        let path = out.join(script_name(t.episode));
        write_atomic(&path, script.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// The `# env-seed <n>` header written by [`run_export`].
pub fn script_seed(script: &str) -> Option<u64> {
    script
        .lines()
        .find_map(|l| l.strip_prefix("# env-seed "))
        .and_then(|s| s.trim().parse().ok())
}
