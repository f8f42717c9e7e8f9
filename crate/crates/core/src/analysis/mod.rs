//! Post-run metrics, comparison reports and test-script export.

mod report;
mod script;
mod stats;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::agent::EpisodeTrace;

pub use report::{compile_report, ComparisonReport, RunSummary, StateRow};
pub use script::{export_script, parse_template, run_sim_script, Template};
pub use stats::{cliffs_delta, mar, wilcoxon_signed_rank, MarSeries, WilcoxonResult, EXACT_LIMIT};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("window {n} does not fit {episodes} episodes")]
    Window { n: usize, episodes: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("paired samples differ in length ({0} vs {1})")]
    Unpaired(usize, usize),
    #[error("{0} non-zero differences; at least 5 are needed")]
    TooFewPairs(usize),
    #[error("no traces")]
    NoTraces,
    #[error("constraint `{id}` failed in {state} but is not in the constraint set")]
    UnknownConstraint { id: String, state: String },
    #[error("template line {line}: {message}")]
    Template { line: usize, message: String },
    #[error("no template entry for action `{0}`")]
    MissingAction(String),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
}

/// Mean pairwise dissimilarity of a trace set, with each trace's share.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityScore {
    pub score: f64,
    /// Mean dissimilarity of trace `i` to every other trace.
    pub per_trace: Vec<f64>,
}

type TransitionSet<'a> = BTreeSet<(&'a str, &'a str, &'a str)>;

/// `1 - |A ∩ B| / |A ∪ B|`; two empty paths are identical.
pub fn jaccard_distance<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).count() as f64 / union as f64
}

/// Path diversity over the traversed transition sets (correct steps only).
pub fn path_diversity(traces: &[EpisodeTrace]) -> Result<DiversityScore, AnalysisError> {
    if traces.is_empty() {
        return Err(AnalysisError::NoTraces);
    }
    let sets: Vec<TransitionSet> = traces.iter().map(|t| t.transitions().collect()).collect();
    let n = sets.len();
    if n == 1 {
        return Ok(DiversityScore {
            score: 0.0,
            per_trace: vec![0.0],
        });
    }
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = jaccard_distance(&sets[i], &sets[j]);
            sums[i] += d;
            sums[j] += d;
        }
    }
    let per_trace: Vec<f64> = sums.iter().map(|s| s / (n - 1) as f64).collect();
    let score = per_trace.iter().sum::<f64>() / n as f64;
    Ok(DiversityScore { score, per_trace })
}

/// Top-level flight state of a flattened name: `Ascend.Straight` -> `Ascend`.
pub fn top_level(state: &str) -> &str {
    state.split('.').next().unwrap_or(state)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::agent::{compute_reward, cumulative_reward, EpisodeEnd, EpisodeTrace, StepRecord};

    /// `steps` are `(state after, action, correct, failed ids)`.
    pub fn trace(episode: u64, steps: &[(&str, &str, bool, &[&str])]) -> EpisodeTrace {
        let steps: Vec<StepRecord> = steps
            .iter()
            .enumerate()
            .map(|(i, (s, a, c, f))| StepRecord {
                tick: i as u64 + 1,
                state: s.to_string(),
                action: a.to_string(),
                correct: *c,
                failed: f.iter().map(|x| x.to_string()).collect(),
                reward: compute_reward(*c, f.len()),
                tuple: None,
            })
            .collect();
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        EpisodeTrace {
            episode,
            initial: "Idle".into(),
            steps,
            end: EpisodeEnd::StepLimit,
            cumulative: cumulative_reward(&rewards, 0.99),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::trace;
    use super::*;

    #[test]
    fn identical_traces_have_zero_diversity() {
        let t = trace(0, &[("Armed", "armUAV", true, &[]), ("Takeoff", "takeoff", true, &[])]);
        let d = path_diversity(&[t.clone(), t]).unwrap();
        assert_eq!(d.score, 0.0);
        assert_eq!(d.per_trace, vec![0.0, 0.0]);
    }

    #[test]
    fn three_traces_match_pairwise_oracle() {
        let a = trace(0, &[("Armed", "armUAV", true, &[]), ("Takeoff", "takeoff", true, &[])]);
        let b = trace(1, &[("Armed", "armUAV", true, &[]), ("Idle", "disarmUAV", true, &[])]);
        let c = trace(2, &[("Idle", "takeoff", false, &[])]);
        let d = path_diversity(&[a, b, c]).unwrap();
        // a/b share 1 of 3 transitions, c traversed nothing
        let ab = 1.0 - 1.0 / 3.0;
        let expected = (ab + 1.0 + 1.0) / 3.0;
        assert!((d.score - expected).abs() < 1e-12);
        assert!((d.per_trace[2] - 1.0).abs() < 1e-12);
        assert!((d.per_trace[0] - (ab + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn top_level_names() {
        assert_eq!(top_level("Ascend.TurningLeft"), "Ascend");
        assert_eq!(top_level("Idle"), "Idle");
    }
}
