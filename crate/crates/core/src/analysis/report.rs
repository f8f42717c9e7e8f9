use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::stats::{cliffs_delta, wilcoxon_signed_rank, WilcoxonResult};
use super::{path_diversity, top_level, AnalysisError, DiversityScore};
use crate::agent::EpisodeTrace;
use crate::constraint::{Constraint, ViolationLedger};

/// Violation counts for one run, keyed by top-level flight state.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub episodes: usize,
    pub ledger: ViolationLedger,
    pub diversity: DiversityScore,
}

impl RunSummary {
    fn build(traces: &[EpisodeTrace], known: &BTreeSet<&str>) -> Result<RunSummary, AnalysisError> {
        let mut ledger = ViolationLedger::new();
        for t in traces {
            for s in &t.steps {
                if let Some(id) = s.failed.iter().find(|id| !known.contains(id.as_str())) {
                    return Err(AnalysisError::UnknownConstraint {
                        id: id.clone(),
                        state: s.state.clone(),
                    });
                }
                ledger.record_ids(top_level(&s.state), s.failed.iter().map(String::as_str));
            }
        }
        Ok(RunSummary {
            episodes: traces.len(),
            ledger,
            diversity: path_diversity(traces)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateRow {
    pub state: String,
    pub tester_total: u64,
    pub tester_unique: usize,
    pub baseline_total: u64,
    pub baseline_unique: usize,
}

/// AITester against a baseline: violations per state plus diversity statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub tester: RunSummary,
    pub baseline: RunSummary,
    pub rows: Vec<StateRow>,
    /// Ids of constraints without a state scope.
    pub general: BTreeSet<String>,
    /// Paired by episode index; absent when the runs differ in length or
    /// have too few differing pairs.
    pub wilcoxon: Option<WilcoxonResult>,
    pub cliffs_delta: f64,
}

pub fn compile_report(
    tester: &[EpisodeTrace],
    baseline: &[EpisodeTrace],
    constraints: &[Constraint],
) -> Result<ComparisonReport, AnalysisError> {
    let known: BTreeSet<&str> = constraints.iter().map(|c| c.id.as_str()).collect();
    let tester = RunSummary::build(tester, &known)?;
    let baseline = RunSummary::build(baseline, &known)?;
    let states: BTreeSet<&str> = tester.ledger.states().chain(baseline.ledger.states()).collect();
    let rows = states
        .into_iter()
        .map(|s| StateRow {
            state: s.to_string(),
            tester_total: tester.ledger.total(s),
            tester_unique: tester.ledger.unique(s),
            baseline_total: baseline.ledger.total(s),
            baseline_unique: baseline.ledger.unique(s),
        })
        .collect();
    let (a, b) = (&tester.diversity.per_trace, &baseline.diversity.per_trace);
    let wilcoxon = wilcoxon_signed_rank(a, b).ok();
    let cliffs_delta = cliffs_delta(a, b)?;
    Ok(ComparisonReport {
        rows,
        general: constraints
            .iter()
            .filter(|c| c.is_general())
            .map(|c| c.id.clone())
            .collect(),
        tester,
        baseline,
        wilcoxon,
        cliffs_delta,
    })
}

impl ComparisonReport {
    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.state.len()).max().unwrap_or(0).max(12);
        let mut out = String::new();
        let _ = writeln!(out, "{:<w$}  {:>14} {:>7}  {:>14} {:>7}", "", "AITester", "", "Random", "");
        let _ = writeln!(out, "{:<w$}  {:>14} {:>7}  {:>14} {:>7}", "Flight state", "total", "unique", "total", "unique");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w$}  {:>14} {:>7}  {:>14} {:>7}",
                r.state, r.tester_total, r.tester_unique, r.baseline_total, r.baseline_unique
            );
        }
        let _ = writeln!(
            out,
            "{:<w$}  {:>14} {:>7}  {:>14} {:>7}",
            "Total",
            self.tester.ledger.grand_total(),
            self.tester.ledger.grand_unique(),
            self.baseline.ledger.grand_total(),
            self.baseline.ledger.grand_unique()
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Path diversity: AITester {:.4} ({} episodes), Random {:.4} ({} episodes)",
            self.tester.diversity.score, self.tester.episodes, self.baseline.diversity.score, self.baseline.episodes
        );
        match &self.wilcoxon {
            Some(w) => {
                let _ = writeln!(
                    out,
                    "Wilcoxon signed-rank: n={} W+={} W-={} p={:.6e} ({})",
                    w.n,
                    w.w_plus,
                    w.w_minus,
                    w.p,
                    if w.exact { "exact" } else { "normal approximation" }
                );
            }
            None => {
                let _ = writeln!(out, "Wilcoxon signed-rank: not applicable");
            }
        }
        let _ = writeln!(out, "Cliff's delta: {:.4}", self.cliffs_delta);
        if !self.general.is_empty() {
            let ids: Vec<&str> = self.general.iter().map(String::as_str).collect();
            let _ = writeln!(out, "General constraints (counted in the state where they failed): {}", ids.join(", "));
        }
        out
    }

    /// Tab-separated records, one fact per line.
    pub fn render_records(&self) -> String {
        let mut out = String::from("# aitester report v1\n");
        for (run, s) in [("aitester", &self.tester), ("random", &self.baseline)] {
            let mut cells: BTreeMap<(&str, &str), u64> = BTreeMap::new();
            for (state, id, n) in s.ledger.cells() {
                cells.insert((state, id), n);
            }
            for ((state, id), n) in cells {
                let scope = if self.general.contains(id) { "general" } else { "scoped" };
                let _ = writeln!(out, "cell\t{run}\t{state}\t{id}\t{n}\t{scope}");
            }
            let _ = writeln!(
                out,
                "total\t{run}\t{}\t{}\t{}",
                s.episodes,
                s.ledger.grand_total(),
                s.ledger.grand_unique()
            );
            let _ = writeln!(out, "diversity\t{run}\t{}", s.diversity.score);
        }
        for r in &self.rows {
            let _ = writeln!(
                out,
                "state\t{}\t{}\t{}\t{}\t{}",
                r.state, r.tester_total, r.tester_unique, r.baseline_total, r.baseline_unique
            );
        }
        if let Some(w) = &self.wilcoxon {
            let _ = writeln!(out, "wilcoxon\t{}\t{}\t{}\t{}", w.n, w.w_plus, w.w_minus, w.p);
        }
        let _ = writeln!(out, "cliffs_delta\t{}", self.cliffs_delta);
        out
    }
}
