use std::collections::BTreeMap;

use super::EvalResult;

/// Violation counts per (flight state, constraint id).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ViolationLedger {
    cells: BTreeMap<String, BTreeMap<String, u64>>,
}

impl ViolationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, state: &str, result: &EvalResult) {
        self.record_ids(state, result.failed.iter().map(String::as_str));
    }

    pub fn record_ids<'a>(&mut self, state: &str, failed: impl IntoIterator<Item = &'a str>) {
        let mut failed = failed.into_iter().peekable();
        if failed.peek().is_none() {
            return;
        }
        let row = self.cells.entry(state.to_string()).or_default();
        for id in failed {
            *row.entry(id.to_string()).or_insert(0) += 1;
        }
    }

    pub fn total(&self, state: &str) -> u64 {
        self.cells.get(state).map_or(0, |r| r.values().sum())
    }

    pub fn unique(&self, state: &str) -> usize {
        self.cells.get(state).map_or(0, |r| r.len())
    }

    pub fn count(&self, state: &str, id: &str) -> u64 {
        self.cells
            .get(state)
            .and_then(|r| r.get(id))
            .copied()
            .unwrap_or(0)
    }

    pub fn states(&self) -> impl Iterator<Item = &str> {
        self.cells.keys().map(String::as_str)
    }

    /// `(state, id, total)` for every recorded cell.
    pub fn cells(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.cells.iter().flat_map(|(s, row)| {
            row.iter()
                .map(move |(id, n)| (s.as_str(), id.as_str(), *n))
        })
    }

    pub fn grand_total(&self) -> u64 {
        self.cells.values().flat_map(|r| r.values()).sum()
    }

    pub fn grand_unique(&self) -> usize {
        self.cells.values().map(|r| r.len()).sum()
    }

    pub fn merge(&mut self, other: &ViolationLedger) {
        for (state, id, n) in other.cells() {
            *self
                .cells
                .entry(state.to_string())
                .or_default()
                .entry(id.to_string())
                .or_insert(0) += n;
        }
    }
}
