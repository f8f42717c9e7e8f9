//! Flight behavior state machine: parsing, flattening and the queries the
//! environment and agent use to decide legality and the next flight state.

mod flatten;
pub(crate) mod parse;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use flatten::flatten;
pub use parse::parse_state_machine;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: undeclared state `{name}`")]
    UndeclaredState { line: usize, name: String },
    #[error("line {line}: undeclared event `{name}`")]
    UndeclaredEvent { line: usize, name: String },
    #[error("line {line}: unknown stereotype `{name}`")]
    UnknownStereotype { line: usize, name: String },
    #[error("line {line}: event `{name}` is a {kind} event; only call events can be driven by the agent")]
    UnsupportedEvent {
        line: usize,
        name: String,
        kind: String,
    },
    #[error("line {line}: duplicate state `{name}`")]
    DuplicateState { line: usize, name: String },
    #[error("line {line}: duplicate event `{name}`")]
    DuplicateEvent { line: usize, name: String },
    #[error("line {line}: duplicate transition from `{state}` on `{event}`")]
    DuplicateTransition {
        line: usize,
        state: String,
        event: String,
    },
    #[error("{0}")]
    Marker(String),
    #[error("composite state `{0}` declares no initial substate")]
    MissingSubInitial(String),
    #[error("state `{0}` is not reachable from the initial state")]
    Unreachable(String),
    #[error("non-goal state `{0}` has no outgoing transition")]
    DeadEnd(String),
    #[error("conflicting transitions from `{state}` on `{event}`")]
    Conflict { state: String, event: String },
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
}

/// Flight phase vocabulary that state stereotypes are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Disarmed,
    Armed,
    Taxiing,
    Takeoff,
    Climb,
    Cruise,
    Descent,
    AltitudeHold,
    PositionHold,
    Loiter,
    Circle,
    Flipping,
    Drifting,
    FlyingStraight,
    TurningLeft,
    TurningRight,
    Approach,
    Landing,
}

impl Phase {
    pub const ALL: [Phase; 18] = [
        Phase::Disarmed,
        Phase::Armed,
        Phase::Taxiing,
        Phase::Takeoff,
        Phase::Climb,
        Phase::Cruise,
        Phase::Descent,
        Phase::AltitudeHold,
        Phase::PositionHold,
        Phase::Loiter,
        Phase::Circle,
        Phase::Flipping,
        Phase::Drifting,
        Phase::FlyingStraight,
        Phase::TurningLeft,
        Phase::TurningRight,
        Phase::Approach,
        Phase::Landing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Disarmed => "Disarmed",
            Phase::Armed => "Armed",
            Phase::Taxiing => "Taxiing",
            Phase::Takeoff => "Takeoff",
            Phase::Climb => "Climb",
            Phase::Cruise => "Cruise",
            Phase::Descent => "Descent",
            Phase::AltitudeHold => "AltitudeHold",
            Phase::PositionHold => "PositionHold",
            Phase::Loiter => "Loiter",
            Phase::Circle => "Circle",
            Phase::Flipping => "Flipping",
            Phase::Drifting => "Drifting",
            Phase::FlyingStraight => "FlyingStraight",
            Phase::TurningLeft => "TurningLeft",
            Phase::TurningRight => "TurningRight",
            Phase::Approach => "Approach",
            Phase::Landing => "Landing",
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Phase::TurningLeft | Phase::TurningRight)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Ascend/Descend and TakeOff are spellings used interchangeably in flight manuals.
        let canonical = match s {
            "Ascend" => "Climb",
            "Descend" => "Descent",
            "TakeOff" => "Takeoff",
            "Straight" => "FlyingStraight",
            other => other,
        };
        Phase::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == canonical)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDef {
    pub name: String,
    pub stereotype: Option<Phase>,
    /// Stereotypes of enclosing composite states, outermost first. Only
    /// populated on flattened machines.
    pub lineage: Vec<Phase>,
    pub substates: Option<Region>,
}

impl StateDef {
    pub fn simple(name: impl Into<String>, stereotype: Option<Phase>) -> Self {
        StateDef {
            name: name.into(),
            stereotype,
            lineage: Vec::new(),
            substates: None,
        }
    }

    pub fn is_composite(&self) -> bool {
        self.substates.is_some()
    }

    /// Every phase this state belongs to: enclosing stereotypes first, then its own.
    pub fn phases(&self) -> impl Iterator<Item = Phase> + '_ {
        self.lineage.iter().copied().chain(self.stereotype)
    }
}

/// The nested state machine owned by a composite state.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub states: Vec<StateDef>,
    pub transitions: Vec<Transition>,
    pub initial: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub source: String,
    pub event: String,
    pub target: String,
}

impl Transition {
    pub fn new(source: &str, event: &str, target: &str) -> Self {
        Transition {
            source: source.to_string(),
            event: event.to_string(),
            target: target.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightStateMachine {
    pub states: Vec<StateDef>,
    pub events: Vec<String>,
    pub transitions: Vec<Transition>,
    pub initial: String,
    pub goal: String,
}

impl FlightStateMachine {
    /// Number of state declarations, counting substates of composites.
    pub fn declared_state_count(&self) -> usize {
        fn count(states: &[StateDef]) -> usize {
            states
                .iter()
                .map(|s| 1 + s.substates.as_ref().map_or(0, |r| count(&r.states)))
                .sum()
        }
        count(&self.states)
    }

    /// Number of transitions, counting those declared inside composites.
    pub fn declared_transition_count(&self) -> usize {
        fn count(states: &[StateDef]) -> usize {
            states
                .iter()
                .filter_map(|s| s.substates.as_ref())
                .map(|r| r.transitions.len() + count(&r.states))
                .sum()
        }
        self.transitions.len() + count(&self.states)
    }

    pub fn is_flat(&self) -> bool {
        self.states.iter().all(|s| !s.is_composite())
    }

    pub fn state(&self, name: &str) -> Option<&StateDef> {
        self.states.iter().find(|s| s.name == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.name == name)
    }

    pub fn event_index(&self, name: &str) -> Option<usize> {
        self.events.iter().position(|e| e == name)
    }

    fn require_state(&self, name: &str) -> Result<&StateDef, ModelError> {
        self.state(name)
            .ok_or_else(|| ModelError::UnknownState(name.to_string()))
    }

    /// Events that are correct actions in `state`.
    pub fn legal_actions(&self, state: &str) -> Result<BTreeSet<&str>, ModelError> {
        self.require_state(state)?;
        Ok(self
            .transitions
            .iter()
            .filter(|t| t.source == state)
            .map(|t| t.event.as_str())
            .collect())
    }

    /// Target of the `(state, event)` transition; `None` marks an incorrect action.
    pub fn next_state(&self, state: &str, event: &str) -> Result<Option<&str>, ModelError> {
        self.require_state(state)?;
        if self.event_index(event).is_none() {
            return Err(ModelError::UnknownEvent(event.to_string()));
        }
        Ok(self
            .transitions
            .iter()
            .find(|t| t.source == state && t.event == event)
            .map(|t| t.target.as_str()))
    }

    pub fn is_goal(&self, state: &str) -> Result<bool, ModelError> {
        self.require_state(state)?;
        Ok(state == self.goal)
    }

    /// States reachable from the initial state (flat machines only).
    pub fn reachable(&self) -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([self.initial.as_str()]);
        while let Some(s) = queue.pop_front() {
            if !seen.insert(s) {
                continue;
            }
            for t in self.transitions.iter().filter(|t| t.source == s) {
                queue.push_back(t.target.as_str());
            }
        }
        seen
    }

    /// Whether `state` lies within `scope`: same name, a dotted descendant of
    /// it, or carrying `scope` as one of its phases.
    pub fn state_in_scope(&self, state: &str, scope: &str) -> bool {
        if name_in_scope(state, scope) {
            return true;
        }
        match (self.state(state), Phase::from_str(scope)) {
            (Some(def), Ok(phase)) => def.phases().any(|p| p == phase),
            _ => false,
        }
    }

    /// Dense lookup table over a flat machine.
    pub fn table(&self) -> Result<TransitionTable, ModelError> {
        if !self.is_flat() {
            let s = self.states.iter().find(|s| s.is_composite()).unwrap();
            return Err(ModelError::Marker(format!(
                "machine must be flattened before use (composite state `{}`)",
                s.name
            )));
        }
        let events: HashMap<&str, usize> = self
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_str(), i))
            .collect();
        let states: HashMap<&str, usize> = self
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        let mut next = vec![None; self.states.len() * self.events.len()];
        for t in &self.transitions {
            let s = states[t.source.as_str()];
            let e = events[t.event.as_str()];
            next[s * self.events.len() + e] = Some(states[t.target.as_str()]);
        }
        Ok(TransitionTable {
            state_names: self.states.iter().map(|s| s.name.clone()).collect(),
            event_names: self.events.clone(),
            next,
            initial: states[self.initial.as_str()],
            goal: states[self.goal.as_str()],
        })
    }
}

pub(crate) fn name_in_scope(state: &str, scope: &str) -> bool {
    state == scope
        || (state.len() > scope.len()
            && state.starts_with(scope)
            && state.as_bytes()[scope.len()] == b'.')
}

/// Index-based view of a flat machine for the hot simulation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub state_names: Vec<String>,
    pub event_names: Vec<String>,
    next: Vec<Option<usize>>,
    pub initial: usize,
    pub goal: usize,
}

impl TransitionTable {
    pub fn state_count(&self) -> usize {
        self.state_names.len()
    }

    pub fn event_count(&self) -> usize {
        self.event_names.len()
    }

    pub fn next(&self, state: usize, event: usize) -> Option<usize> {
        self.next[state * self.event_names.len() + event]
    }

    pub fn is_legal(&self, state: usize, event: usize) -> bool {
        self.next(state, event).is_some()
    }

    pub fn legal_count(&self, state: usize) -> usize {
        (0..self.event_count())
            .filter(|&e| self.is_legal(state, e))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARDUCOPTER: &str = include_str!("../../data/arducopter.sm");

    fn arducopter() -> FlightStateMachine {
        flatten(&parse_state_machine(ARDUCOPTER).unwrap()).unwrap()
    }

    #[test]
    fn takeoff_has_six_options() {
        let sm = arducopter();
        let got: Vec<_> = sm.legal_actions("Takeoff").unwrap().into_iter().collect();
        let mut want = vec![
            "increaseAlt",
            "decreaseAlt",
            "startLoiter",
            "holdPosition",
            "holdAlt",
            "landUAV",
        ];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn idle_only_arms() {
        let sm = arducopter();
        let got: Vec<_> = sm.legal_actions("Idle").unwrap().into_iter().collect();
        assert_eq!(got, vec!["armUAV"]);
        assert!(!sm.legal_actions("Armed").unwrap().contains("startLoiter"));
    }

    #[test]
    fn next_state_lookups() {
        let sm = arducopter();
        assert_eq!(sm.next_state("Idle", "armUAV").unwrap(), Some("Armed"));
        assert_eq!(sm.next_state("Armed", "takeoff").unwrap(), Some("Takeoff"));
        assert_eq!(sm.next_state("Armed", "startLoiter").unwrap(), None);
        assert!(matches!(
            sm.next_state("Hover", "armUAV"),
            Err(ModelError::UnknownState(_))
        ));
        assert!(matches!(
            sm.next_state("Idle", "warpDrive"),
            Err(ModelError::UnknownEvent(_))
        ));
    }

    #[test]
    fn goal_queries() {
        let sm = arducopter();
        assert!(sm.is_goal("Idle").unwrap());
        assert!(!sm.is_goal("Ascend.Straight").unwrap());
        assert!(sm.is_goal("Nowhere").is_err());
        let one = parse_state_machine("state Only stereotype=Disarmed initial goal\n").unwrap();
        assert!(one.is_goal("Only").unwrap());
    }

    #[test]
    fn non_goal_states_have_actions() {
        let sm = arducopter();
        for s in &sm.states {
            if s.name != sm.goal {
                assert!(!sm.legal_actions(&s.name).unwrap().is_empty(), "{}", s.name);
            }
        }
    }

    #[test]
    fn scope_matching_uses_names_and_phases() {
        let sm = arducopter();
        assert!(sm.state_in_scope("Ascend.TurningLeft", "Ascend"));
        assert!(sm.state_in_scope("Ascend.TurningLeft", "Climb"));
        assert!(sm.state_in_scope("Descend", "Descent"));
        assert!(!sm.state_in_scope("AscendX", "Ascend"));
        assert!(!sm.state_in_scope("Loiter", "Landing"));
    }

    #[test]
    fn table_agrees_with_queries() {
        let sm = arducopter();
        let table = sm.table().unwrap();
        for (si, s) in table.state_names.iter().enumerate() {
            for (ei, e) in table.event_names.iter().enumerate() {
                let via_table = table.next(si, ei).map(|t| table.state_names[t].as_str());
                assert_eq!(via_table, sm.next_state(s, e).unwrap());
            }
        }
        assert_eq!(table.state_names[table.goal], "Idle");
    }
}
