//! Goal-based flight environment.
//!
//! Every backend follows the same contract: `reset` puts the vehicle at rest
//! in the machine's initial state, `step` applies one event for one tick, and
//! `is_terminal` reports crash, goal, or the step limit. An event that is not
//! legal in the current state leaves the flight state and physics untouched;
//! only the tick and the battery advance.

mod config;
mod quad;
mod replay;

use thiserror::Error;

use crate::behavior::ModelError;
use crate::config::ConfigError;
use crate::domain::{DomainError, Snapshot};

pub use config::{FaultSpec, SimConfig};
pub use quad::{Quantity, QuadSim};
pub use replay::{parse_replay, ReplayBackend, ReplayRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("episode already terminated ({0})")]
    Terminated(Terminal),
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("machine: {0}")]
    Model(#[from] ModelError),
    #[error("domain: {0}")]
    Domain(#[from] DomainError),
    #[error("replay line {line}: {message}")]
    Replay { line: usize, message: String },
}

impl From<ConfigError> for SimError {
    fn from(e: ConfigError) -> Self {
        SimError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    Running,
    Crashed,
    Goal,
    StepLimit,
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::Running => "running",
            Terminal::Crashed => "crashed",
            Terminal::Goal => "goal",
            Terminal::StepLimit => "step-limit",
        }
    }

    pub fn is_done(self) -> bool {
        self != Terminal::Running
    }
}

impl std::fmt::Display for Terminal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Terminal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "running" => Terminal::Running,
            "crashed" => Terminal::Crashed,
            "goal" => Terminal::Goal,
            "step-limit" => Terminal::StepLimit,
            "aborted" => Terminal::Running,
            other => return Err(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub snapshot: Snapshot,
    pub flight_state: String,
    pub action_correct: bool,
    pub crashed: bool,
    pub goal_reached: bool,
}

pub trait Backend {
    /// Starts a new episode; the same seed gives the same episode.
    fn reset(&mut self, seed: u64) -> Result<StepOutcome, SimError>;
    fn step(&mut self, event: &str) -> Result<StepOutcome, SimError>;
    fn observe(&self) -> &Snapshot;
    fn is_terminal(&self) -> Terminal;
}
