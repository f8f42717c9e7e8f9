use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::domain::StateTuple;
use crate::sim::Terminal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EpisodeEnd {
    Goal,
    Crashed,
    StepLimit,
    Aborted,
}

impl EpisodeEnd {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeEnd::Goal => "goal",
            EpisodeEnd::Crashed => "crashed",
            EpisodeEnd::StepLimit => "step-limit",
            EpisodeEnd::Aborted => "aborted",
        }
    }
}

impl From<Terminal> for EpisodeEnd {
    fn from(t: Terminal) -> Self {
        match t {
            Terminal::Goal => EpisodeEnd::Goal,
            Terminal::Crashed => EpisodeEnd::Crashed,
            Terminal::StepLimit => EpisodeEnd::StepLimit,
            Terminal::Running => EpisodeEnd::Aborted,
        }
    }
}

impl FromStr for EpisodeEnd {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "goal" => EpisodeEnd::Goal,
            "crashed" => EpisodeEnd::Crashed,
            "step-limit" => EpisodeEnd::StepLimit,
            "aborted" => EpisodeEnd::Aborted,
            other => return Err(other.to_string()),
        })
    }
}

/// One agent decision. `state` is the flight state after the action.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub tick: u64,
    pub state: String,
    pub action: String,
    pub correct: bool,
    pub failed: Vec<String>,
    pub reward: f64,
    /// Observed tuple; not part of the trace file.
    pub tuple: Option<StateTuple>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode: u64,
    /// Flight state before the first step.
    pub initial: String,
    pub steps: Vec<StepRecord>,
    pub end: EpisodeEnd,
    pub cumulative: f64,
}

impl EpisodeTrace {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// `(from, action, to)` for every correct step.
    pub fn transitions(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        let mut prev = self.initial.as_str();
        self.steps.iter().filter_map(move |s| {
            let from = prev;
            prev = s.state.as_str();
            s.correct.then_some((from, s.action.as_str(), s.state.as_str()))
        })
    }

    /// Flight states visited, starting with the initial one.
    pub fn state_sequence(&self) -> Vec<&str> {
        std::iter::once(self.initial.as_str())
            .chain(self.steps.iter().map(|s| s.state.as_str()))
            .collect()
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

pub const TRACE_HEADER: &str = "# aitester trace v1";

/// Header, then per episode its step lines and a footer line.
pub fn write_traces(traces: &[EpisodeTrace], gamma: f64, initial: &str) -> String {
    let mut out = format!("{TRACE_HEADER} gamma={gamma} initial={initial}\n");
    for t in traces {
        append_trace(&mut out, t);
    }
    out
}

pub fn append_trace(out: &mut String, t: &EpisodeTrace) {
    for s in &t.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.episode,
            s.tick,
            s.state,
            s.action,
            u8::from(s.correct),
            s.failed.join(";"),
            s.reward
        );
    }
    let _ = writeln!(out, "{},{},{}", t.episode, t.end.as_str(), t.cumulative);
}

/// Parsed trace file: traces plus the discount factor recorded in the header.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub gamma: f64,
    pub initial: String,
    pub traces: Vec<EpisodeTrace>,
}

pub fn parse_traces(text: &str) -> Result<TraceFile, TraceError> {
    let mut gamma = None;
    let mut initial = None;
    let mut traces = Vec::new();
    let mut current: Option<EpisodeTrace> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |m: String| TraceError { line, message: m };
        if let Some(rest) = raw.strip_prefix(TRACE_HEADER) {
            for tok in rest.split_whitespace() {
                if let Some(v) = tok.strip_prefix("gamma=") {
                    gamma = Some(v.parse::<f64>().map_err(|_| err(format!("bad gamma `{v}`")))?);
                } else if let Some(v) = tok.strip_prefix("initial=") {
                    initial = Some(v.to_string());
                }
            }
            continue;
        }
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let init = initial.clone().ok_or_else(|| err("missing header".into()))?;
        let f: Vec<&str> = raw.split(',').collect();
        let episode: u64 = f[0].parse().map_err(|_| err(format!("bad episode `{}`", f[0])))?;
        match f.len() {
            7 => {
                let t = current.get_or_insert_with(|| EpisodeTrace {
                    episode,
                    initial: init,
                    steps: Vec::new(),
                    end: EpisodeEnd::Aborted,
                    cumulative: 0.0,
                });
                if t.episode != episode {
                    return Err(err(format!("episode {} has no footer", t.episode)));
                }
                t.steps.push(StepRecord {
                    tick: f[1].parse().map_err(|_| err(format!("bad tick `{}`", f[1])))?,
                    state: f[2].to_string(),
                    action: f[3].to_string(),
                    correct: match f[4] {
                        "1" => true,
                        "0" => false,
                        o => return Err(err(format!("bad correct flag `{o}`"))),
                    },
                    failed: if f[5].is_empty() {
                        Vec::new()
                    } else {
                        f[5].split(';').map(str::to_string).collect()
                    },
                    reward: f[6].parse().map_err(|_| err(format!("bad reward `{}`", f[6])))?,
                    tuple: None,
                });
            }
            3 => {
                let mut t = current.take().unwrap_or(EpisodeTrace {
                    episode,
                    initial: init,
                    steps: Vec::new(),
                    end: EpisodeEnd::Aborted,
                    cumulative: 0.0,
                });
                if t.episode != episode {
                    return Err(err(format!("footer for {episode} closes episode {}", t.episode)));
                }
                t.end = f[1].parse().map_err(|e| err(format!("bad terminal kind `{e}`")))?;
                t.cumulative = f[2].parse().map_err(|_| err(format!("bad cumulative `{}`", f[2])))?;
                traces.push(t);
            }
            n => return Err(err(format!("expected 7 or 3 fields, got {n}"))),
        }
    }
    if let Some(t) = current {
        return Err(TraceError {
            line: 0,
            message: format!("episode {} has no footer", t.episode),
        });
    }
    Ok(TraceFile {
        gamma: gamma.ok_or(TraceError {
            line: 1,
            message: "missing header".into(),
        })?,
        initial: initial.unwrap_or_default(),
        traces,
    })
}
