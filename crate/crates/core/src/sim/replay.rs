use std::collections::BTreeMap;

use super::{Backend, SimError, StepOutcome, Terminal};
use crate::behavior::{flatten, FlightStateMachine, TransitionTable};
use crate::domain::{make_snapshot, DomainSchema, Snapshot, TupleSlot};

/// One recorded telemetry line: `tick [state=<S>] [crash] path=value ...`
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayRecord {
    pub tick: u64,
    pub state: Option<String>,
    pub crash: bool,
    pub values: Vec<(String, f64)>,
}

pub fn parse_replay(text: &str) -> Result<Vec<ReplayRecord>, SimError> {
    let mut out: Vec<ReplayRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |m: String| SimError::Replay { line, message: m };
        let body = raw.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let tick: u64 = toks
            .next()
            .unwrap()
            .parse()
            .map_err(|_| err("expected a tick number".into()))?;
        if out.last().is_some_and(|r| r.tick >= tick) {
            return Err(err(format!("tick {tick} is not increasing")));
        }
        let mut rec = ReplayRecord {
            tick,
            ..ReplayRecord::default()
        };
        for tok in toks {
            if tok == "crash" {
                rec.crash = true;
                continue;
            }
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| err(format!("expected path=value, got `{tok}`")))?;
            if k == "state" {
                rec.state = Some(v.to_string());
                continue;
            }
            let v: f64 = v.parse().map_err(|_| err(format!("bad number `{v}`")))?;
            rec.values.push((k.to_string(), v));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Plays recorded telemetry back against the machine's transition rules.
pub struct ReplayBackend {
    table: TransitionTable,
    events: BTreeMap<String, usize>,
    records: BTreeMap<u64, ReplayRecord>,
    blank: Snapshot,
    snapshot: Snapshot,
    altitude_path: Option<String>,
    state: usize,
    tick: u64,
    last_tick: u64,
    max_steps: u64,
    terminal: Terminal,
}

impl ReplayBackend {
    pub fn new(
        records: Vec<ReplayRecord>,
        machine: &FlightStateMachine,
        schema: &DomainSchema,
        max_steps: u64,
    ) -> Result<ReplayBackend, SimError> {
        let machine = if machine.is_flat() { machine.clone() } else { flatten(machine)? };
        let table = machine.table()?;
        let blank = make_snapshot(schema, &table.state_names[table.initial]);
        for r in &records {
            for (p, _) in &r.values {
                if blank.get(p).is_none() {
                    return Err(SimError::Replay {
                        line: 0,
                        message: format!("tick {}: unknown path `{p}`", r.tick),
                    });
                }
            }
        }
        let last_tick = records.last().map_or(0, |r| r.tick);
        let mut b = ReplayBackend {
            events: table
                .event_names
                .iter()
                .enumerate()
                .map(|(i, e)| (e.clone(), i))
                .collect(),
            state: table.initial,
            table,
            records: records.into_iter().map(|r| (r.tick, r)).collect(),
            snapshot: blank.clone(),
            blank,
            altitude_path: schema.tuple_path(TupleSlot::ALTITUDE),
            tick: 0,
            last_tick,
            max_steps,
            terminal: Terminal::Running,
        };
        b.reset(0)?;
        Ok(b)
    }

    fn apply(&mut self, tick: u64) -> Result<bool, SimError> {
        let state = self.table.state_names[self.state].clone();
        let Some(rec) = self.records.get(&tick) else {
            self.snapshot.populate_in_place(std::iter::empty(), &state, tick)?;
            return Ok(false);
        };
        if let Some(s) = &rec.state {
            if *s != state {
                return Err(SimError::Replay {
                    line: 0,
                    message: format!("tick {tick}: recorded state {s}, machine is in {state}"),
                });
            }
        }
        let values = rec.values.iter().map(|(p, v)| (p.as_str(), *v));
        self.snapshot.populate_in_place(values, &state, tick)?;
        Ok(rec.crash)
    }

    fn outcome(&self, correct: bool) -> StepOutcome {
        StepOutcome {
            snapshot: self.snapshot.clone(),
            flight_state: self.table.state_names[self.state].clone(),
            action_correct: correct,
            crashed: self.terminal == Terminal::Crashed,
            goal_reached: self.terminal == Terminal::Goal,
        }
    }
}

impl Backend for ReplayBackend {
    fn reset(&mut self, _seed: u64) -> Result<StepOutcome, SimError> {
        self.state = self.table.initial;
        self.tick = 0;
        self.terminal = Terminal::Running;
        self.snapshot = self.blank.clone();
        self.apply(0)?;
        Ok(self.outcome(true))
    }

    fn step(&mut self, event: &str) -> Result<StepOutcome, SimError> {
        if self.terminal.is_done() {
            return Err(SimError::Terminated(self.terminal));
        }
        let e = *self
            .events
            .get(event)
            .ok_or_else(|| SimError::UnknownEvent(event.to_string()))?;
        self.tick += 1;
        let next = self.table.next(self.state, e);
        let crashed = match next {
            Some(n) => {
                self.state = n;
                self.apply(self.tick)?
            }
            None => {
                let state = self.table.state_names[self.state].clone();
                self.snapshot.populate_in_place(std::iter::empty(), &state, self.tick)?;
                false
            }
        };
        let grounded = self
            .altitude_path
            .as_ref()
            .and_then(|p| self.snapshot.get(p))
            .is_none_or(|a| a == 0.0);
        self.terminal = if crashed {
            Terminal::Crashed
        } else if next.is_some() && self.state == self.table.goal && grounded {
            Terminal::Goal
        } else if self.tick >= self.max_steps || self.tick >= self.last_tick {
            Terminal::StepLimit
        } else {
            Terminal::Running
        };
        Ok(self.outcome(next.is_some()))
    }

    fn observe(&self) -> &Snapshot {
        &self.snapshot
    }

    fn is_terminal(&self) -> Terminal {
        self.terminal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::parse_state_machine;
    use crate::domain::parse_domain_schema;

    const LOG: &str = "\
0 state=Idle
1 state=Armed battery.level=99.9
2 state=Takeoff location.altitude_AGL=20.0 airspeed=0.22
3 location.altitude_AGL=10
4 location.altitude_AGL=0
";

    fn backend() -> ReplayBackend {
        let sm = parse_state_machine(include_str!("../../data/arducopter.sm")).unwrap();
        let schema = parse_domain_schema(include_str!("../../data/arducopter.schema")).unwrap();
        ReplayBackend::new(parse_replay(LOG).unwrap(), &sm, &schema, 100).unwrap()
    }

    #[test]
    fn replays_recorded_values() {
        let mut b = backend();
        b.step("armUAV").unwrap();
        let out = b.step("takeoff").unwrap();
        assert_eq!(out.snapshot.get("location.altitude_AGL"), Some(20.0));
        assert_eq!(out.snapshot.get("airspeed"), Some(0.22));
        assert_eq!(out.snapshot.get("battery.level"), Some(99.9));
        let again = b.observe().clone();
        assert_eq!(&again, b.observe());
    }

    #[test]
    fn illegal_event_keeps_values() {
        let mut b = backend();
        let out = b.step("landUAV").unwrap();
        assert!(!out.action_correct);
        assert_eq!(out.flight_state, "Idle");
    }

    #[test]
    fn state_mismatch_is_reported() {
        let mut b = backend();
        b.step("armUAV").unwrap();
        b.step("takeoff").unwrap();
        // tick 3 has no state, tick 4 neither; the log ends there
        b.step("landUAV").unwrap();
        let out = b.step("landUAV").unwrap();
        assert_eq!(b.is_terminal(), Terminal::StepLimit);
        assert_eq!(out.snapshot.get("location.altitude_AGL"), Some(0.0));
        let bad = "0\n1 state=Takeoff\n";
        let sm = parse_state_machine(include_str!("../../data/arducopter.sm")).unwrap();
        let schema = parse_domain_schema(include_str!("../../data/arducopter.schema")).unwrap();
        let mut b = ReplayBackend::new(parse_replay(bad).unwrap(), &sm, &schema, 10).unwrap();
        assert!(b.step("armUAV").is_err());
    }

    #[test]
    fn parse_errors() {
        assert!(parse_replay("x a=1").is_err());
        assert!(parse_replay("1\n1").is_err());
        assert!(parse_replay("1 a=b").is_err());
    }
}
