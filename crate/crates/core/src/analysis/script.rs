use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::AnalysisError;
use crate::agent::EpisodeTrace;
use crate::sim::{Backend, QuadSim};

/// Per-action command bodies for one execution backend.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Template {
    pub prelude: String,
    pub actions: BTreeMap<String, String>,
}

/// `action <Name> => body` on one line, or `action <Name> =>` followed by
/// body lines up to `end`. `prelude =>` works the same way. Outside a
/// block, blank lines and `#` comments are ignored.
pub fn parse_template(text: &str) -> Result<Template, AnalysisError> {
    let mut t = Template::default();
    let mut open: Option<(usize, Option<String>, Vec<&str>)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if let Some((_, _, body)) = open.as_mut() {
            if raw.trim() == "end" {
                let (start, name, body) = open.take().unwrap();
                t.insert(start, name, body.join("\n"))?;
            } else {
                body.push(raw);
            }
            continue;
        }
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |m: String| AnalysisError::Template { line, message: m };
        let (head, rest) = trimmed
            .split_once("=>")
            .ok_or_else(|| err(format!("expected `action <Name> =>`, found `{trimmed}`")))?;
        let name = match head.split_whitespace().collect::<Vec<_>>()[..] {
            ["prelude"] => None,
            ["action", name] => Some(name.to_string()),
            _ => return Err(err(format!("bad entry header `{}`", head.trim()))),
        };
        let rest = rest.trim();
        if rest.is_empty() {
            open = Some((line, name, Vec::new()));
        } else {
            t.insert(line, name, rest.to_string())?;
        }
    }
    if let Some((line, name, _)) = open {
        return Err(AnalysisError::Template {
            line,
            message: format!("`{}` has no `end`", name.as_deref().unwrap_or("prelude")),
        });
    }
    Ok(t)
}

impl Template {
    fn insert(&mut self, line: usize, name: Option<String>, body: String) -> Result<(), AnalysisError> {
        let dup = |what: &str| AnalysisError::Template {
            line,
            message: format!("duplicate entry for {what}"),
        };
        match name {
            None if !self.prelude.is_empty() => Err(dup("prelude")),
            None => {
                self.prelude = body;
                Ok(())
            }
            Some(n) => {
                if self.actions.contains_key(&n) {
                    return Err(dup(&n));
                }
                self.actions.insert(n, body);
                Ok(())
            }
        }
    }
}

/// Expands a test path into a script: one template body per correct action,
/// in trace order. Incorrect actions changed nothing and become comments.
pub fn export_script(trace: &EpisodeTrace, template: &Template) -> Result<String, AnalysisError> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# test path: episode {}, {} steps, from {}",
        trace.episode,
        trace.steps.len(),
        trace.initial
    );
    if !template.prelude.is_empty() {
        out.push_str(&template.prelude);
        out.push('\n');
    }
    let mut state = trace.initial.as_str();
    for s in &trace.steps {
        if s.correct {
            let body = template
                .actions
                .get(&s.action)
                .ok_or_else(|| AnalysisError::MissingAction(s.action.clone()))?;
            let _ = writeln!(out, "# {} -> {}", s.action, s.state);
            out.push_str(body);
            out.push('\n');
        } else {
            let _ = writeln!(out, "# skipped {} (not enabled in {state})", s.action);
        }
        state = &s.state;
    }
    Ok(out)
}

/// Executes the `step <event>` lines of a simulator script from a fresh
/// reset under `seed`; returns the flight states visited, initial first.
pub fn run_sim_script(script: &str, sim: &mut QuadSim, seed: u64) -> Result<Vec<String>, AnalysisError> {
    let err = |line: usize, m: String| AnalysisError::Script { line, message: m };
    let first = sim.reset(seed).map_err(|e| err(0, e.to_string()))?;
    let mut states = vec![first.flight_state];
    for (i, raw) in script.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let event = match body.split_whitespace().collect::<Vec<_>>()[..] {
            ["step", e] => e,
            _ => return Err(err(line, format!("expected `step <event>`, found `{body}`"))),
        };
        let out = sim.step(event).map_err(|e| err(line, e.to_string()))?;
        states.push(out.flight_state);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::trace;
    use super::*;

    const TMPL: &str = "\
# demo
prelude =>
import drone
end
action armUAV => drone.arm()
action takeoff =>
drone.takeoff(20)
drone.wait()
end
";

    #[test]
    fn parses_one_line_and_block_entries() {
        let t = parse_template(TMPL).unwrap();
        assert_eq!(t.prelude, "import drone");
        assert_eq!(t.actions["armUAV"], "drone.arm()");
        assert_eq!(t.actions["takeoff"], "drone.takeoff(20)\ndrone.wait()");
    }

    #[test]
    fn template_errors() {
        assert!(parse_template("action a =>\nx\n").is_err());
        assert!(parse_template("action a => x\naction a => y").is_err());
        assert!(parse_template("bogus line").is_err());
    }

    #[test]
    fn export_orders_calls_and_comments_skips() {
        let t = parse_template(TMPL).unwrap();
        let tr = trace(
            3,
            &[
                ("Armed", "armUAV", true, &[]),
                ("Armed", "landUAV", false, &[]),
                ("Takeoff", "takeoff", true, &[]),
            ],
        );
        let s = export_script(&tr, &t).unwrap();
        let arm = s.find("drone.arm()").unwrap();
        let take = s.find("drone.takeoff(20)").unwrap();
        assert!(arm < take);
        assert!(s.contains("# skipped landUAV (not enabled in Armed)"));
    }

    #[test]
    fn empty_trace_is_header_only() {
        let s = export_script(&trace(0, &[]), &Template::default()).unwrap();
        assert_eq!(s.lines().count(), 1);
    }

    #[test]
    fn missing_action_is_named() {
        let tr = trace(0, &[("Armed", "armUAV", true, &[])]);
        assert_eq!(
            export_script(&tr, &Template::default()),
            Err(AnalysisError::MissingAction("armUAV".into()))
        );
    }
}
