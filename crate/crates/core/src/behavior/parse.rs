use std::collections::HashSet;

use super::{FlightStateMachine, ModelError, Phase, Region, StateDef, Transition};

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Whitespace-separated words with their 1-based column.
pub(crate) fn words(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ModelError {
    ModelError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

#[derive(Default)]
struct Frame {
    name: Option<String>,
    line: usize,
    states: Vec<StateDef>,
    transitions: Vec<(usize, Transition)>,
    initial: Option<String>,
    goal: Option<String>,
    header: Option<StateHeader>,
}

struct StateHeader {
    stereotype: Option<Phase>,
    initial: bool,
    goal: bool,
}

struct Declaration<'a> {
    name: &'a str,
    header: StateHeader,
    opens: bool,
}

fn parse_declaration<'a>(
    lineno: usize,
    toks: &[(usize, &'a str)],
    composite: bool,
) -> Result<Declaration<'a>, ModelError> {
    let (col, name) = *toks
        .get(1)
        .ok_or_else(|| syntax(lineno, toks[0].0, "expected a state name"))?;
    if !is_identifier(name) || name.contains('.') {
        return Err(syntax(lineno, col, format!("invalid state name `{name}`")));
    }
    let mut header = StateHeader {
        stereotype: None,
        initial: false,
        goal: false,
    };
    let mut opens = false;
    for (i, &(col, tok)) in toks.iter().enumerate().skip(2) {
        if let Some(value) = tok.strip_prefix("stereotype=") {
            let phase = value.parse::<Phase>().map_err(|name| ModelError::UnknownStereotype {
                line: lineno,
                name,
            })?;
            header.stereotype = Some(phase);
        } else if tok == "initial" {
            header.initial = true;
        } else if tok == "goal" {
            header.goal = true;
        } else if tok == "{" && composite && i == toks.len() - 1 {
            opens = true;
        } else {
            return Err(syntax(lineno, col, format!("unexpected `{tok}`")));
        }
    }
    if composite && !opens {
        return Err(syntax(
            lineno,
            toks.last().unwrap().0,
            "composite declaration must end with `{`",
        ));
    }
    Ok(Declaration { name, header, opens })
}

fn parse_transition(lineno: usize, toks: &[(usize, &str)]) -> Result<Transition, ModelError> {
    if toks.len() != 4 {
        let col = toks.get(4).map_or(toks[0].0, |t| t.0);
        return Err(syntax(
            lineno,
            col,
            "expected `trans <Source> --<event>--> <Target>`",
        ));
    }
    let (scol, source) = toks[1];
    let (acol, arrow) = toks[2];
    let (tcol, target) = toks[3];
    let event = arrow
        .strip_prefix("--")
        .and_then(|a| a.strip_suffix("-->"))
        .ok_or_else(|| syntax(lineno, acol, format!("malformed arrow `{arrow}`")))?;
    for (col, id) in [(scol, source), (acol + 2, event), (tcol, target)] {
        if !is_identifier(id) {
            return Err(syntax(lineno, col, format!("invalid identifier `{id}`")));
        }
    }
    Ok(Transition::new(source, event, target))
}

/// Parses the line-oriented state-machine format into an un-flattened machine.
pub fn parse_state_machine(text: &str) -> Result<FlightStateMachine, ModelError> {
    let mut stack = vec![Frame::default()];
    let mut events: Vec<String> = Vec::new();
    let mut event_set = HashSet::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let toks = words(strip_comment(raw));
        let Some(&(col, keyword)) = toks.first() else {
            continue;
        };
        match keyword {
            "event" | "events" => {
                if stack.len() > 1 {
                    return Err(syntax(lineno, col, "events must be declared at top level"));
                }
                let mut names = Vec::new();
                let mut kind = "call";
                for &(c, tok) in &toks[1..] {
                    if let Some(k) = tok.strip_prefix("kind=") {
                        kind = k;
                    } else if is_identifier(tok) && !tok.contains('.') {
                        names.push(tok);
                    } else {
                        return Err(syntax(lineno, c, format!("invalid event name `{tok}`")));
                    }
                }
                if names.is_empty() {
                    return Err(syntax(lineno, col, "expected an event name"));
                }
                match kind {
                    "call" => {}
                    "signal" | "time" | "change" => {
                        return Err(ModelError::UnsupportedEvent {
                            line: lineno,
                            name: names[0].to_string(),
                            kind: kind.to_string(),
                        })
                    }
                    other => {
                        return Err(syntax(lineno, col, format!("unknown event kind `{other}`")))
                    }
                }
                for name in names {
                    if !event_set.insert(name.to_string()) {
                        return Err(ModelError::DuplicateEvent {
                            line: lineno,
                            name: name.to_string(),
                        });
                    }
                    events.push(name.to_string());
                }
            }
            "state" | "composite" => {
                let composite = keyword == "composite";
                let decl = parse_declaration(lineno, &toks, composite)?;
                let frame = stack.last_mut().unwrap();
                if frame.states.iter().any(|s| s.name == decl.name) {
                    return Err(ModelError::DuplicateState {
                        line: lineno,
                        name: decl.name.to_string(),
                    });
                }
                let nested = stack.len() > 1;
                let frame = stack.last_mut().unwrap();
                if decl.header.goal && nested {
                    return Err(syntax(lineno, col, "goal marker is only allowed at top level"));
                }
                if decl.header.initial {
                    if let Some(prev) = &frame.initial {
                        return Err(ModelError::Marker(format!(
                            "line {lineno}: second initial state `{}` (already `{prev}`)",
                            decl.name
                        )));
                    }
                    frame.initial = Some(decl.name.to_string());
                }
                if decl.header.goal {
                    if let Some(prev) = &frame.goal {
                        return Err(ModelError::Marker(format!(
                            "line {lineno}: second goal state `{}` (already `{prev}`)",
                            decl.name
                        )));
                    }
                    frame.goal = Some(decl.name.to_string());
                }
                if decl.opens {
                    stack.push(Frame {
                        name: Some(decl.name.to_string()),
                        line: lineno,
                        header: Some(decl.header),
                        ..Frame::default()
                    });
                } else {
                    frame
                        .states
                        .push(StateDef::simple(decl.name, decl.header.stereotype));
                }
            }
            "}" => {
                if toks.len() != 1 {
                    return Err(syntax(lineno, toks[1].0, "unexpected text after `}`"));
                }
                if stack.len() == 1 {
                    return Err(syntax(lineno, col, "unbalanced `}`"));
                }
                let frame = stack.pop().unwrap();
                let name = frame.name.clone().unwrap();
                let stereotype = frame.header.as_ref().and_then(|h| h.stereotype);
                let region = close_region(frame, &event_set)?;
                stack.last_mut().unwrap().states.push(StateDef {
                    name,
                    stereotype,
                    lineage: Vec::new(),
                    substates: Some(region),
                });
            }
            "trans" => {
                let t = parse_transition(lineno, &toks)?;
                stack.last_mut().unwrap().transitions.push((lineno, t));
            }
            other => {
                return Err(syntax(lineno, col, format!("unknown declaration `{other}`")));
            }
        }
    }

    if stack.len() > 1 {
        let open = stack.last().unwrap();
        return Err(syntax(
            last_line.max(open.line),
            1,
            format!("composite `{}` is never closed", open.name.as_deref().unwrap()),
        ));
    }
    let root = stack.pop().unwrap();
    let initial = root
        .initial
        .clone()
        .ok_or_else(|| ModelError::Marker("no initial state declared".into()))?;
    let goal = root
        .goal
        .clone()
        .ok_or_else(|| ModelError::Marker("no goal state declared".into()))?;
    let region = close_region(root, &event_set)?;
    Ok(FlightStateMachine {
        states: region.states,
        events,
        transitions: region.transitions,
        initial,
        goal,
    })
}

/// Resolves a possibly dotted state path relative to `states`.
pub(crate) fn resolve<'a>(states: &'a [StateDef], path: &str) -> Option<&'a StateDef> {
    let (head, rest) = match path.split_once('.') {
        Some((h, r)) => (h, Some(r)),
        None => (path, None),
    };
    let state = states.iter().find(|s| s.name == head)?;
    match rest {
        None => Some(state),
        Some(rest) => resolve(&state.substates.as_ref()?.states, rest),
    }
}

fn close_region(frame: Frame, events: &HashSet<String>) -> Result<Region, ModelError> {
    let mut seen = HashSet::new();
    let mut transitions = Vec::with_capacity(frame.transitions.len());
    for (line, t) in frame.transitions {
        for name in [&t.source, &t.target] {
            if resolve(&frame.states, name).is_none() {
                return Err(ModelError::UndeclaredState {
                    line,
                    name: name.clone(),
                });
            }
        }
        if !events.contains(&t.event) {
            return Err(ModelError::UndeclaredEvent {
                line,
                name: t.event.clone(),
            });
        }
        if !seen.insert((t.source.clone(), t.event.clone())) {
            return Err(ModelError::DuplicateTransition {
                line,
                state: t.source,
                event: t.event,
            });
        }
        transitions.push(t);
    }
    Ok(Region {
        states: frame.states,
        transitions,
        initial: frame.initial,
    })
}
