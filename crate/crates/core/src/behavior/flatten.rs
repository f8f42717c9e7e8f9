use std::collections::HashMap;

use super::{FlightStateMachine, ModelError, Phase, StateDef, Transition};

struct Expansion {
    leaves: Vec<StateDef>,
    /// Full state path -> leaf names beneath it (itself for leaves).
    covers: HashMap<String, Vec<String>>,
    /// Full state path -> leaf entered when a transition targets it.
    entry: HashMap<String, String>,
}

fn expand(
    states: &[StateDef],
    prefix: &str,
    lineage: &[Phase],
    out: &mut Expansion,
) -> Result<(), ModelError> {
    for state in states {
        let full = format!("{prefix}{}", state.name);
        match &state.substates {
            None => {
                let mut lin = lineage.to_vec();
                lin.extend(state.lineage.iter().copied());
                out.leaves.push(StateDef {
                    name: full.clone(),
                    stereotype: state.stereotype,
                    lineage: lin,
                    substates: None,
                });
                out.covers.insert(full.clone(), vec![full.clone()]);
                out.entry.insert(full.clone(), full);
            }
            Some(region) => {
                let initial = region
                    .initial
                    .as_ref()
                    .ok_or_else(|| ModelError::MissingSubInitial(full.clone()))?;
                let mut lin = lineage.to_vec();
                lin.extend(state.lineage.iter().copied());
                lin.extend(state.stereotype);
                let child_prefix = format!("{full}.");
                let first_leaf = out.leaves.len();
                expand(&region.states, &child_prefix, &lin, out)?;
                let covered = out.leaves[first_leaf..]
                    .iter()
                    .map(|s| s.name.clone())
                    .collect();
                out.covers.insert(full.clone(), covered);
                let entry = out.entry[&format!("{child_prefix}{initial}")].clone();
                out.entry.insert(full, entry);
            }
        }
    }
    Ok(())
}

struct Candidate {
    source: String,
    event: String,
    target: String,
    specificity: usize,
}

fn collect(
    states: &[StateDef],
    transitions: &[Transition],
    prefix: &str,
    exp: &Expansion,
    out: &mut Vec<Candidate>,
) {
    for t in transitions {
        let source = format!("{prefix}{}", t.source);
        let target = &exp.entry[&format!("{prefix}{}", t.target)];
        let specificity = source.split('.').count();
        for leaf in &exp.covers[&source] {
            out.push(Candidate {
                source: leaf.clone(),
                event: t.event.clone(),
                target: target.clone(),
                specificity,
            });
        }
    }
    for state in states {
        if let Some(region) = &state.substates {
            let child = format!("{prefix}{}.", state.name);
            collect(&region.states, &region.transitions, &child, exp, out);
        }
    }
}

/// Replaces composite states by their substates (`Parent.Sub`). Transitions
/// entering a composite land on its initial substate; transitions leaving it
/// are replicated from every substate, with a substate's own transition on
/// the same event taking precedence.
pub fn flatten(sm: &FlightStateMachine) -> Result<FlightStateMachine, ModelError> {
    let mut exp = Expansion {
        leaves: Vec::new(),
        covers: HashMap::new(),
        entry: HashMap::new(),
    };
    expand(&sm.states, "", &[], &mut exp)?;

    let mut candidates = Vec::new();
    collect(&sm.states, &sm.transitions, "", &exp, &mut candidates);

    let mut chosen: HashMap<(String, String), usize> = HashMap::new();
    for (i, c) in candidates.iter().enumerate() {
        let key = (c.source.clone(), c.event.clone());
        match chosen.get(&key) {
            None => {
                chosen.insert(key, i);
            }
            Some(&j) => {
                let prev = &candidates[j];
                if c.specificity > prev.specificity {
                    chosen.insert(key, i);
                } else if c.specificity == prev.specificity && c.target != prev.target {
                    return Err(ModelError::Conflict {
                        state: c.source.clone(),
                        event: c.event.clone(),
                    });
                }
            }
        }
    }
    let mut keep: Vec<usize> = chosen.into_values().collect();
    keep.sort_unstable();
    let transitions = keep
        .into_iter()
        .map(|i| {
            let c = &candidates[i];
            Transition::new(&c.source, &c.event, &c.target)
        })
        .collect();

    let flat = FlightStateMachine {
        initial: exp.entry[&sm.initial].clone(),
        goal: exp.entry[&sm.goal].clone(),
        states: exp.leaves,
        events: sm.events.clone(),
        transitions,
    };
    validate(&flat)?;
    Ok(flat)
}

fn validate(sm: &FlightStateMachine) -> Result<(), ModelError> {
    let reachable = sm.reachable();
    for s in &sm.states {
        if !reachable.contains(s.name.as_str()) {
            return Err(ModelError::Unreachable(s.name.clone()));
        }
        if s.name != sm.goal && !sm.transitions.iter().any(|t| t.source == s.name) {
            return Err(ModelError::DeadEnd(s.name.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::parse_state_machine;
    use super::*;

    const FIG8: &str = "\
event increaseAlt
event decreaseAlt
event turnLeft
event turnRight
event flyStraight
state Hover stereotype=PositionHold initial goal
composite Ascend stereotype=Climb {
  state Straight stereotype=FlyingStraight initial
  state TurningLeft stereotype=TurningLeft
  state TurningRight stereotype=TurningRight
  trans Straight --turnLeft--> TurningLeft
  trans Straight --turnRight--> TurningRight
  trans TurningLeft --flyStraight--> Straight
  trans TurningRight --flyStraight--> Straight
}
trans Hover --increaseAlt--> Ascend
trans Ascend --decreaseAlt--> Hover
";

    #[test]
    fn flat_machine_is_unchanged() {
        let text = "event a\nevent b\nstate X initial goal\nstate Y\ntrans X --a--> Y\ntrans Y --b--> X\n";
        let sm = parse_state_machine(text).unwrap();
        assert_eq!(flatten(&sm).unwrap(), sm);
    }

    #[test]
    fn substates_become_dotted_states() {
        let flat = flatten(&parse_state_machine(FIG8).unwrap()).unwrap();
        let names: Vec<_> = flat.states.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            ["Hover", "Ascend.Straight", "Ascend.TurningLeft", "Ascend.TurningRight"]
        );
        for sub in ["Ascend.Straight", "Ascend.TurningLeft", "Ascend.TurningRight"] {
            assert_eq!(flat.next_state(sub, "decreaseAlt").unwrap(), Some("Hover"));
        }
        assert_eq!(
            flat.next_state("Hover", "increaseAlt").unwrap(),
            Some("Ascend.Straight")
        );
        assert_eq!(flat.transitions.len(), 1 + 3 + 4);
        let left = flat.state("Ascend.TurningLeft").unwrap();
        assert_eq!(left.lineage, vec![Phase::Climb]);
        assert_eq!(left.stereotype, Some(Phase::TurningLeft));
        assert!(flat.is_flat());
    }

    #[test]
    fn missing_initial_substate() {
        let text = "event a\nstate X initial goal\ncomposite C {\n state D\n}\ntrans X --a--> C\ntrans C --a--> X\n";
        let sm = parse_state_machine(text).unwrap();
        assert_eq!(
            flatten(&sm).unwrap_err(),
            ModelError::MissingSubInitial("C".into())
        );
    }

    #[test]
    fn inner_transition_overrides_outer() {
        let text = "\
event a
state X initial goal
composite C {
  state D initial
  state E
  trans D --a--> E
}
trans X --a--> C
trans C --a--> X
";
        let flat = flatten(&parse_state_machine(text).unwrap()).unwrap();
        assert_eq!(flat.next_state("C.D", "a").unwrap(), Some("C.E"));
        assert_eq!(flat.next_state("C.E", "a").unwrap(), Some("X"));
    }

    #[test]
    fn unreachable_states_rejected() {
        let text = "event a\nstate X initial goal\nstate Y\ntrans Y --a--> X\n";
        let sm = parse_state_machine(text).unwrap();
        assert_eq!(flatten(&sm).unwrap_err(), ModelError::Unreachable("Y".into()));
    }

    #[test]
    fn arducopter_flattened_counts() {
        let sm = parse_state_machine(include_str!("../../data/arducopter.sm")).unwrap();
        let flat = flatten(&sm).unwrap();
        assert_eq!(flat.states.len(), 11);
        assert_eq!(flat.transitions.len(), 55);
        assert_eq!(flatten(&flat).unwrap(), flat);
    }
}
