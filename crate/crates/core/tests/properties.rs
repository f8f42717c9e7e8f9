use std::collections::BTreeSet;

use proptest::prelude::*;

use aitester::agent::{
    compute_reward, cumulative_reward, load_model, parse_traces, save_model, write_traces, EpisodeEnd,
    EpisodeTrace, Experience, ReplayMemory, StepRecord,
};
use aitester::analysis::{cliffs_delta, compile_report, mar, path_diversity, wilcoxon_signed_rank};
use aitester::behavior::{flatten, parse_state_machine};
use aitester::experiment::Experiment;
use aitester::sim::{Backend, Terminal};
use aitester::Network;

/// Top-level states `S0..`, some of them composites with two substates.
fn machine_text(states: usize, composite: &[bool], trans: &[(usize, usize, usize)]) -> String {
    let mut t = String::from("events e0 e1 e2 e3\n");
    for i in 0..states {
        let marks = match i {
            0 => " initial",
            _ if i == states - 1 => " goal",
            _ => "",
        };
        if composite[i] && i != 0 && i != states - 1 {
            t.push_str(&format!(
                "composite S{i}{marks} {{\n  state A initial\n  state B\n  trans A --e3--> B\n}}\n"
            ));
        } else {
            t.push_str(&format!("state S{i}{marks}\n"));
        }
    }
    // a chain keeps every state reachable and free of dead ends
    for i in 0..states - 1 {
        t.push_str(&format!("trans S{i} --e0--> S{}\n", i + 1));
    }
    let mut seen = BTreeSet::new();
    for &(from, ev, to) in trans {
        let (from, to, ev) = (from % states, to % states, 1 + ev % 2);
        if from == states - 1 || !seen.insert((from, ev)) {
            continue;
        }
        t.push_str(&format!("trans S{from} --e{ev}--> S{to}\n"));
    }
    t
}

proptest! {
    #[test]
    fn flatten_is_idempotent(
        states in 2usize..7,
        composite in prop::collection::vec(any::<bool>(), 7),
        trans in prop::collection::vec((0usize..7, 0usize..3, 0usize..7), 0..20),
    ) {
        let text = machine_text(states, &composite, &trans);
        let sm = parse_state_machine(&text).unwrap();
        let flat = flatten(&sm).unwrap();
        prop_assert!(flat.is_flat());
        prop_assert_eq!(&flatten(&flat).unwrap(), &flat);
        let leaves = (0..states)
            .map(|i| if composite[i] && i != 0 && i != states - 1 { 2 } else { 1 })
            .sum::<usize>();
        prop_assert_eq!(flat.states.len(), leaves);
        let names: BTreeSet<&str> = flat.states.iter().map(|s| s.name.as_str()).collect();
        for tr in &flat.transitions {
            prop_assert!(names.contains(tr.source.as_str()) && names.contains(tr.target.as_str()));
        }
        // deterministic: at most one target per (source, event)
        let keys: BTreeSet<(&str, &str)> = flat.transitions.iter().map(|t| (t.source.as_str(), t.event.as_str())).collect();
        prop_assert_eq!(keys.len(), flat.transitions.len());
        prop_assert_eq!(flat.reachable().len(), flat.states.len());
    }

    #[test]
    fn replay_keeps_most_recent(cap in 1usize..40, extra in 0usize..60) {
        let mut m = ReplayMemory::new(cap);
        let total = cap + extra;
        for i in 0..total {
            m.push(Experience { state: vec![i as f64], action: i, reward: 0.0, next: vec![], done: false });
        }
        let kept: Vec<usize> = m.iter().map(|e| e.action).collect();
        prop_assert_eq!(kept, (total - cap..total).collect::<Vec<_>>());
    }

    #[test]
    fn discounted_sum_matches_loop(rewards in prop::collection::vec(-1.0f64..10.0, 0..60), gamma in 0.0f64..=1.0) {
        let mut acc = 0.0;
        let mut g = 1.0;
        for r in &rewards {
            acc += g * r;
            g *= gamma;
        }
        prop_assert!((cumulative_reward(&rewards, gamma) - acc).abs() <= 1e-9 * (1.0 + acc.abs()));
    }

    #[test]
    fn mar_matches_window_means(rewards in prop::collection::vec(-50.0f64..50.0, 1..120), n in 1usize..40) {
        prop_assume!(n <= rewards.len());
        let s = mar(&rewards, n).unwrap();
        prop_assert_eq!(s.values.len(), rewards.len() - n + 1);
        for (k, v) in s.values.iter().enumerate() {
            let direct = rewards[k..k + n].iter().sum::<f64>() / n as f64;
            prop_assert!((v - direct).abs() < 1e-9);
        }
        prop_assert_eq!(mar(&rewards, 1).unwrap().values, rewards);
    }

    #[test]
    fn cliffs_is_antisymmetric(a in prop::collection::vec(-5i32..5, 1..30), b in prop::collection::vec(-5i32..5, 1..30)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let d = cliffs_delta(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&d));
        prop_assert_eq!(d, -cliffs_delta(&b, &a).unwrap());
    }

    #[test]
    fn wilcoxon_p_is_symmetric(pairs in prop::collection::vec((-20i32..20, -20i32..20), 5..45)) {
        let a: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let b: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        match (wilcoxon_signed_rank(&a, &b), wilcoxon_signed_rank(&b, &a)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x.p - y.p).abs() < 1e-12);
                prop_assert!(x.p > 0.0 && x.p <= 1.0);
                prop_assert_eq!(x.w_plus, y.w_minus);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "asymmetric failure"),
        }
    }

    #[test]
    fn network_checkpoint_round_trip(seed in any::<u64>(), h in 1usize..6, l in 1usize..4, a in 1usize..5) {
        let net = Network::init(seed, 10, h, l, a).unwrap();
        let names: Vec<String> = (0..a).map(|i| format!("act{i}")).collect();
        let (back, back_names) = load_model(&save_model(&net, &names)).unwrap();
        prop_assert_eq!(back, net);
        prop_assert_eq!(back_names, names);
    }
}

fn random_trace(episode: u64, steps: &[(u8, bool, u8)]) -> EpisodeTrace {
    const STATES: [&str; 4] = ["Armed", "Takeoff", "Ascend.Straight", "Landing"];
    const IDS: [&str; 4] = ["G1", "G3", "A2", "N1"];
    let steps: Vec<StepRecord> = steps
        .iter()
        .enumerate()
        .map(|(i, &(s, correct, f))| {
            let failed: Vec<String> = if correct {
                IDS.iter().enumerate().filter(|(k, _)| f & (1 << k) != 0).map(|(_, id)| id.to_string()).collect()
            } else {
                Vec::new()
            };
            StepRecord {
                tick: i as u64 + 1,
                state: STATES[s as usize % 4].to_string(),
                action: format!("act{}", s % 7),
                correct,
                reward: compute_reward(correct, failed.len()),
                failed,
                tuple: None,
            }
        })
        .collect();
    let r: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    EpisodeTrace {
        episode,
        initial: "Idle".into(),
        steps,
        end: EpisodeEnd::StepLimit,
        cumulative: cumulative_reward(&r, 0.999),
    }
}

fn trace_sets() -> impl Strategy<Value = Vec<EpisodeTrace>> {
    prop::collection::vec(prop::collection::vec((any::<u8>(), any::<bool>(), any::<u8>()), 0..12), 1..8).prop_map(|v| {
        v.iter()
            .enumerate()
            .map(|(i, s)| random_trace(i as u64, s))
            .collect()
    })
}

proptest! {
    #[test]
    fn trace_text_round_trips(traces in trace_sets()) {
        let text = write_traces(&traces, 0.999, "Idle");
        let back = parse_traces(&text).unwrap();
        prop_assert_eq!(back.gamma, 0.999);
        prop_assert_eq!(back.traces, traces);
    }

    #[test]
    fn diversity_ignores_order(mut traces in trace_sets(), rot in 0usize..8) {
        let d = path_diversity(&traces).unwrap();
        let k = rot % traces.len();
        traces.rotate_left(k);
        let e = path_diversity(&traces).unwrap();
        prop_assert!((d.score - e.score).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d.score));
    }

    #[test]
    fn report_conserves_failures(a in trace_sets(), b in trace_sets()) {
        let ex = Experiment::builtin().unwrap();
        let r = compile_report(&a, &b, &ex.setup.constraints).unwrap();
        let pairs: u64 = a.iter().flat_map(|t| &t.steps).map(|s| s.failed.len() as u64).sum();
        let rows: u64 = r.rows.iter().map(|row| row.tester_total).sum();
        prop_assert_eq!(rows, pairs);
        prop_assert_eq!(r.tester.ledger.grand_total(), pairs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulator_respects_the_machine(seed in any::<u64>(), actions in prop::collection::vec(0usize..23, 1..60)) {
        let ex = Experiment::builtin().unwrap();
        let mut sim = ex.simulator().unwrap();
        let names = ex.setup.actions().to_vec();
        let mut state = sim.reset(seed).unwrap().flight_state;
        let mut tick = 0;
        for a in actions {
            if sim.is_terminal().is_done() {
                break;
            }
            let expected = ex.setup.machine.next_state(&state, &names[a]).unwrap().map(str::to_string);
            let out = sim.step(&names[a]).unwrap();
            prop_assert!(!(out.crashed && out.goal_reached));
            prop_assert_eq!(out.action_correct, expected.is_some());
            prop_assert_eq!(&out.flight_state, expected.as_ref().unwrap_or(&state));
            prop_assert!(out.snapshot.tick > tick);
            tick = out.snapshot.tick;
            state = out.flight_state;
        }
        if sim.is_terminal() == Terminal::Goal {
            prop_assert!(ex.setup.machine.is_goal(&state).unwrap());
        }
    }
}
