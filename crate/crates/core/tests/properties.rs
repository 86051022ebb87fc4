mod common;

use std::collections::{HashMap, VecDeque};

use petriplan_core::domains::{gen_counters, gen_delivery, gen_random_strips, oracle_reachable, OracleStatus};
use petriplan_core::expr::BindingSet;
use petriplan_core::petri::analyze_net;
use petriplan_core::planner::{plan, PlanOutcome, PlannerOptions};
use petriplan_core::problem::{parse_problem, serialize_problem};
use petriplan_core::reach::{horizon_lower_bound, propagate_backward, propagate_forward, DEFAULT_MAX_STEPS};
use petriplan_core::session::{gen_update_sequence, Session, Update};
use petriplan_core::{Problem, Value};
use proptest::prelude::*;

const STATE_CAP: usize = 20_000;

fn opts() -> PlannerOptions {
    PlannerOptions {
        max_horizon: 10,
        threads: 1,
        ..PlannerOptions::default()
    }
}

fn arb_problem() -> impl Strategy<Value = Problem> {
    prop_oneof![
        (1usize..=2, 1i64..=3, any::<u64>()).prop_map(|(n, max, s)| {
            let goal: Vec<i64> = (0..n).map(|i| ((s >> (8 * i)) % (max as u64 + 2)) as i64).collect();
            gen_counters(n, max, &goal).unwrap()
        }),
        (1usize..=2, 2usize..=3, 1i64..=2).prop_map(|(pk, l, cap)| gen_delivery(1, pk, l, cap).unwrap()),
        (any::<u64>(), 3usize..=7, 3usize..=8).prop_map(|(s, nv, na)| gen_random_strips(s, nv, na)),
    ]
}

/// Serial BFS: every reachable state with its distance from the initial state,
/// plus the edges between them. `None` past the cap.
fn explore(p: &Problem) -> Option<(Vec<Vec<Value>>, Vec<usize>, Vec<Vec<usize>>)> {
    let mut index: HashMap<Vec<Value>, usize> = HashMap::new();
    let mut states = vec![p.init.clone()];
    let mut depth = vec![0];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new()];
    index.insert(p.init.clone(), 0);
    let mut queue = VecDeque::from([0]);
    while let Some(i) = queue.pop_front() {
        for a in 0..p.actions.len() {
            let Some(next) = p.successor(a, &states[i]) else { continue };
            let j = match index.get(&next) {
                Some(&j) => j,
                None => {
                    if states.len() >= STATE_CAP {
                        return None;
                    }
                    let j = states.len();
                    index.insert(next.clone(), j);
                    states.push(next);
                    depth.push(depth[i] + 1);
                    succ.push(Vec::new());
                    queue.push_back(j);
                    j
                }
            };
            succ[i].push(j);
        }
    }
    Some((states, depth, succ))
}

fn satisfies(state: &[Value], b: &BindingSet) -> bool {
    b.iter().all(|(p, v)| state[*p] == *v)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn forward_bindings_hold_in_reachable_states(p in arb_problem()) {
        let Some((states, depth, _)) = explore(&p) else { return Ok(()) };
        let net = analyze_net(&p);
        let fwd = propagate_forward(&net, DEFAULT_MAX_STEPS);
        let deepest = depth.iter().copied().max().unwrap_or(0);
        for k in 0..=deepest.min(8) {
            for (s, d) in states.iter().zip(&depth) {
                if *d <= k {
                    prop_assert!(satisfies(s, fwd.at(k)), "state {:?} at step {} violates {:?}", s, k, fwd.at(k));
                }
            }
        }
    }

    #[test]
    fn backward_bindings_hold_before_the_goal(p in arb_problem()) {
        let Some((states, _, succ)) = explore(&p) else { return Ok(()) };
        // distance to the goal over the reachable graph
        let mut dist: Vec<Option<usize>> = states.iter().map(|s| p.goal_holds(s).then_some(0)).collect();
        loop {
            let mut changed = false;
            for i in 0..states.len() {
                let best = succ[i].iter().filter_map(|&j| dist[j]).min().map(|d| d + 1);
                if let Some(d) = best {
                    if dist[i].is_none_or(|x| d < x) {
                        dist[i] = Some(d);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let net = analyze_net(&p);
        let bwd = propagate_backward(&net, &p.goal, DEFAULT_MAX_STEPS);
        for (s, d) in states.iter().zip(&dist) {
            if let Some(d) = d {
                prop_assert!(satisfies(s, bwd.at(*d)), "state {:?} at distance {} violates {:?}", s, d, bwd.at(*d));
            }
        }
    }

    #[test]
    fn lower_bound_below_plan_lengths(p in arb_problem()) {
        let net = analyze_net(&p);
        let fwd = propagate_forward(&net, DEFAULT_MAX_STEPS);
        let bwd = propagate_backward(&net, &p.goal, DEFAULT_MAX_STEPS);
        let lb = horizon_lower_bound(&net, &fwd, &bwd, &p.goal, DEFAULT_MAX_STEPS);
        if let OracleStatus::Reachable { steps, .. } = oracle_reachable(&p, STATE_CAP).status {
            prop_assert!(lb <= steps, "bound {} above shortest serial plan {}", lb, steps);
        }
        let report = plan(&p, &opts()).unwrap();
        if let PlanOutcome::Plan(pl) = &report.outcome {
            prop_assert!(lb <= pl.horizon);
            prop_assert!(report.lower_bound <= pl.horizon);
        }
    }

    #[test]
    fn documents_round_trip(p in arb_problem()) {
        let text = serialize_problem(&p);
        prop_assert_eq!(parse_problem(&text).unwrap(), p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn session_store_only_grows(seed in any::<u64>()) {
        let p0 = gen_counters(2, 3, &[1, 2]).unwrap();
        let mut s = Session::create("s", p0, opts()).unwrap();
        let mut asserted = 0;
        for u in gen_update_sequence(s.problem(), seed, 10) {
            s.apply_update(&u).unwrap();
            let after_update = s.engine.solver.assertions().len();
            prop_assert!(after_update >= asserted);
            if matches!(u, Update::GoalChange { .. }) {
                prop_assert_eq!(after_update, asserted, "goal change asserted something");
            }
            s.solve_round().unwrap();
            asserted = s.engine.solver.assertions().len();
            prop_assert!(asserted >= after_update);
        }
    }

    #[test]
    fn journal_replay_reproduces_session(seed in any::<u64>()) {
        let p0 = gen_counters(2, 2, &[1, 1]).unwrap();
        let mut s = Session::create("s", p0, opts()).unwrap();
        let mut outcomes = Vec::new();
        for u in gen_update_sequence(s.problem(), seed, 6) {
            s.apply_update(&u).unwrap();
            outcomes.push(s.solve_round().unwrap().outcome.status());
        }
        let r = Session::replay("s", &s.journal_lines(), opts()).unwrap();
        prop_assert_eq!(r.digest(), s.digest());
        prop_assert_eq!(r.journal_lines(), s.journal_lines());
        prop_assert_eq!(r.round, s.round);
    }
}

#[test]
fn corpus_plans_validate_and_respect_bound() {
    use petriplan_core::planner::validate_plan;
    let corpus = common::corpus(99, 10, 10, 10);
    for inst in &corpus {
        let r = plan(&inst.problem, &opts()).unwrap();
        if let PlanOutcome::Plan(pl) = &r.outcome {
            validate_plan(&inst.problem, pl).unwrap_or_else(|e| panic!("{}: {e}", inst.name));
            assert!(r.lower_bound <= pl.horizon, "{}", inst.name);
        }
        if let PlanOutcome::Infeasible(_) = &r.outcome {
            assert_eq!(oracle_reachable(&inst.problem, STATE_CAP).status, OracleStatus::Unreachable, "{}", inst.name);
        }
    }
}
