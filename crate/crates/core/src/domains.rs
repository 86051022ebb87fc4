//! Parametric problem generators and explicit-state reachability oracles.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::problem::{Action, Condition, Effect, Problem, RelOp, StateVariable, Value, VarKind};
use crate::rational::Rat;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenError {
    #[error("expected {expected} goal values, got {got}")]
    GoalLength { expected: usize, got: usize },
    #[error("parameter `{0}` must be at least 1")]
    TooSmall(&'static str),
}

fn bool_var(id: usize, name: String) -> StateVariable {
    StateVariable {
        id,
        name,
        kind: VarKind::Boolean,
        lower: None,
        upper: None,
    }
}

fn single(var: usize, op: RelOp, rhs: i64) -> Condition {
    Condition::Rel {
        terms: vec![(var, Rat::ONE)],
        op,
        rhs: Rat::from_int(rhs),
    }
}

/// `n` integer counters in `[0, max_val]` starting at 0, each with an
/// increment and a decrement action; goal `c_i = goal_vals[i]`.
pub fn gen_counters(n: usize, max_val: i64, goal_vals: &[i64]) -> Result<Problem, GenError> {
    if n == 0 {
        return Err(GenError::TooSmall("n"));
    }
    if max_val < 1 {
        return Err(GenError::TooSmall("max_val"));
    }
    if goal_vals.len() != n {
        return Err(GenError::GoalLength {
            expected: n,
            got: goal_vals.len(),
        });
    }
    let vars = (0..n)
        .map(|i| StateVariable {
            id: i,
            name: format!("c{i}"),
            kind: VarKind::Integer,
            lower: Some(Rat::ZERO),
            upper: Some(Rat::from_int(max_val)),
        })
        .collect();
    let mut actions = Vec::new();
    for i in 0..n {
        actions.push(Action {
            name: format!("inc{i}"),
            pre: vec![single(i, RelOp::Le, max_val - 1)],
            eff: vec![Effect::Delta {
                var: i,
                delta: Rat::ONE,
            }],
        });
        actions.push(Action {
            name: format!("dec{i}"),
            pre: vec![single(i, RelOp::Ge, 1)],
            eff: vec![Effect::Delta {
                var: i,
                delta: -Rat::ONE,
            }],
        });
    }
    Ok(Problem {
        vars,
        actions,
        init: vec![Value::Num(Rat::ZERO); n],
        goal: goal_vals.iter().enumerate().map(|(i, g)| single(i, RelOp::Eq, *g)).collect(),
        constraints: Vec::new(),
    })
}

/// Variable ids of a delivery problem.
#[derive(Debug, Clone)]
pub struct DeliveryLayout {
    pub trucks: usize,
    pub packages: usize,
    pub locations: usize,
}

impl DeliveryLayout {
    pub fn truck_at(&self, t: usize, l: usize) -> usize {
        t * self.locations + l
    }

    pub fn pkg_at(&self, p: usize, l: usize) -> usize {
        self.trucks * self.locations + p * self.locations + l
    }

    pub fn pkg_in(&self, p: usize, t: usize) -> usize {
        (self.trucks + self.packages) * self.locations + p * self.trucks + t
    }

    pub fn load(&self, t: usize) -> usize {
        (self.trucks + self.packages) * self.locations + self.packages * self.trucks + t
    }
}

/// Trucks move packages between locations; each truck carries at most
/// `capacity` packages. Truck `t` starts at location `t mod L`, package `p`
/// starts at `(p+1) mod L` and must end at `(p+2) mod L`.
pub fn gen_delivery(trucks: usize, packages: usize, locations: usize, capacity: i64) -> Result<Problem, GenError> {
    for (v, name) in [(trucks, "trucks"), (packages, "packages"), (locations, "locations")] {
        if v == 0 {
            return Err(GenError::TooSmall(name));
        }
    }
    if capacity < 1 {
        return Err(GenError::TooSmall("capacity"));
    }
    let lay = DeliveryLayout {
        trucks,
        packages,
        locations,
    };
    let mut vars = Vec::new();
    for t in 0..trucks {
        for l in 0..locations {
            vars.push(bool_var(vars.len(), format!("at_t{t}_l{l}")));
        }
    }
    for p in 0..packages {
        for l in 0..locations {
            vars.push(bool_var(vars.len(), format!("at_p{p}_l{l}")));
        }
    }
    for p in 0..packages {
        for t in 0..trucks {
            vars.push(bool_var(vars.len(), format!("in_p{p}_t{t}")));
        }
    }
    for t in 0..trucks {
        vars.push(StateVariable {
            id: vars.len(),
            name: format!("load_t{t}"),
            kind: VarKind::Integer,
            lower: Some(Rat::ZERO),
            upper: Some(Rat::from_int(capacity)),
        });
    }

    let mut actions = Vec::new();
    for t in 0..trucks {
        for a in 0..locations {
            for b in 0..locations {
                if a == b {
                    continue;
                }
                actions.push(Action {
                    name: format!("drive_t{t}_l{a}_l{b}"),
                    pre: vec![Condition::lit(lay.truck_at(t, a), true)],
                    eff: vec![
                        Effect::Assign {
                            var: lay.truck_at(t, a),
                            value: false,
                        },
                        Effect::Assign {
                            var: lay.truck_at(t, b),
                            value: true,
                        },
                    ],
                });
            }
        }
    }
    for p in 0..packages {
        for t in 0..trucks {
            for l in 0..locations {
                actions.push(Action {
                    name: format!("load_p{p}_t{t}_l{l}"),
                    pre: vec![
                        Condition::lit(lay.pkg_at(p, l), true),
                        Condition::lit(lay.truck_at(t, l), true),
                        single(lay.load(t), RelOp::Le, capacity - 1),
                    ],
                    eff: vec![
                        Effect::Assign {
                            var: lay.pkg_at(p, l),
                            value: false,
                        },
                        Effect::Assign {
                            var: lay.pkg_in(p, t),
                            value: true,
                        },
                        Effect::Delta {
                            var: lay.load(t),
                            delta: Rat::ONE,
                        },
                    ],
                });
                actions.push(Action {
                    name: format!("unload_p{p}_t{t}_l{l}"),
                    pre: vec![
                        Condition::lit(lay.pkg_in(p, t), true),
                        Condition::lit(lay.truck_at(t, l), true),
                        single(lay.load(t), RelOp::Ge, 1),
                    ],
                    eff: vec![
                        Effect::Assign {
                            var: lay.pkg_in(p, t),
                            value: false,
                        },
                        Effect::Assign {
                            var: lay.pkg_at(p, l),
                            value: true,
                        },
                        Effect::Delta {
                            var: lay.load(t),
                            delta: -Rat::ONE,
                        },
                    ],
                });
            }
        }
    }

    let mut init = vec![Value::Bool(false); vars.len()];
    for t in 0..trucks {
        init[lay.truck_at(t, t % locations)] = Value::Bool(true);
        init[lay.load(t)] = Value::Num(Rat::ZERO);
    }
    for p in 0..packages {
        init[lay.pkg_at(p, (p + 1) % locations)] = Value::Bool(true);
    }
    let goal = (0..packages)
        .map(|p| Condition::lit(lay.pkg_at(p, (p + 2) % locations), true))
        .collect();
    Ok(Problem {
        vars,
        actions,
        init,
        goal,
        constraints: Vec::new(),
    })
}

/// A robot moving between `n` locations; exactly one location holds at a
/// time. Goal: be at the last location.
pub fn gen_robot(n: usize) -> Result<Problem, GenError> {
    if n == 0 {
        return Err(GenError::TooSmall("n"));
    }
    let vars = (0..n).map(|l| bool_var(l, format!("at_l{l}"))).collect();
    let mut actions = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                actions.push(Action {
                    name: format!("move_l{a}_l{b}"),
                    pre: vec![Condition::lit(a, true)],
                    eff: vec![
                        Effect::Assign { var: a, value: false },
                        Effect::Assign { var: b, value: true },
                    ],
                });
            }
        }
    }
    let mut init = vec![Value::Bool(false); n];
    init[0] = Value::Bool(true);
    Ok(Problem {
        vars,
        actions,
        init,
        goal: vec![Condition::lit(n - 1, true)],
        constraints: Vec::new(),
    })
}

/// Random boolean problem, deterministic in `seed`. Actions carry 1-3
/// preconditions and 1-3 effects on distinct variables; the goal has 1-3
/// literals.
pub fn gen_random_strips(seed: u64, n_vars: usize, n_actions: usize) -> Problem {
    assert!((1..=16).contains(&n_vars), "n_vars must be in 1..=16");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<usize> = (0..n_vars).collect();
    let vars = (0..n_vars).map(|i| bool_var(i, format!("v{i}"))).collect();
    let pick = |rng: &mut ChaCha8Rng| {
        let k = rng.gen_range(1..=3usize.min(n_vars));
        let mut chosen: Vec<usize> = ids.choose_multiple(rng, k).copied().collect();
        chosen.sort_unstable();
        chosen
    };
    let actions = (0..n_actions)
        .map(|j| {
            let pre = pick(&mut rng)
                .into_iter()
                .map(|v| Condition::lit(v, rng.gen_bool(0.6)))
                .collect();
            let eff = pick(&mut rng)
                .into_iter()
                .map(|v| Effect::Assign {
                    var: v,
                    value: rng.gen_bool(0.5),
                })
                .collect();
            Action {
                name: format!("a{j}"),
                pre,
                eff,
            }
        })
        .collect();
    let init = (0..n_vars).map(|_| Value::Bool(rng.gen_bool(0.5))).collect();
    let goal = pick(&mut rng)
        .into_iter()
        .map(|v| Condition::lit(v, rng.gen_bool(0.5)))
        .collect();
    Problem {
        vars,
        actions,
        init,
        goal,
        constraints: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OracleStatus {
    Reachable { plan: Vec<String>, steps: usize },
    Unreachable,
    LimitExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleResult {
    #[serde(flatten)]
    pub status: OracleStatus,
    pub states_explored: usize,
}

/// Breadth-first search over explicit states with serial semantics.
/// Returns a shortest plan when the goal is reachable.
pub fn oracle_reachable(p: &Problem, max_states: usize) -> OracleResult {
    let mut parent: HashMap<Vec<Value>, Option<(Vec<Value>, usize)>> = HashMap::new();
    let mut queue = VecDeque::new();
    parent.insert(p.init.clone(), None);
    queue.push_back(p.init.clone());
    while let Some(s) = queue.pop_front() {
        if p.goal_holds(&s) {
            let mut plan = Vec::new();
            let mut cur = s;
            while let Some(Some((prev, a))) = parent.get(&cur).cloned() {
                plan.push(p.actions[a].name.clone());
                cur = prev;
            }
            plan.reverse();
            return OracleResult {
                status: OracleStatus::Reachable {
                    steps: plan.len(),
                    plan,
                },
                states_explored: parent.len(),
            };
        }
        for a in 0..p.actions.len() {
            if let Some(next) = p.successor(a, &s) {
                if !parent.contains_key(&next) {
                    if parent.len() >= max_states {
                        return OracleResult {
                            status: OracleStatus::LimitExceeded,
                            states_explored: parent.len(),
                        };
                    }
                    parent.insert(next.clone(), Some((s.clone(), a)));
                    queue.push_back(next);
                }
            }
        }
    }
    OracleResult {
        status: OracleStatus::Unreachable,
        states_explored: parent.len(),
    }
}

/// Every state reachable from init, or `None` past `max_states`.
pub fn reachable_states(p: &Problem, max_states: usize) -> Option<Vec<Vec<Value>>> {
    let mut seen = std::collections::HashSet::new();
    let mut order = vec![p.init.clone()];
    seen.insert(p.init.clone());
    let mut i = 0;
    while i < order.len() {
        let s = order[i].clone();
        i += 1;
        for a in 0..p.actions.len() {
            if let Some(next) = p.successor(a, &s) {
                if seen.insert(next.clone()) {
                    if seen.len() > max_states {
                        return None;
                    }
                    order.push(next);
                }
            }
        }
    }
    Some(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    BothTrueReachable,
    Never,
    Limit,
}

/// Whether some reachable state makes both boolean variables true.
pub fn oracle_pair_reachable(p: &Problem, u: usize, v: usize, max_states: usize) -> PairStatus {
    match reachable_states(p, max_states) {
        None => PairStatus::Limit,
        Some(states) => {
            let both = states.iter().any(|s| s[u] == Value::Bool(true) && s[v] == Value::Bool(true));
            if both {
                PairStatus::BothTrueReachable
            } else {
                PairStatus::Never
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{parse_problem, serialize_problem, validate_problem};

    fn steps(r: &OracleResult) -> Option<usize> {
        match &r.status {
            OracleStatus::Reachable { steps, .. } => Some(*steps),
            _ => None,
        }
    }

    #[test]
    fn counters_ground_truth() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let r = oracle_reachable(&p, 1000);
        assert_eq!(
            r.status,
            OracleStatus::Reachable {
                plan: vec!["inc0".into(), "inc0".into()],
                steps: 2
            }
        );
        let p = gen_counters(1, 2, &[3]).unwrap();
        assert_eq!(oracle_reachable(&p, 1000).status, OracleStatus::Unreachable);
        let p = gen_counters(2, 5, &[0, 0]).unwrap();
        assert_eq!(steps(&oracle_reachable(&p, 1000)), Some(0));
        assert_eq!(
            gen_counters(2, 5, &[0]),
            Err(GenError::GoalLength { expected: 2, got: 1 })
        );
    }

    #[test]
    fn limit_exceeded() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        assert_eq!(oracle_reachable(&p, 1).status, OracleStatus::LimitExceeded);
    }

    #[test]
    fn delivery_ground_truth() {
        let p = gen_delivery(1, 1, 2, 1).unwrap();
        assert_eq!(steps(&oracle_reachable(&p, 10_000)), Some(4));
        let p = gen_delivery(1, 1, 1, 1).unwrap();
        assert_eq!(steps(&oracle_reachable(&p, 10_000)), Some(0));

        let p = gen_delivery(1, 2, 2, 1).unwrap();
        let lay = DeliveryLayout {
            trucks: 1,
            packages: 2,
            locations: 2,
        };
        let both_in = p.with_goal(vec![Condition::lit(lay.pkg_in(0, 0), true), Condition::lit(lay.pkg_in(1, 0), true)]);
        assert_eq!(oracle_reachable(&both_in, 100_000).status, OracleStatus::Unreachable);
    }

    #[test]
    fn generators_validate_and_round_trip() {
        let problems = vec![
            gen_counters(3, 4, &[1, 2, 5]).unwrap(),
            gen_delivery(2, 2, 2, 2).unwrap(),
            gen_robot(4).unwrap(),
            gen_random_strips(1, 4, 6),
        ];
        for p in problems {
            assert_eq!(validate_problem(&p), vec![]);
            let text = serialize_problem(&p);
            let q = parse_problem(&text).unwrap();
            assert_eq!(q, p);
            assert_eq!(serialize_problem(&q), text);
        }
    }

    #[test]
    fn random_strips_is_deterministic_and_mixed() {
        assert_eq!(gen_random_strips(1, 4, 6), gen_random_strips(1, 4, 6));
        let (mut feasible, mut infeasible) = (0, 0);
        for seed in 1..=100 {
            let p = gen_random_strips(seed, 8, 8);
            assert!(validate_problem(&p).is_empty());
            match oracle_reachable(&p, 1 << 16).status {
                OracleStatus::Reachable { .. } => feasible += 1,
                OracleStatus::Unreachable => infeasible += 1,
                OracleStatus::LimitExceeded => unreachable!("256 states at most"),
            }
        }
        assert!(feasible > 0 && infeasible > 0, "{feasible} {infeasible}");
    }

    #[test]
    fn robot_pairs() {
        let p = gen_robot(2).unwrap();
        assert_eq!(oracle_pair_reachable(&p, 0, 1, 100), PairStatus::Never);
        assert_eq!(oracle_pair_reachable(&p, 1, 1, 100), PairStatus::BothTrueReachable);

        // An action that sets both variables makes the pair reachable.
        let mut q = gen_random_strips(3, 4, 2);
        q.actions[0].pre = vec![];
        q.actions[0].eff = vec![Effect::Assign { var: 0, value: true }, Effect::Assign { var: 1, value: true }];
        assert_eq!(oracle_pair_reachable(&q, 0, 1, 100), PairStatus::BothTrueReachable);
    }
}
