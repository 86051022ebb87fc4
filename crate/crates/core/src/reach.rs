//! Per-step reachable-set approximations. Bindings are definite values a
//! place must take at a step; states violating them are unreachable there.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::expr::{psat, pval, BindingSet, Expr, Psat, VarTable};
use crate::petri::PetriNet;
use crate::problem::{Condition, RelOp, Value};
use crate::rational::Rat;

pub const DEFAULT_MAX_STEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachableSets {
    pub direction: Direction,
    /// Place bindings per step; backward steps count distance from the goal.
    pub per_step: Vec<BindingSet>,
    /// Transitions proved unable to fire out of (forward) or into (backward)
    /// the state at each step.
    pub disabled: Vec<BTreeSet<usize>>,
    pub fixpoint_step: usize,
}

impl ReachableSets {
    /// Bindings at step `k`, saturating at the last computed step.
    pub fn at(&self, k: usize) -> &BindingSet {
        &self.per_step[k.min(self.per_step.len() - 1)]
    }

    pub fn disabled_at(&self, k: usize) -> &BTreeSet<usize> {
        &self.disabled[k.min(self.disabled.len() - 1)]
    }
}

/// Variable table with one variable per place, in place order, carrying the
/// net's bounds.
pub fn place_table(net: &PetriNet) -> VarTable {
    let mut t = VarTable::new();
    for (i, p) in net.places.iter().enumerate() {
        let b = &net.bounds[i];
        t.declare(&p.name, p.kind, b.lower.clone(), b.upper.clone())
            .expect("place names are unique");
    }
    t
}

/// A condition over places as an expression over `var_of(place)`.
pub fn condition_expr(c: &Condition, var_of: impl Fn(usize) -> usize) -> Expr {
    match c {
        Condition::Lit { var, value } => Expr::lit(var_of(*var), *value),
        Condition::Rel { terms, op, rhs } => {
            Expr::linear(terms.iter().map(|(v, c)| (var_of(*v), c.clone())), *op, rhs.clone())
        }
    }
}

fn conditions_expr<'a>(cs: impl IntoIterator<Item = &'a Condition>) -> Expr {
    Expr::and(cs.into_iter().map(|c| condition_expr(c, |v| v)))
}

fn consistent(e: &Expr, b: &BindingSet, vars: &VarTable) -> bool {
    psat(&pval(e, b), vars) != Psat::Unsat
}

/// Whether firing `t` would push a bound numeric place outside its bounds.
fn leaves_bounds(net: &PetriNet, t: usize, b: &BindingSet, sign: i64) -> bool {
    net.incidence.iter().enumerate().any(|(p, row)| {
        if net.is_bool(p) {
            return false;
        }
        let Some(Value::Num(x)) = b.get(&p) else { return false };
        row.iter()
            .find(|(tt, _)| *tt == t)
            .is_some_and(|(_, d)| !net.bounds[p].contains(&(x + &(d * &Rat::from_int(sign)))))
    })
}

fn writes(net: &PetriNet, t: usize, p: usize) -> bool {
    if net.is_bool(p) {
        net.bool_post(t, p).is_some()
    } else {
        !net.delta(t, p).is_zero()
    }
}

/// Whether an enabled `t` can leave `p` with a value other than `v`.
fn may_change(net: &PetriNet, t: usize, p: usize, v: &Value) -> bool {
    match (net.bool_post(t, p), v) {
        (Some(post), Value::Bool(b)) => post != *b,
        _ => !net.delta(t, p).is_zero(),
    }
}

fn forward_disabled(net: &PetriNet, vars: &VarTable, b: &BindingSet) -> BTreeSet<usize> {
    let constraints = conditions_expr(&net.constraints);
    (0..net.transition_count())
        .filter(|&t| {
            let pre = Expr::and([conditions_expr(&net.pre[t]), constraints.clone()]);
            !consistent(&pre, b, vars) || leaves_bounds(net, t, b, 1)
        })
        .collect()
}

fn backward_disabled(net: &PetriNet, b: &BindingSet) -> BTreeSet<usize> {
    (0..net.transition_count())
        .filter(|&t| {
            let clash = net.places.iter().enumerate().any(|(p, _)| match (net.bool_post(t, p), b.get(&p)) {
                (Some(post), Some(Value::Bool(v))) => post != *v,
                _ => false,
            });
            clash || leaves_bounds(net, t, b, -1)
        })
        .collect()
}

/// Bindings implied by the goal: boolean literals and single-variable
/// equalities.
pub fn goal_bindings(net: &PetriNet, goal: &[Condition]) -> BindingSet {
    let mut b = BindingSet::new();
    for c in goal {
        match c {
            Condition::Lit { var, value } => {
                b.insert(*var, Value::Bool(*value));
            }
            Condition::Rel { terms, op: RelOp::Eq, rhs } if terms.len() == 1 => {
                let (v, coeff) = &terms[0];
                let x = rhs / coeff;
                if net.places[*v].kind.is_integral() && !x.is_integer() {
                    continue;
                }
                b.insert(*v, Value::Num(x));
            }
            _ => {}
        }
    }
    b
}

/// Iterates transition disabling and binding persistence from `start` until
/// the bindings stabilize or `max_steps` is reached.
pub fn propagate(net: &PetriNet, start: BindingSet, direction: Direction, max_steps: usize) -> ReachableSets {
    let vars = place_table(net);
    let mut per_step = vec![start];
    let mut disabled = Vec::new();
    loop {
        let k = per_step.len() - 1;
        let b = &per_step[k];
        let off = match direction {
            Direction::Forward => forward_disabled(net, &vars, b),
            Direction::Backward => backward_disabled(net, b),
        };
        let next: BindingSet = b
            .iter()
            .filter(|(p, v)| {
                (0..net.transition_count()).filter(|t| !off.contains(t)).all(|t| match direction {
                    Direction::Forward => !may_change(net, t, **p, v),
                    Direction::Backward => !writes(net, t, **p),
                })
            })
            .map(|(p, v)| (*p, v.clone()))
            .collect();
        disabled.push(off);
        if next == per_step[k] || k >= max_steps {
            return ReachableSets {
                direction,
                per_step,
                disabled,
                fixpoint_step: k,
            };
        }
        per_step.push(next);
    }
}

pub fn propagate_forward(net: &PetriNet, max_steps: usize) -> ReachableSets {
    let start = net.init_marking.iter().cloned().enumerate().collect();
    propagate(net, start, Direction::Forward, max_steps)
}

pub fn propagate_backward(net: &PetriNet, goal: &[Condition], max_steps: usize) -> ReachableSets {
    propagate(net, goal_bindings(net, goal), Direction::Backward, max_steps)
}

/// Bindings at the forward fixpoint: places no reachable state changes.
pub fn constants(fwd: &ReachableSets) -> BindingSet {
    fwd.at(fwd.fixpoint_step).clone()
}

/// `max(kf, kb)`: the first forward step whose bindings admit the goal and
/// the first backward step whose bindings admit the initial state. A side
/// with no such step contributes `max_steps`.
pub fn horizon_lower_bound(
    net: &PetriNet,
    fwd: &ReachableSets,
    bwd: &ReachableSets,
    goal: &[Condition],
    max_steps: usize,
) -> usize {
    let vars = place_table(net);
    let g = Expr::and([conditions_expr(goal), conditions_expr(&net.constraints)]);
    let kf = (0..=fwd.fixpoint_step)
        .find(|&k| consistent(&g, fwd.at(k), &vars))
        .unwrap_or(max_steps);
    let kb = (0..=bwd.fixpoint_step)
        .find(|&k| bwd.at(k).iter().all(|(p, v)| net.init_marking[*p] == *v))
        .unwrap_or(max_steps);
    kf.max(kb)
}

/// Per-step bindings and disabled transitions by name.
pub fn reach_json(net: &PetriNet, sets: &ReachableSets) -> serde_json::Value {
    let steps: Vec<serde_json::Value> = sets
        .per_step
        .iter()
        .zip(&sets.disabled)
        .map(|(b, d)| {
            let bindings: serde_json::Map<String, serde_json::Value> = b
                .iter()
                .map(|(p, v)| (net.places[*p].name.clone(), serde_json::to_value(v).expect("values serialize")))
                .collect();
            let off: Vec<&str> = d.iter().map(|t| net.transitions[*t].as_str()).collect();
            serde_json::json!({ "bindings": bindings, "disabled": off })
        })
        .collect();
    serde_json::json!({
        "direction": sets.direction,
        "fixpointStep": sets.fixpoint_step,
        "perStep": steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{gen_counters, gen_robot};
    use crate::petri::analyze_net;

    fn num(k: i64) -> Value {
        Value::Num(Rat::from_int(k))
    }

    #[test]
    fn counters_forward() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let net = analyze_net(&p);
        let fwd = propagate_forward(&net, DEFAULT_MAX_STEPS);
        assert_eq!(fwd.per_step[0].get(&0), Some(&num(0)));
        let dec = net.transitions.iter().position(|t| t.starts_with("dec")).unwrap();
        assert_eq!(fwd.disabled[0], BTreeSet::from([dec]));
        assert!(fwd.at(1).is_empty());
        assert_eq!(fwd.fixpoint_step, 1);
        assert!(constants(&fwd).is_empty());
        assert!(fwd.disabled_at(1).is_empty());
    }

    #[test]
    fn untouched_place_is_constant() {
        let mut p = gen_counters(2, 3, &[1, 0]).unwrap();
        p.actions.retain(|a| !a.name.ends_with("c1"));
        p.init[1] = num(3);
        let net = analyze_net(&p);
        let fwd = propagate_forward(&net, DEFAULT_MAX_STEPS);
        assert_eq!(constants(&fwd), BindingSet::from([(1, num(3))]));
    }

    #[test]
    fn no_actions_fixpoint_zero() {
        let mut p = gen_counters(2, 3, &[1, 0]).unwrap();
        p.actions.clear();
        let net = analyze_net(&p);
        let fwd = propagate_forward(&net, DEFAULT_MAX_STEPS);
        assert_eq!(fwd.fixpoint_step, 0);
        assert_eq!(constants(&fwd).len(), 2);
    }

    #[test]
    fn lower_bounds() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let net = analyze_net(&p);
        let fwd = propagate_forward(&net, DEFAULT_MAX_STEPS);
        let bwd = propagate_backward(&net, &p.goal, DEFAULT_MAX_STEPS);
        // definite bindings lose c after one step, so the bound is 1, not 2
        assert_eq!(horizon_lower_bound(&net, &fwd, &bwd, &p.goal, DEFAULT_MAX_STEPS), 1);
        let init_goal = [Condition::rel([(0, Rat::ONE)], RelOp::Eq, Rat::ZERO)];
        let bwd = propagate_backward(&net, &init_goal, DEFAULT_MAX_STEPS);
        assert_eq!(horizon_lower_bound(&net, &fwd, &bwd, &init_goal, DEFAULT_MAX_STEPS), 0);
    }

    #[test]
    fn robot_chain_bound() {
        let p = gen_robot(4).unwrap();
        let net = analyze_net(&p);
        let fwd = propagate_forward(&net, DEFAULT_MAX_STEPS);
        let goal = [Condition::lit(3, true)];
        let bwd = propagate_backward(&net, &goal, DEFAULT_MAX_STEPS);
        let h = horizon_lower_bound(&net, &fwd, &bwd, &goal, DEFAULT_MAX_STEPS);
        assert!(h >= 1);
        let json = reach_json(&net, &fwd);
        assert_eq!(json["direction"], "FORWARD");
    }
}
