//! Petri net view of a grounded problem: one place per state variable, one
//! transition per action.

use serde::Serialize;

use crate::problem::{Condition, Effect, Problem, RelOp, Value, VarKind};
use crate::rational::Rat;

/// Structural role of an arc between a place and a transition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArcKind {
    /// Boolean place read but not written (a self-loop pair in the net).
    PreOnly { polarity: bool },
    /// Boolean place written without being read.
    EffOnly { value: bool },
    /// Numeric place changed by a constant.
    Delta { delta: Rat },
    /// Boolean place read with value `from` and written with `!from`.
    Flip { from: bool },
    /// Numeric place read by precondition `pre` of the transition.
    NumPre { pre: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Arc {
    pub place: usize,
    pub transition: usize,
    #[serde(flatten)]
    pub kind: ArcKind,
    pub weight: Rat,
}

impl Arc {
    /// Net token change at the place when the transition fires.
    pub fn incidence(&self) -> Rat {
        match &self.kind {
            ArcKind::PreOnly { .. } | ArcKind::NumPre { .. } => Rat::ZERO,
            ArcKind::EffOnly { value } => Rat::from_int(if *value { 1 } else { -1 }),
            ArcKind::Flip { from } => Rat::from_int(if *from { -1 } else { 1 }),
            ArcKind::Delta { delta } => delta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Place {
    pub name: String,
    pub kind: VarKind,
}

/// Optional closed interval.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize)]
pub struct Bounds {
    pub lower: Option<Rat>,
    pub upper: Option<Rat>,
}

impl Bounds {
    pub fn contains(&self, x: &Rat) -> bool {
        self.lower.as_ref().is_none_or(|l| x >= l) && self.upper.as_ref().is_none_or(|u| x <= u)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PetriNet {
    pub places: Vec<Place>,
    pub transitions: Vec<String>,
    pub arcs: Vec<Arc>,
    /// Sparse rows of the incidence matrix, one per place, sorted by transition.
    pub incidence: Vec<Vec<(usize, Rat)>>,
    pub rebind_to_true: Vec<bool>,
    pub rebind_to_false: Vec<bool>,
    /// Booleans are `[0, 1]`; numeric bounds come from declarations and inference.
    pub bounds: Vec<Bounds>,
    pub init_marking: Vec<Value>,
    pub goal_marking: Vec<Condition>,
    pub constraints: Vec<Condition>,
    /// Preconditions per transition, as in the problem.
    pub pre: Vec<Vec<Condition>>,
    /// Effects per transition, as in the problem.
    pub eff: Vec<Vec<Effect>>,
}

impl PetriNet {
    pub fn place_count(&self) -> usize {
        self.places.len()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_bool(&self, place: usize) -> bool {
        self.places[place].kind == VarKind::Boolean
    }

    /// Arcs attached to each transition.
    pub fn arcs_of(&self, t: usize) -> impl Iterator<Item = &Arc> {
        self.arcs.iter().filter(move |a| a.transition == t)
    }

    /// Value written to boolean `place` by `t`, if any.
    pub fn bool_post(&self, t: usize, place: usize) -> Option<bool> {
        self.eff[t].iter().find_map(|e| match e {
            Effect::Assign { var, value } if *var == place => Some(*value),
            _ => None,
        })
    }

    /// Constant change of numeric `place` under `t` (zero when untouched).
    pub fn delta(&self, t: usize, place: usize) -> Rat {
        self.eff[t]
            .iter()
            .find_map(|e| match e {
                Effect::Delta { var, delta } if *var == place => Some(delta.clone()),
                _ => None,
            })
            .unwrap_or(Rat::ZERO)
    }

    /// Transitions that may set boolean `place` to `value`.
    pub fn setters(&self, place: usize, value: bool) -> Vec<usize> {
        (0..self.transition_count())
            .filter(|&t| self.bool_post(t, place) == Some(value))
            .collect()
    }

    /// Transitions with a nonzero incidence entry at `place`.
    pub fn changers(&self, place: usize) -> Vec<usize> {
        self.incidence[place].iter().map(|(t, _)| *t).collect()
    }
}

/// Builds the net, classifying every boolean arc into one of the three
/// structural cases and attaching numeric effects as weighted arcs.
pub fn build_petri(p: &Problem) -> PetriNet {
    let n = p.vars.len();
    let mut arcs = Vec::new();
    for (t, a) in p.actions.iter().enumerate() {
        let post = |var: usize| {
            a.eff.iter().find_map(|e| match e {
                Effect::Assign { var: v, value } if *v == var => Some(*value),
                _ => None,
            })
        };
        let read = |var: usize| {
            a.pre.iter().find_map(|c| match c {
                Condition::Lit { var: v, value } if *v == var => Some(*value),
                _ => None,
            })
        };
        for (i, c) in a.pre.iter().enumerate() {
            match c {
                Condition::Lit { var, value } => {
                    let kind = match post(*var) {
                        Some(v) if v != *value => ArcKind::Flip { from: *value },
                        _ => ArcKind::PreOnly { polarity: *value },
                    };
                    let weight = match &kind {
                        ArcKind::PreOnly { polarity } => Rat::from_int(if *polarity { 1 } else { -1 }),
                        ArcKind::Flip { from } => Rat::from_int(if *from { -1 } else { 1 }),
                        _ => unreachable!(),
                    };
                    arcs.push(Arc {
                        place: *var,
                        transition: t,
                        kind,
                        weight,
                    });
                }
                Condition::Rel { terms, .. } => {
                    for (var, coeff) in terms {
                        arcs.push(Arc {
                            place: *var,
                            transition: t,
                            kind: ArcKind::NumPre { pre: i },
                            weight: coeff.clone(),
                        });
                    }
                }
            }
        }
        for e in &a.eff {
            match e {
                Effect::Assign { var, value } => {
                    if read(*var).is_none() {
                        arcs.push(Arc {
                            place: *var,
                            transition: t,
                            kind: ArcKind::EffOnly { value: *value },
                            weight: Rat::from_int(if *value { 1 } else { -1 }),
                        });
                    }
                }
                Effect::Delta { var, delta } => arcs.push(Arc {
                    place: *var,
                    transition: t,
                    kind: ArcKind::Delta { delta: delta.clone() },
                    weight: delta.clone(),
                }),
            }
        }
    }
    arcs.sort_by_key(|a| (a.place, a.transition));

    let mut incidence: Vec<Vec<(usize, Rat)>> = vec![Vec::new(); n];
    let mut rebind_to_true = vec![false; n];
    let mut rebind_to_false = vec![false; n];
    for arc in &arcs {
        let c = arc.incidence();
        if !c.is_zero() {
            incidence[arc.place].push((arc.transition, c));
        }
        if let ArcKind::EffOnly { value } = arc.kind {
            if value {
                rebind_to_true[arc.place] = true;
            } else {
                rebind_to_false[arc.place] = true;
            }
        }
    }
    let bounds = p
        .vars
        .iter()
        .map(|v| match v.kind {
            VarKind::Boolean => Bounds {
                lower: Some(Rat::ZERO),
                upper: Some(Rat::ONE),
            },
            _ => Bounds {
                lower: v.lower.clone(),
                upper: v.upper.clone(),
            },
        })
        .collect();

    PetriNet {
        places: p
            .vars
            .iter()
            .map(|v| Place {
                name: v.name.clone(),
                kind: v.kind,
            })
            .collect(),
        transitions: p.actions.iter().map(|a| a.name.clone()).collect(),
        arcs,
        incidence,
        rebind_to_true,
        rebind_to_false,
        bounds,
        init_marking: p.init.clone(),
        goal_marking: p.goal.clone(),
        constraints: p.constraints.clone(),
        pre: p.actions.iter().map(|a| a.pre.clone()).collect(),
        eff: p.actions.iter().map(|a| a.eff.clone()).collect(),
    }
}

/// Strongest single-variable bound on `var` implied by `pre`, as
/// (lower, upper).
fn implied_by(pre: &[Condition], var: usize) -> (Option<Rat>, Option<Rat>) {
    let mut lo: Option<Rat> = None;
    let mut hi: Option<Rat> = None;
    for c in pre {
        let Condition::Rel { terms, op, rhs } = c else { continue };
        if terms.len() != 1 || terms[0].0 != var {
            continue;
        }
        let a = &terms[0].1;
        let b = rhs / a;
        let op = if a.is_negative() { op.flipped() } else { *op };
        if matches!(op, RelOp::Ge | RelOp::Eq) {
            lo = Some(lo.map_or(b.clone(), |l| l.max(b.clone())));
        }
        if matches!(op, RelOp::Le | RelOp::Eq) {
            hi = Some(hi.map_or(b.clone(), |h| h.min(b.clone())));
        }
    }
    (lo, hi)
}

/// Infers numeric place bounds from effect directions and guarding
/// preconditions, keeping the tighter of inferred and declared bounds.
/// The initial value always lies inside an inferred bound.
pub fn infer_bounds(mut net: PetriNet) -> PetriNet {
    for v in 0..net.place_count() {
        if net.is_bool(v) {
            continue;
        }
        let init = net.init_marking[v].to_rat();
        let mut dec_ok = true;
        let mut inc_ok = true;
        let mut lower = init.clone();
        let mut upper = init.clone();
        for t in 0..net.transition_count() {
            let d = net.delta(t, v);
            if d.is_zero() {
                continue;
            }
            let (lo, hi) = implied_by(&net.pre[t], v);
            if d.is_negative() {
                match lo {
                    Some(y) => lower = lower.min(y + &d),
                    None => dec_ok = false,
                }
            } else {
                match hi {
                    Some(y) => upper = upper.max(y + &d),
                    None => inc_ok = false,
                }
            }
        }
        let b = &mut net.bounds[v];
        if dec_ok {
            b.lower = Some(match b.lower.take() {
                Some(l) => l.max(lower),
                None => lower,
            });
        }
        if inc_ok {
            b.upper = Some(match b.upper.take() {
                Some(u) => u.min(upper),
                None => upper,
            });
        }
    }
    net
}

/// `build_petri` followed by `infer_bounds`.
pub fn analyze_net(p: &Problem) -> PetriNet {
    infer_bounds(build_petri(p))
}

/// Incidence matrix as (place, transition, entry) triplets.
pub fn incidence_matrix(net: &PetriNet) -> Vec<(usize, usize, Rat)> {
    net.incidence
        .iter()
        .enumerate()
        .flat_map(|(p, row)| row.iter().map(move |(t, c)| (p, t.to_owned(), c.clone())))
        .collect()
}

/// Structured dump for inspection.
pub fn net_json(net: &PetriNet) -> serde_json::Value {
    let places: Vec<_> = net
        .places
        .iter()
        .enumerate()
        .map(|(i, pl)| {
            serde_json::json!({
                "name": pl.name,
                "kind": pl.kind,
                "lower": net.bounds[i].lower,
                "upper": net.bounds[i].upper,
                "init": net.init_marking[i],
                "rebind_to_true": net.rebind_to_true[i],
                "rebind_to_false": net.rebind_to_false[i],
            })
        })
        .collect();
    let triplets: Vec<_> = incidence_matrix(net)
        .into_iter()
        .map(|(p, t, c)| serde_json::json!([net.places[p].name, net.transitions[t], c]))
        .collect();
    let arcs: Vec<_> = net
        .arcs
        .iter()
        .map(|a| {
            let mut v = serde_json::to_value(a).expect("arc serializes");
            v["place"] = serde_json::json!(net.places[a.place].name);
            v["transition"] = serde_json::json!(net.transitions[a.transition]);
            v
        })
        .collect();
    serde_json::json!({
        "places": places,
        "transitions": net.transitions,
        "arcs": arcs,
        "incidence": triplets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{gen_counters, gen_delivery};
    use crate::problem::{Action, StateVariable};

    fn one_action(pre: Vec<Condition>, eff: Vec<Effect>) -> Problem {
        Problem {
            vars: vec![StateVariable {
                id: 0,
                name: "p".into(),
                kind: VarKind::Boolean,
                lower: None,
                upper: None,
            }],
            actions: vec![Action {
                name: "a".into(),
                pre,
                eff,
            }],
            init: vec![Value::Bool(false)],
            goal: vec![],
            constraints: vec![],
        }
    }

    #[test]
    fn precondition_only_arc() {
        let net = build_petri(&one_action(vec![Condition::lit(0, true)], vec![]));
        assert_eq!(net.arcs.len(), 1);
        assert_eq!(net.arcs[0].kind, ArcKind::PreOnly { polarity: true });
        assert_eq!(net.arcs[0].weight, Rat::ONE);
        assert!(incidence_matrix(&net).is_empty());
    }

    #[test]
    fn effect_only_arc() {
        let net = build_petri(&one_action(vec![], vec![Effect::Assign { var: 0, value: true }]));
        assert_eq!(net.arcs[0].kind, ArcKind::EffOnly { value: true });
        assert_eq!(incidence_matrix(&net), vec![(0, 0, Rat::ONE)]);
        assert!(net.rebind_to_true[0] && !net.rebind_to_false[0]);
    }

    #[test]
    fn flip_arc() {
        let net = build_petri(&one_action(
            vec![Condition::lit(0, true)],
            vec![Effect::Assign { var: 0, value: false }],
        ));
        assert_eq!(net.arcs[0].kind, ArcKind::Flip { from: true });
        assert_eq!(incidence_matrix(&net), vec![(0, 0, -Rat::ONE)]);
        assert!(!net.rebind_to_true[0] && !net.rebind_to_false[0]);
    }

    #[test]
    fn no_effects_gives_zero_column() {
        let net = build_petri(&one_action(vec![], vec![]));
        assert!(net.incidence[0].is_empty());
    }

    #[test]
    fn counters_incidence_and_bounds() {
        let mut p = gen_counters(1, 2, &[2]).unwrap();
        let net = build_petri(&p);
        assert_eq!(incidence_matrix(&net), vec![(0, 0, Rat::ONE), (0, 1, -Rat::ONE)]);
        // Remove explicit bounds: inference alone recovers [0, 2].
        p.vars[0].lower = None;
        p.vars[0].upper = None;
        let net = analyze_net(&p);
        assert_eq!(net.bounds[0].lower, Some(Rat::ZERO));
        assert_eq!(net.bounds[0].upper, Some(Rat::from_int(2)));
    }

    #[test]
    fn increase_only_keeps_init_as_lower() {
        let mut p = gen_counters(1, 9, &[0]).unwrap();
        p.vars[0].lower = None;
        p.vars[0].upper = None;
        p.init[0] = Value::Num(Rat::from_int(5));
        p.actions.truncate(1);
        p.actions[0].pre.clear();
        let net = analyze_net(&p);
        assert_eq!(net.bounds[0].lower, Some(Rat::from_int(5)));
        assert_eq!(net.bounds[0].upper, None);
    }

    #[test]
    fn unguarded_decrease_leaves_lower_absent() {
        let mut p = gen_counters(1, 9, &[0]).unwrap();
        p.vars[0].lower = None;
        p.actions[1].pre.clear();
        let net = analyze_net(&p);
        assert_eq!(net.bounds[0].lower, None);
    }

    #[test]
    fn marking_change_matches_incidence_column() {
        let p = gen_delivery(2, 2, 3, 2).unwrap();
        let net = build_petri(&p);
        // From init, every applicable action changes the marking by its column.
        for a in 0..p.actions.len() {
            let Some(next) = p.successor(a, &p.init) else { continue };
            for v in 0..p.vars.len() {
                let change = next[v].to_rat() - p.init[v].to_rat();
                let entry = net.incidence[v]
                    .iter()
                    .find(|(t, _)| *t == a)
                    .map(|(_, c)| c.clone())
                    .unwrap_or(Rat::ZERO);
                assert_eq!(change, entry, "action {} var {}", p.actions[a].name, p.vars[v].name);
            }
        }
    }
}
