//! Relaxed reachability: the marking equation summed over all steps, with
//! slack for rebinding boolean places. Used as a goal-feasibility gate, for
//! mutex invariant synthesis and for minimal conflicting-goal explanations.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::encode::Lit;
use crate::expr::{Expr, VarId};
use crate::lp::{lp_feasible, LinProgram, LpError};
use crate::petri::{ArcKind, PetriNet};
use crate::problem::{Condition, RelOp, Value, VarKind};
use crate::rational::Rat;
use crate::solve::{SolveError, Solver};

/// Goal sizes up to this use exhaustive subset enumeration.
pub const ENUMERATION_THRESHOLD: usize = 12;
/// Cap on correction sets and conflict sets produced by the MIP path.
pub const MIP_SET_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RelaxError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("goal is feasible in the relaxation; nothing to explain")]
    NotInfeasible,
}

/// Template program over `p^h`, `τ̃`, `s+` and `s-` with one flow row per
/// place and one row per global constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelaxedSystem {
    pub lp: LinProgram,
    pub place_var: Vec<usize>,
    pub tau_var: Vec<usize>,
    pub s_plus: Vec<usize>,
    pub s_minus: Vec<usize>,
    pub flow_rows: usize,
}

fn zero() -> Option<Rat> {
    Some(Rat::ZERO)
}

/// Builds the relaxation. Slack `s+` is free only for boolean places that
/// some transition can set false while already false, and `s-` only for
/// places that can be set true while already true.
pub fn build_relaxed_system(net: &PetriNet) -> RelaxedSystem {
    let mut lp = LinProgram::new();
    let place_var: Vec<usize> = (0..net.place_count())
        .map(|i| lp.add_var(format!("p.{}", net.places[i].name), net.bounds[i].lower.clone(), net.bounds[i].upper.clone()))
        .collect();
    let tau_var: Vec<usize> = net
        .transitions
        .iter()
        .map(|t| lp.add_var(format!("tau.{t}"), zero(), None))
        .collect();
    let mut s_plus = Vec::new();
    let mut s_minus = Vec::new();
    for i in 0..net.place_count() {
        let b = net.is_bool(i);
        let name = &net.places[i].name;
        let plus_hi = if b && net.rebind_to_false[i] { None } else { zero() };
        let minus_hi = if b && net.rebind_to_true[i] { None } else { zero() };
        s_plus.push(lp.add_var(format!("splus.{name}"), zero(), plus_hi));
        s_minus.push(lp.add_var(format!("sminus.{name}"), zero(), minus_hi));
    }
    for i in 0..net.place_count() {
        // p^h - C τ̃ - s+ + s- = p0
        let mut coeffs = vec![(place_var[i], Rat::ONE)];
        coeffs.extend(net.incidence[i].iter().map(|(t, c)| (tau_var[*t], -c)));
        coeffs.push((s_plus[i], -Rat::ONE));
        coeffs.push((s_minus[i], Rat::ONE));
        lp.add_row(coeffs, RelOp::Eq, net.init_marking[i].to_rat());
    }
    let mut sys = RelaxedSystem {
        lp,
        place_var,
        tau_var,
        s_plus,
        s_minus,
        flow_rows: net.place_count(),
    };
    for c in &net.constraints {
        add_condition(&mut sys.lp, &sys.place_var, c);
    }
    sys
}

fn add_condition(lp: &mut LinProgram, place_var: &[usize], c: &Condition) {
    match c {
        Condition::Lit { var, value } => {
            lp.add_row(vec![(place_var[*var], Rat::ONE)], RelOp::Eq, Rat::from_int(i64::from(*value)))
        }
        Condition::Rel { terms, op, rhs } => {
            lp.add_row(terms.iter().map(|(v, c)| (place_var[*v], c.clone())).collect(), *op, rhs.clone())
        }
    }
}

impl RelaxedSystem {
    /// Whether the relaxation admits `p^h` satisfying all `conds`.
    pub fn feasible_with<'a>(&self, conds: impl IntoIterator<Item = &'a Condition>) -> Result<bool, LpError> {
        let mut lp = self.lp.clone();
        for c in conds {
            add_condition(&mut lp, &self.place_var, c);
        }
        Ok(lp_feasible(&lp)?.is_feasible())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStatus {
    PossiblyFeasible,
    Infeasible,
}

/// Infeasible is a proof that no plan exists at any horizon.
pub fn check_goal_reachable(sys: &RelaxedSystem, goal: &[Condition]) -> Result<GoalStatus, LpError> {
    Ok(if sys.feasible_with(goal)? {
        GoalStatus::PossiblyFeasible
    } else {
        GoalStatus::Infeasible
    })
}

// ---------------------------------------------------------------------------
// Mutex invariants

/// Two-row program for the pair: the flow rows of `u` and `v` with only the
/// transitions and slacks that touch them.
fn pair_lp(sys: &RelaxedSystem, net: &PetriNet, u: usize, v: usize) -> LinProgram {
    let mut lp = LinProgram::new();
    let mut tau: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for &p in &[u, v] {
        for (t, _) in &net.incidence[p] {
            tau.entry(*t).or_insert_with(|| lp.add_var(format!("tau{t}"), zero(), None));
        }
    }
    for &p in &[u, v] {
        let var = &sys.lp.vars[sys.place_var[p]];
        let pv = lp.add_var("p", var.lower.clone(), var.upper.clone());
        let sp = lp.add_var("sp", zero(), sys.lp.vars[sys.s_plus[p]].upper.clone());
        let sm = lp.add_var("sm", zero(), sys.lp.vars[sys.s_minus[p]].upper.clone());
        let mut coeffs = vec![(pv, Rat::ONE), (sp, -Rat::ONE), (sm, Rat::ONE)];
        coeffs.extend(net.incidence[p].iter().map(|(t, c)| (tau[t], -c)));
        lp.add_row(coeffs, RelOp::Eq, net.init_marking[p].to_rat());
        lp.add_row(vec![(pv, Rat::ONE)], RelOp::Eq, Rat::ONE);
    }
    lp
}

/// Whether `u` and `v` can never be true together. The two-row program is
/// tried first; when it is feasible the full relaxation decides.
pub fn is_mutex(sys: &RelaxedSystem, net: &PetriNet, u: usize, v: usize) -> Result<bool, LpError> {
    if !lp_feasible(&pair_lp(sys, net, u, v))?.is_feasible() {
        return Ok(true);
    }
    let both = [Condition::lit(u, true), Condition::lit(v, true)];
    Ok(!sys.feasible_with(&both)?)
}

/// Boolean place pairs not both true initially.
pub fn mutex_candidates(net: &PetriNet) -> Vec<(usize, usize)> {
    let bools: Vec<usize> = (0..net.place_count()).filter(|&i| net.is_bool(i)).collect();
    let mut out = Vec::new();
    for (a, &u) in bools.iter().enumerate() {
        for &v in &bools[a + 1..] {
            let both = net.init_marking[u] == Value::Bool(true) && net.init_marking[v] == Value::Bool(true);
            if !both {
                out.push((u, v));
            }
        }
    }
    out
}

/// Checks every candidate pair on `threads` workers; output sorted.
pub fn find_mutex_pairs(sys: &RelaxedSystem, net: &PetriNet, threads: usize) -> Result<Vec<(usize, usize)>, LpError> {
    let cands = mutex_candidates(net);
    let next = AtomicUsize::new(0);
    let found = Mutex::new(Vec::new());
    let error = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..threads.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(u, v)) = cands.get(i) else { break };
                match is_mutex(sys, net, u, v) {
                    Ok(true) => found.lock().expect("no poisoning").push((u, v)),
                    Ok(false) => {}
                    Err(e) => {
                        *error.lock().expect("no poisoning") = Some(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = error.into_inner().expect("no poisoning") {
        return Err(e);
    }
    let mut pairs = found.into_inner().expect("no poisoning");
    pairs.sort_unstable();
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroupKind {
    AtMostOne,
    ExactlyOne,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct MutexGroup {
    pub members: Vec<usize>,
    pub kind: GroupKind,
}

impl MutexGroup {
    /// The invariant over place variables, given a variable per place.
    pub fn to_expr(&self, var_of: impl Fn(usize) -> Option<VarId>, constant: impl Fn(usize) -> Option<bool>) -> Expr {
        let mut vars = Vec::new();
        let mut trues = 0u32;
        for &m in &self.members {
            match (constant(m), var_of(m)) {
                (Some(true), _) => trues += 1,
                (Some(false), _) => {}
                (None, Some(v)) => vars.push(v),
                (None, None) => {}
            }
        }
        match self.kind {
            GroupKind::AtMostOne if trues > 1 => Expr::fals(),
            GroupKind::AtMostOne => Expr::at_most(vars, 1 - trues),
            GroupKind::ExactlyOne if trues > 1 => Expr::fals(),
            GroupKind::ExactlyOne => Expr::exactly(vars, 1 - trues),
        }
    }
}

/// Greedy clique cover of the mutex graph. Each round seeds from the lowest
/// vertex with an uncovered edge, adds its lowest uncovered neighbour, then
/// grows by the lowest vertex adjacent to every member.
pub fn build_mutex_groups(pairs: &[(usize, usize)]) -> Vec<MutexGroup> {
    let norm = |(a, b): (usize, usize)| if a < b { (a, b) } else { (b, a) };
    let edges: BTreeSet<(usize, usize)> = pairs.iter().map(|&p| norm(p)).filter(|(a, b)| a != b).collect();
    let adjacent = |a: usize, b: usize| edges.contains(&norm((a, b)));
    let vertices: BTreeSet<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let mut uncovered = edges.clone();
    let mut groups = Vec::new();
    while let Some(&(seed, first)) = uncovered.iter().next() {
        let mut members = vec![seed, first];
        for &w in &vertices {
            if !members.contains(&w) && members.iter().all(|&m| adjacent(m, w)) {
                members.push(w);
            }
        }
        members.sort_unstable();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                uncovered.remove(&(a, b));
            }
        }
        groups.push(MutexGroup {
            members,
            kind: GroupKind::AtMostOne,
        });
    }
    groups.sort();
    groups.dedup();
    groups
}

/// Upgrades a group to exactly-one when a member is initially true and
/// every transition that disables a member enables another member.
pub fn detect_one_hot(group: &MutexGroup, net: &PetriNet) -> MutexGroup {
    let mut out = group.clone();
    let in_group = |p: usize| group.members.contains(&p);
    let some_true = group.members.iter().any(|&m| net.init_marking[m] == Value::Bool(true));
    if !some_true {
        return out;
    }
    let ok = (0..net.transition_count()).all(|t| {
        let mut disables = false;
        let mut enables = BTreeSet::new();
        for a in net.arcs_of(t).filter(|a| in_group(a.place)) {
            match a.kind {
                ArcKind::Flip { from: true } | ArcKind::EffOnly { value: false } => disables = true,
                ArcKind::Flip { from: false } | ArcKind::EffOnly { value: true } => {
                    enables.insert(a.place);
                }
                _ => {}
            }
        }
        !disables || !enables.is_empty()
    });
    if ok {
        out.kind = GroupKind::ExactlyOne;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Invariants {
    pub pairs: Vec<(usize, usize)>,
    pub groups: Vec<MutexGroup>,
}

/// Pairs, groups and one-hot upgrades in one pass.
pub fn synthesize_invariants(sys: &RelaxedSystem, net: &PetriNet, threads: usize) -> Result<Invariants, LpError> {
    let pairs = find_mutex_pairs(sys, net, threads)?;
    let groups = build_mutex_groups(&pairs).iter().map(|g| detect_one_hot(g, net)).collect();
    Ok(Invariants { pairs, groups })
}

// ---------------------------------------------------------------------------
// Explanations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainMethod {
    Enumeration,
    Mip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Explanation {
    /// Minimal infeasible sets of goal indices, sorted.
    pub goal_index_sets: Vec<Vec<usize>>,
    pub method: ExplainMethod,
    /// Set when the MIP path stopped at its cap.
    pub capped: bool,
}

fn subset_feasible(sys: &RelaxedSystem, goal: &[Condition], set: &[usize]) -> Result<bool, LpError> {
    sys.feasible_with(set.iter().map(|&i| &goal[i]))
}

/// Whether `set` is infeasible and every one-smaller subset is feasible.
pub fn is_minimal_conflict(sys: &RelaxedSystem, goal: &[Condition], set: &[usize]) -> Result<bool, LpError> {
    if subset_feasible(sys, goal, set)? {
        return Ok(false);
    }
    for i in 0..set.len() {
        let mut rest = set.to_vec();
        rest.remove(i);
        if !subset_feasible(sys, goal, &rest)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> Result<(), LpError>) -> Result<(), LpError> {
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return Ok(());
    }
    loop {
        f(&idx)?;
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// All minimal infeasible subsets, by increasing cardinality with superset
/// pruning.
pub fn enumerate_conflicts(sys: &RelaxedSystem, goal: &[Condition]) -> Result<Vec<Vec<usize>>, LpError> {
    let mut found: Vec<Vec<usize>> = Vec::new();
    for k in 1..=goal.len() {
        let mut new = Vec::new();
        combinations(goal.len(), k, |set| {
            let covers = found.iter().any(|f| f.iter().all(|i| set.contains(i)));
            if !covers && !subset_feasible(sys, goal, set)? {
                new.push(set.to_vec());
            }
            Ok(())
        })?;
        found.extend(new);
    }
    Ok(found)
}

fn condition_expr(c: &Condition, pvar: &[VarId]) -> Expr {
    match c {
        Condition::Lit { var, value } => Expr::linear([(pvar[*var], Rat::ONE)], RelOp::Eq, Rat::from_int(i64::from(*value))),
        Condition::Rel { terms, op, rhs } => Expr::linear(terms.iter().map(|(v, c)| (pvar[*v], c.clone())), *op, rhs.clone()),
    }
}

/// Minimum-cardinality correction sets: `y_i` disables goal condition `i`
/// (`¬y_i ⟹ G_i`), `Σ y` is minimized, and each found set `D` is blocked
/// with `Σ_D y ≤ |D| - 1`.
pub fn correction_sets(sys: &RelaxedSystem, goal: &[Condition], cap: usize) -> Result<(Vec<Vec<usize>>, bool), RelaxError> {
    let mut s = Solver::default();
    let vars: Vec<VarId> = sys
        .lp
        .vars
        .iter()
        .enumerate()
        .map(|(i, v)| s.declare(&format!("{}#{i}", v.name), VarKind::Real, v.lower.clone(), v.upper.clone()))
        .collect::<Result<_, _>>()?;
    for r in &sys.lp.rows {
        s.assert(&Expr::linear(r.coeffs.iter().map(|(v, c)| (vars[*v], c.clone())), r.op, r.rhs.clone()))?;
    }
    let pvar: Vec<VarId> = sys.place_var.iter().map(|&p| vars[p]).collect();
    let y: Vec<VarId> = (0..goal.len())
        .map(|i| s.declare(&format!("y{i}"), VarKind::Boolean, None, None))
        .collect::<Result<_, _>>()?;
    for (i, g) in goal.iter().enumerate() {
        s.assert(&Expr::or([Expr::var(y[i]), condition_expr(g, &pvar)]))?;
    }
    let lits: Vec<Lit> = y.iter().map(|&v| (v, true)).collect();
    let mut sets = Vec::new();
    loop {
        if sets.len() >= cap {
            return Ok((sets, true));
        }
        let Some((_, m)) = s.minimize_true(&lits, &[])? else { break };
        let d: Vec<usize> = (0..goal.len()).filter(|&i| m.is_true(y[i])).collect();
        if d.is_empty() {
            break;
        }
        s.assert(&Expr::at_most(d.iter().map(|&i| y[i]).collect(), d.len() as u32 - 1))?;
        sets.push(d);
    }
    Ok((sets, false))
}

/// Minimal hitting sets of `family`, in increasing cardinality, up to `cap`.
pub fn minimal_hitting_sets(n: usize, family: &[Vec<usize>], cap: usize) -> Result<Vec<Vec<usize>>, SolveError> {
    let mut s = Solver::default();
    let z: Vec<VarId> = (0..n)
        .map(|i| s.declare(&format!("z{i}"), VarKind::Boolean, None, None))
        .collect::<Result<_, _>>()?;
    for set in family {
        s.assert(&Expr::or(set.iter().map(|&i| Expr::var(z[i]))))?;
    }
    let lits: Vec<Lit> = z.iter().map(|&v| (v, true)).collect();
    let mut out = Vec::new();
    while out.len() < cap {
        let Some((_, m)) = s.minimize_true(&lits, &[])? else { break };
        let h: Vec<usize> = (0..n).filter(|&i| m.is_true(z[i])).collect();
        if h.is_empty() {
            break;
        }
        s.assert(&Expr::at_most(h.iter().map(|&i| z[i]).collect(), h.len() as u32 - 1))?;
        out.push(h);
    }
    Ok(out)
}

/// Shrinks an infeasible set to a minimal one by dropping members whose
/// removal keeps it infeasible.
pub fn deletion_filter(sys: &RelaxedSystem, goal: &[Condition], set: &[usize]) -> Result<Vec<usize>, LpError> {
    let mut cur = set.to_vec();
    let mut i = 0;
    while i < cur.len() {
        let mut rest = cur.clone();
        rest.remove(i);
        if !subset_feasible(sys, goal, &rest)? {
            cur = rest;
        } else {
            i += 1;
        }
    }
    Ok(cur)
}

/// Minimal conflicting goal sets. Small goals are enumerated exhaustively;
/// larger ones go through correction sets and hitting-set duality, and
/// every reported set is checked for minimality.
pub fn explain_infeasibility(sys: &RelaxedSystem, goal: &[Condition]) -> Result<Explanation, RelaxError> {
    let all: Vec<usize> = (0..goal.len()).collect();
    if subset_feasible(sys, goal, &all)? {
        return Err(RelaxError::NotInfeasible);
    }
    if goal.len() <= ENUMERATION_THRESHOLD {
        return Ok(Explanation {
            goal_index_sets: enumerate_conflicts(sys, goal)?,
            method: ExplainMethod::Enumeration,
            capped: false,
        });
    }
    let (mcs, mut capped) = correction_sets(sys, goal, MIP_SET_CAP)?;
    let candidates = minimal_hitting_sets(goal.len(), &mcs, MIP_SET_CAP)?;
    capped |= candidates.len() >= MIP_SET_CAP;
    let mut sets = Vec::new();
    for h in candidates {
        if is_minimal_conflict(sys, goal, &h)? {
            sets.push(h);
        }
    }
    if sets.is_empty() {
        sets.push(deletion_filter(sys, goal, &all)?);
    }
    sets.sort();
    sets.dedup();
    Ok(Explanation {
        goal_index_sets: sets,
        method: ExplainMethod::Mip,
        capped,
    })
}

/// Outcome of the relaxation gate with its explanation, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GateReport {
    pub status: GoalStatus,
    pub explanation: Option<Explanation>,
}

pub fn relaxation_gate(sys: &RelaxedSystem, goal: &[Condition]) -> Result<GateReport, RelaxError> {
    match check_goal_reachable(sys, goal)? {
        GoalStatus::PossiblyFeasible => Ok(GateReport {
            status: GoalStatus::PossiblyFeasible,
            explanation: None,
        }),
        GoalStatus::Infeasible => Ok(GateReport {
            status: GoalStatus::Infeasible,
            explanation: Some(explain_infeasibility(sys, goal)?),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{gen_counters, gen_robot};
    use crate::petri::analyze_net;
    use crate::problem::Problem;

    fn system(p: &Problem) -> (PetriNet, RelaxedSystem) {
        let net = analyze_net(p);
        let sys = build_relaxed_system(&net);
        (net, sys)
    }

    fn c_eq(k: i64) -> Condition {
        Condition::rel([(0, Rat::ONE)], RelOp::Eq, Rat::from_int(k))
    }

    #[test]
    fn counters_system_shape() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let (_, sys) = system(&p);
        assert_eq!(sys.flow_rows, 1);
        let row = &sys.lp.rows[0];
        assert_eq!(row.rhs, Rat::ZERO);
        assert!(row.coeffs.contains(&(sys.tau_var[0], -Rat::ONE)));
        assert!(row.coeffs.contains(&(sys.tau_var[1], Rat::ONE)));
        assert_eq!(sys.lp.vars[sys.s_plus[0]].upper, Some(Rat::ZERO));
        assert_eq!(sys.lp.vars[sys.s_minus[0]].upper, Some(Rat::ZERO));
    }

    #[test]
    fn counters_goal_checks() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let (_, sys) = system(&p);
        assert_eq!(check_goal_reachable(&sys, &[c_eq(3)]).unwrap(), GoalStatus::Infeasible);
        assert_eq!(check_goal_reachable(&sys, &[c_eq(2)]).unwrap(), GoalStatus::PossiblyFeasible);
        let e = explain_infeasibility(&sys, &[c_eq(3)]).unwrap();
        assert_eq!(e.goal_index_sets, vec![vec![0]]);
        let e = explain_infeasibility(&sys, &[c_eq(1), c_eq(2)]).unwrap();
        assert_eq!(e.goal_index_sets, vec![vec![0, 1]]);
        assert_eq!(explain_infeasibility(&sys, &[c_eq(2)]), Err(RelaxError::NotInfeasible));
    }

    #[test]
    fn no_transitions_gives_identity_rows() {
        let mut p = gen_counters(1, 2, &[0]).unwrap();
        p.actions.clear();
        let (_, sys) = system(&p);
        assert_eq!(sys.lp.rows.len(), 1);
        assert_eq!(sys.lp.rows[0].coeffs.len(), 3);
    }

    #[test]
    fn robot_pairs_groups_and_one_hot() {
        let p = gen_robot(2).unwrap();
        let (net, sys) = system(&p);
        let inv = synthesize_invariants(&sys, &net, 2).unwrap();
        assert_eq!(inv.pairs, vec![(0, 1)]);
        assert_eq!(inv.groups, vec![MutexGroup { members: vec![0, 1], kind: GroupKind::ExactlyOne }]);
        let e = explain_infeasibility(&sys, &[Condition::lit(0, true), Condition::lit(1, true)]).unwrap();
        assert_eq!(e.goal_index_sets, vec![vec![0, 1]]);

        let p = gen_robot(5).unwrap();
        let (net, sys) = system(&p);
        let inv = synthesize_invariants(&sys, &net, 3).unwrap();
        assert_eq!(inv.groups.len(), 1);
        assert_eq!(inv.groups[0].members.len(), 5);
        assert_eq!(inv.groups[0].kind, GroupKind::ExactlyOne);
    }

    #[test]
    fn clique_cover_examples() {
        let tri = build_mutex_groups(&[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(tri.len(), 1);
        assert_eq!(tri[0].members, vec![0, 1, 2]);
        let path = build_mutex_groups(&[(0, 1), (1, 2)]);
        assert_eq!(path.iter().map(|g| g.members.clone()).collect::<Vec<_>>(), vec![vec![0, 1], vec![1, 2]]);
    }

    #[test]
    fn one_hot_rejections() {
        let p = gen_robot(3).unwrap();
        let (net, _) = system(&p);
        let g = MutexGroup { members: vec![1, 2], kind: GroupKind::AtMostOne };
        // no member initially true
        assert_eq!(detect_one_hot(&g, &net).kind, GroupKind::AtMostOne);
        // moves out of location 0 enable a location outside {0, 1}
        let g = MutexGroup { members: vec![0, 1], kind: GroupKind::AtMostOne };
        assert_eq!(detect_one_hot(&g, &net).kind, GroupKind::AtMostOne);
    }

    #[test]
    fn mip_path_agrees_with_enumeration() {
        let p = gen_counters(3, 2, &[0, 0, 0]).unwrap();
        let (_, sys) = system(&p);
        let eq = |v: usize, k: i64| Condition::rel([(v, Rat::ONE)], RelOp::Eq, Rat::from_int(k));
        let goal = vec![eq(0, 1), eq(0, 2), eq(1, 3), eq(2, 1), eq(2, 0)];
        let mut full = enumerate_conflicts(&sys, &goal).unwrap();
        assert_eq!(full, vec![vec![2], vec![0, 1], vec![3, 4]]);
        full.sort();
        let (mcs, capped) = correction_sets(&sys, &goal, MIP_SET_CAP).unwrap();
        assert!(!capped);
        let hs = minimal_hitting_sets(goal.len(), &mcs, MIP_SET_CAP).unwrap();
        let mut hs_sorted = hs.clone();
        hs_sorted.sort();
        assert_eq!(hs_sorted, full);
        for h in &hs {
            assert!(is_minimal_conflict(&sys, &goal, h).unwrap());
        }
    }

    #[test]
    fn large_goal_uses_mip_path() {
        let p = gen_counters(14, 2, &[0; 14]).unwrap();
        let (_, sys) = system(&p);
        let mut goal: Vec<Condition> = (0..14).map(|v| Condition::rel([(v, Rat::ONE)], RelOp::Le, Rat::from_int(2))).collect();
        goal.push(Condition::rel([(3, Rat::ONE)], RelOp::Ge, Rat::from_int(3)));
        goal.push(Condition::rel([(5, Rat::ONE)], RelOp::Eq, Rat::ONE));
        goal.push(Condition::rel([(5, Rat::ONE)], RelOp::Eq, Rat::from_int(2)));
        let e = explain_infeasibility(&sys, &goal).unwrap();
        assert_eq!(e.method, ExplainMethod::Mip);
        assert_eq!(e.goal_index_sets, vec![vec![14], vec![15, 16]]);
    }
}
