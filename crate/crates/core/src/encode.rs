//! Translation of expressions into mixed-integer rows, and the per-step
//! planning encoding built on top of it.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::expr::{nnf, Expr, LinRel, Node, VarId, VarTable};
use crate::petri::PetriNet;
use crate::problem::{Condition, RelOp, Value, VarKind};
use crate::rational::Rat;
use crate::reach::ReachableSets;
use crate::relax::{build_mutex_groups, MutexGroup};
use crate::solve::{SolveError, Solver};

/// Boolean literal `(var, polarity)`.
pub type Lit = (VarId, bool);

/// `guard ⟹ rel`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Indicator {
    pub guard: Lit,
    pub rel: LinRel,
}

/// Output of the Plaisted-Greenbaum transform.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cnf {
    pub clauses: Vec<Vec<Lit>>,
    /// Unconditional linear rows (top-level relations and cardinalities).
    pub rows: Vec<LinRel>,
    pub indicators: Vec<Indicator>,
    pub aux: Vec<VarId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MilpMode {
    Indicator,
    BigM,
}

/// Safety factor for Big-M values.
pub const BIG_M_SCALE: i64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("variable `{0}` needs finite bounds for a Big-M row")]
    Unbounded(String),
}

/// Linear rows and (in indicator mode) native indicator rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MilpConstraintSet {
    pub rows: Vec<LinRel>,
    pub indicators: Vec<Indicator>,
}

fn card_rel(vs: &[VarId], op: RelOp, k: u32) -> LinRel {
    LinRel::new(vs.iter().map(|v| (*v, Rat::ONE)), op, Rat::from_int(k as i64))
}

fn fresh_aux(vars: &mut VarTable) -> VarId {
    let mut n = vars.len();
    loop {
        if let Ok(v) = vars.declare(&format!("_aux{n}"), VarKind::Boolean, None, None) {
            return v;
        }
        n += 1;
    }
}

struct Pg<'a> {
    vars: &'a mut VarTable,
    out: Cnf,
}

impl Pg<'_> {
    fn aux(&mut self) -> VarId {
        let v = fresh_aux(self.vars);
        self.out.aux.push(v);
        v
    }

    fn clause(&mut self, guard: Option<Lit>, mut lits: Vec<Lit>) {
        if let Some((g, pol)) = guard {
            lits.push((g, !pol));
        }
        lits.sort_unstable();
        lits.dedup();
        if lits.windows(2).any(|w| w[0].0 == w[1].0) {
            return;
        }
        self.out.clauses.push(lits);
    }

    fn rel(&mut self, guard: Option<Lit>, rel: LinRel) {
        match guard {
            None => self.out.rows.push(rel),
            Some(g) => self.out.indicators.push(Indicator { guard: g, rel }),
        }
    }

    /// Encodes `guard ⟹ e` for `e` in negation normal form.
    fn enc(&mut self, e: &Expr, guard: Option<Lit>) {
        if let Some(l) = e.as_lit() {
            return self.clause(guard, vec![l]);
        }
        match e.node() {
            Node::Const(true) => {}
            Node::Const(false) => self.clause(guard, vec![]),
            Node::And(cs) => cs.iter().for_each(|c| self.enc(c, guard)),
            Node::Rel(r) => self.rel(guard, r.clone()),
            Node::AtMost(vs, k) => self.rel(guard, card_rel(vs, RelOp::Le, *k)),
            Node::Exactly(vs, k) => self.rel(guard, card_rel(vs, RelOp::Eq, *k)),
            Node::Or(cs) => self.enc_or(cs, guard),
            Node::Var(_) | Node::Not(_) | Node::Implies(..) => {
                unreachable!("input is in negation normal form")
            }
        }
    }

    fn enc_or(&mut self, cs: &[Expr], guard: Option<Lit>) {
        let mut lits: Vec<Lit> = Vec::new();
        let mut complex: Vec<&Expr> = Vec::new();
        for c in cs {
            match c.as_lit() {
                Some(l) => lits.push(l),
                None => complex.push(c),
            }
        }
        if complex.len() == 1 {
            let c = complex[0];
            if let Node::And(parts) = c.node() {
                // (L ∨ (a ∧ b)) ⟹ (L ∨ a) ∧ (L ∨ b)
                for p in parts {
                    let mut kids: Vec<Expr> = lits.iter().map(|&(v, pol)| Expr::lit(v, pol)).collect();
                    kids.push(p.clone());
                    self.enc(&Expr::or(kids), guard);
                }
                return;
            }
            let mut conds = lits.clone();
            if let Some((g, pol)) = guard {
                conds.push((g, !pol));
            }
            if conds.len() == 1 {
                // (l ∨ rel) ≡ (¬l ⟹ rel): the literal itself guards
                let (v, pol) = conds[0];
                return self.enc(c, Some((v, !pol)));
            }
        }
        for c in complex {
            let a = self.aux();
            self.enc(c, Some((a, true)));
            lits.push((a, true));
        }
        self.clause(guard, lits);
    }
}

/// Equisatisfiable clause/row/indicator form of `e`. Only the forward
/// direction of each definition is emitted; auxiliaries are introduced only
/// for complex children of disjunctions.
pub fn pg_transform(e: &Expr, vars: &mut VarTable) -> Cnf {
    let e = nnf(e, vars);
    let mut pg = Pg {
        vars,
        out: Cnf::default(),
    };
    pg.enc(&e, None);
    pg.out
}

/// Interval upper bound of `sum(c * x)` over the boxes.
fn activity_max(terms: &[(VarId, Rat)], vars: &VarTable) -> Result<Rat, EncodeError> {
    let mut total = Rat::ZERO;
    for (v, c) in terms {
        let info = vars.get(*v);
        let b = if c.is_positive() { info.hi() } else { info.lo() };
        let b = b.ok_or_else(|| EncodeError::Unbounded(info.name.clone()))?;
        total += c * b;
    }
    Ok(total)
}

/// `guard ⟹ sum <= rhs` as a single Big-M row.
fn big_m_le(terms: &[(VarId, Rat)], rhs: &Rat, guard: Lit, vars: &VarTable) -> Result<Option<LinRel>, EncodeError> {
    let ub = activity_max(terms, vars)?;
    let m = Rat::from_int(BIG_M_SCALE) * (&ub - rhs);
    if !m.is_positive() {
        return Ok(None);
    }
    let (g, pol) = guard;
    let mut t = terms.to_vec();
    Ok(Some(if pol {
        // sum + M g <= rhs + M
        t.push((g, m.clone()));
        LinRel::new(t, RelOp::Le, rhs + &m)
    } else {
        // sum - M g <= rhs
        t.push((g, -m));
        LinRel::new(t, RelOp::Le, rhs.clone())
    }))
}

/// Big-M rows for an indicator; empty when the relation always holds.
pub fn big_m_rows(ind: &Indicator, vars: &VarTable) -> Result<Vec<LinRel>, EncodeError> {
    let r = &ind.rel;
    let neg: Vec<(VarId, Rat)> = r.terms.iter().map(|(v, c)| (*v, -c)).collect();
    let mut out = Vec::new();
    if matches!(r.op, RelOp::Le | RelOp::Eq) {
        out.extend(big_m_le(&r.terms, &r.rhs, ind.guard, vars)?);
    }
    if matches!(r.op, RelOp::Ge | RelOp::Eq) {
        out.extend(big_m_le(&neg, &-&r.rhs, ind.guard, vars)?);
    }
    Ok(out)
}

/// Clause `l1 ∨ … ∨ ln` as `sum(pos) - sum(neg) >= 1 - #neg`.
pub fn clause_row(lits: &[Lit]) -> LinRel {
    let negs = lits.iter().filter(|(_, p)| !p).count() as i64;
    LinRel::new(
        lits.iter().map(|&(v, p)| (v, if p { Rat::ONE } else { -Rat::ONE })),
        RelOp::Ge,
        Rat::from_int(1 - negs),
    )
}

/// Linearizes a transformed formula.
pub fn to_milp(cnf: &Cnf, vars: &VarTable, mode: MilpMode) -> Result<MilpConstraintSet, EncodeError> {
    let mut set = MilpConstraintSet::default();
    set.rows.extend(cnf.clauses.iter().map(|c| clause_row(c)));
    set.rows.extend(cnf.rows.iter().cloned());
    match mode {
        MilpMode::Indicator => set.indicators = cnf.indicators.clone(),
        MilpMode::BigM => {
            for ind in &cnf.indicators {
                set.rows.extend(big_m_rows(ind, vars)?);
            }
        }
    }
    Ok(set)
}

/// Number of distinct variables mentioned by a constraint set.
pub fn milp_var_count(set: &MilpConstraintSet) -> usize {
    let mut seen: BTreeMap<VarId, ()> = BTreeMap::new();
    for r in &set.rows {
        for (v, _) in &r.terms {
            seen.insert(*v, ());
        }
    }
    for i in &set.indicators {
        seen.insert(i.guard.0, ());
        for (v, _) in &i.rel.terms {
            seen.insert(*v, ());
        }
    }
    seen.len()
}

// ---------------------------------------------------------------------------
// Step encoding

/// A place at some step: a solver variable, or a value fixed by forward
/// reachability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Var(VarId),
    Const(Value),
}

/// Variables and assertions linking step `k - 1` to step `k`.
#[derive(Debug, Clone)]
pub struct StepEncoding {
    pub k: usize,
    pub places: Vec<Slot>,
    /// Firing variables of step `k - 1`; `None` for transitions that forward
    /// reachability proved disabled.
    pub transitions: Vec<Option<VarId>>,
    pub assertions: Vec<Expr>,
}

/// Step-independent inputs of the encoding.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub net: &'a PetriNet,
    pub fwd: &'a ReachableSets,
    pub conflict_groups: &'a [MutexGroup],
    pub invariants: &'a [MutexGroup],
}

/// Step 0: the initial marking.
pub fn initial_slots(net: &PetriNet) -> Vec<Slot> {
    net.init_marking.iter().cloned().map(Slot::Const).collect()
}

/// Lower and upper change of `Σ coeff·place` when `t` fires.
fn change_range(net: &PetriNet, t: usize, terms: &[(usize, Rat)]) -> (Rat, Rat) {
    let mut lo = Rat::ZERO;
    let mut hi = Rat::ZERO;
    for (p, c) in terms {
        if net.is_bool(*p) {
            match net.bool_post(t, *p) {
                Some(true) if c.is_positive() => hi += c,
                Some(true) => lo += c,
                Some(false) if c.is_positive() => lo -= c,
                Some(false) => hi -= c,
                None => {}
            }
        } else {
            let d = c * &net.delta(t, *p);
            lo += &d;
            hi += &d;
        }
    }
    (lo, hi)
}

/// Whether some change in `[lo, hi]` can falsify `lhs op rhs` that held.
fn can_falsify(op: RelOp, lo: &Rat, hi: &Rat) -> bool {
    match op {
        RelOp::Le => hi.is_positive(),
        RelOp::Ge => lo.is_negative(),
        RelOp::Eq => hi.is_positive() || lo.is_negative(),
    }
}

fn cond_terms(c: &Condition) -> (Vec<(usize, Rat)>, RelOp) {
    match c {
        Condition::Lit { var, value: true } => (vec![(*var, Rat::ONE)], RelOp::Ge),
        Condition::Lit { var, value: false } => (vec![(*var, Rat::ONE)], RelOp::Le),
        Condition::Rel { terms, op, .. } => (terms.clone(), *op),
    }
}

/// Pairs of transitions that may not share a step. `t` and `u` conflict when
/// `t` can falsify a precondition of `u`, or when their changes to a global
/// constraint or a bounded numeric place can point in opposite directions
/// (so some serial order passes outside the region both endpoints lie in).
pub fn transition_conflicts(net: &PetriNet) -> Vec<(usize, usize)> {
    let n = net.transition_count();
    let mut regions: Vec<(Vec<(usize, Rat)>, RelOp)> = net.constraints.iter().map(cond_terms).collect();
    for p in 0..net.place_count() {
        let b = &net.bounds[p];
        if !net.is_bool(p) && (b.lower.is_some() || b.upper.is_some()) {
            regions.push((vec![(p, Rat::ONE)], RelOp::Eq));
        }
    }
    let ranges: Vec<Vec<(Rat, Rat)>> = (0..n)
        .map(|t| regions.iter().map(|(terms, _)| change_range(net, t, terms)).collect())
        .collect();
    let mut out = Vec::new();
    for t in 0..n {
        for u in t + 1..n {
            let falsifies = |a: usize, b: usize| {
                net.pre[b].iter().any(|c| {
                    let (terms, op) = cond_terms(c);
                    let (lo, hi) = change_range(net, a, &terms);
                    can_falsify(op, &lo, &hi)
                })
            };
            let opposed = regions.iter().enumerate().any(|(i, (_, op))| {
                let (tl, th) = &ranges[t][i];
                let (ul, uh) = &ranges[u][i];
                let moves = |l: &Rat, h: &Rat| !l.is_zero() || !h.is_zero();
                if !moves(tl, th) || !moves(ul, uh) {
                    return false;
                }
                let up = |l: &Rat| !l.is_negative();
                let down = |h: &Rat| !h.is_positive();
                // bounded places are registered as `Eq` regions but only need
                // consistent direction
                match op {
                    RelOp::Eq if i < net.constraints.len() => true,
                    _ => !((up(tl) && up(ul)) || (down(th) && down(uh))),
                }
            });
            if falsifies(t, u) || falsifies(u, t) || opposed {
                out.push((t, u));
            }
        }
    }
    out
}

/// Clique cover of the conflict graph; each group admits at most one firing.
pub fn conflict_groups(net: &PetriNet) -> Vec<MutexGroup> {
    build_mutex_groups(&transition_conflicts(net))
}

/// A condition evaluated over the slots of one step.
pub fn condition_at(c: &Condition, slots: &[Slot]) -> Expr {
    match c {
        Condition::Lit { var, value } => lit_at(slots, *var, *value),
        Condition::Rel { terms, op, rhs } => {
            let mut rhs = rhs.clone();
            let mut vs = Vec::new();
            for (p, coeff) in terms {
                match &slots[*p] {
                    Slot::Var(v) => vs.push((*v, coeff.clone())),
                    Slot::Const(x) => rhs -= coeff * &x.to_rat(),
                }
            }
            Expr::linear(vs, *op, rhs)
        }
    }
}

fn lit_at(slots: &[Slot], p: usize, value: bool) -> Expr {
    match &slots[p] {
        Slot::Var(v) => Expr::lit(*v, value),
        Slot::Const(x) => Expr::constant(x.as_bool() == Some(value)),
    }
}

/// `place = value` at one step.
pub fn binding_at(slots: &[Slot], p: usize, value: &Value) -> Expr {
    match value {
        Value::Bool(b) => lit_at(slots, p, *b),
        Value::Num(x) => condition_at(&Condition::rel([(p, Rat::ONE)], RelOp::Eq, x.clone()), slots),
    }
}

/// Invariant group over the slots of one step.
pub fn group_at(g: &MutexGroup, slots: &[Slot]) -> Expr {
    g.to_expr(
        |p| match &slots[p] {
            Slot::Var(v) => Some(*v),
            Slot::Const(_) => None,
        },
        |p| match &slots[p] {
            Slot::Const(x) => x.as_bool(),
            Slot::Var(_) => None,
        },
    )
}

/// Declares step `k` and builds the transition function from `prev` (the
/// slots of step `k - 1`): preconditions, numeric token flow, boolean flow
/// with frame axioms, conflict exclusion, invariants and global constraints.
pub fn encode_step(ctx: StepContext<'_>, prev: &[Slot], k: usize, solver: &mut Solver) -> Result<StepEncoding, SolveError> {
    let net = ctx.net;
    let bound = ctx.fwd.at(k);
    let off = ctx.fwd.disabled_at(k - 1);
    let mut places = Vec::with_capacity(net.place_count());
    for (i, pl) in net.places.iter().enumerate() {
        places.push(match bound.get(&i) {
            Some(v) => Slot::Const(v.clone()),
            None => {
                let b = &net.bounds[i];
                Slot::Var(solver.declare(&format!("p.{}@{k}", pl.name), pl.kind, b.lower.clone(), b.upper.clone())?)
            }
        });
    }
    let mut transitions = Vec::with_capacity(net.transition_count());
    for (t, name) in net.transitions.iter().enumerate() {
        transitions.push(if off.contains(&t) {
            None
        } else {
            Some(solver.declare(&format!("t.{name}@{}", k - 1), VarKind::Boolean, None, None)?)
        });
    }
    let fired: Vec<(usize, VarId)> = transitions.iter().enumerate().filter_map(|(t, v)| v.map(|v| (t, v))).collect();
    let mut out = Vec::new();

    for &(t, v) in &fired {
        let pre = Expr::and(net.pre[t].iter().map(|c| condition_at(c, prev)));
        out.push(Expr::implies(Expr::var(v), pre));
    }

    for p in 0..net.place_count() {
        if net.is_bool(p) {
            let mut setters = [Vec::new(), Vec::new()];
            for &(t, v) in &fired {
                if let Some(post) = net.bool_post(t, p) {
                    out.push(Expr::implies(Expr::var(v), lit_at(&places, p, post)));
                    setters[post as usize].push(Expr::var(v));
                }
            }
            // a value changes only when a matching setter fires
            for post in [false, true] {
                let mut clause = vec![lit_at(prev, p, post), lit_at(&places, p, !post)];
                clause.extend(setters[post as usize].iter().cloned());
                out.push(Expr::or(clause));
            }
        } else {
            // p@k - p@(k-1) - Σ δ_t τ_t = 0
            let mut terms = Vec::new();
            let mut rhs = Rat::ZERO;
            for (slot, sign) in [(&places[p], Rat::ONE), (&prev[p], -Rat::ONE)] {
                match slot {
                    Slot::Var(v) => terms.push((*v, sign)),
                    Slot::Const(x) => rhs -= &sign * &x.to_rat(),
                }
            }
            for &(t, v) in &fired {
                let d = net.delta(t, p);
                if !d.is_zero() {
                    terms.push((v, -d));
                }
            }
            out.push(Expr::linear(terms, RelOp::Eq, rhs));
        }
    }

    for g in ctx.conflict_groups {
        let vs: Vec<VarId> = g.members.iter().filter_map(|&t| transitions[t]).collect();
        out.push(Expr::at_most(vs, 1));
    }
    for g in ctx.invariants {
        out.push(group_at(g, &places));
    }
    for c in &net.constraints {
        out.push(condition_at(c, &places));
    }
    out.retain(|e| e.as_const() != Some(true));
    Ok(StepEncoding {
        k,
        places,
        transitions,
        assertions: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bools(n: usize) -> VarTable {
        let mut t = VarTable::new();
        for i in 0..n {
            t.declare(&format!("b{i}"), VarKind::Boolean, None, None).unwrap();
        }
        t
    }

    #[test]
    fn top_level_conjunction_has_no_aux() {
        let mut t = bools(2);
        let cnf = pg_transform(&Expr::and([Expr::var(0), Expr::var(1)]), &mut t);
        assert_eq!(cnf.clauses, vec![vec![(0, true)], vec![(1, true)]]);
        assert!(cnf.aux.is_empty());
    }

    #[test]
    fn single_complex_disjunct_is_distributed() {
        let mut t = bools(3);
        let e = Expr::or([Expr::var(0), Expr::and([Expr::var(1), Expr::var(2)])]);
        let cnf = pg_transform(&e, &mut t);
        assert_eq!(cnf.clauses, vec![vec![(0, true), (1, true)], vec![(0, true), (2, true)]]);
        assert!(cnf.aux.is_empty());
    }

    #[test]
    fn relation_in_disjunction_uses_literal_guard() {
        let mut t = bools(1);
        let x = t.declare("x", VarKind::Integer, Some(Rat::ZERO), Some(Rat::from_int(10))).unwrap();
        let e = Expr::or([Expr::linear([(x, Rat::ONE)], RelOp::Le, Rat::from_int(3)), Expr::var(0)]);
        let cnf = pg_transform(&e, &mut t);
        assert!(cnf.clauses.is_empty());
        assert_eq!(cnf.indicators.len(), 1);
        assert_eq!(cnf.indicators[0].guard, (0, false));

        // Two relations need auxiliaries.
        let e = Expr::or([
            Expr::linear([(x, Rat::ONE)], RelOp::Le, Rat::from_int(3)),
            Expr::linear([(x, Rat::ONE)], RelOp::Ge, Rat::from_int(7)),
        ]);
        let cnf = pg_transform(&e, &mut t);
        assert_eq!(cnf.aux.len(), 2);
        assert_eq!(cnf.indicators.len(), 2);
        assert_eq!(cnf.clauses.len(), 1);
    }

    #[test]
    fn big_m_value() {
        let mut t = bools(1);
        let x = t.declare("x", VarKind::Integer, Some(Rat::ZERO), Some(Rat::from_int(10))).unwrap();
        let ind = Indicator {
            guard: (0, true),
            rel: LinRel::new([(x, Rat::ONE)], RelOp::Le, Rat::from_int(3)),
        };
        let rows = big_m_rows(&ind, &t).unwrap();
        assert_eq!(rows, vec![LinRel::new([(x, Rat::ONE), (0, Rat::from_int(14))], RelOp::Le, Rat::from_int(17))]);
    }

    #[test]
    fn big_m_needs_bounds() {
        let mut t = bools(1);
        let x = t.declare("x", VarKind::Real, None, None).unwrap();
        let ind = Indicator {
            guard: (0, true),
            rel: LinRel::new([(x, Rat::ONE)], RelOp::Le, Rat::ONE),
        };
        assert_eq!(big_m_rows(&ind, &t), Err(EncodeError::Unbounded("x".into())));
    }

    #[test]
    fn clause_rows() {
        assert_eq!(clause_row(&[(0, true), (1, false)]), LinRel::new([(0, Rat::ONE), (1, -Rat::ONE)], RelOp::Ge, Rat::ZERO));
    }
}
