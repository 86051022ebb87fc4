//! Incremental MILP backend: persistent assertions, per-check assumptions,
//! and depth-first branch and bound over the exact simplex.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::encode::{big_m_rows, pg_transform, to_milp, EncodeError, Indicator, Lit, MilpMode};
use crate::expr::{nnf, smt_declarations, smt_symbol, to_smt, Expr, ExprError, LinRel, Node, VarId, VarTable};
use crate::lp::{to_cplex_lp, LinProgram, LpError, LpRow, Simplex};
use crate::problem::{RelOp, Value, VarKind};
use crate::rational::Rat;

pub const NODE_LIMIT: u64 = 1_000_000;

/// Cap on bound tightenings per node; propagation stops early beyond it.
const PROPAGATION_BUDGET: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("branch-and-bound node limit of {0} reached")]
    NodeLimit(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverOptions {
    pub mode: MilpMode,
    pub node_limit: u64,
    pub warm_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mode: MilpMode::Indicator,
            node_limit: NODE_LIMIT,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SolveStats {
    pub checks: u64,
    pub nodes: u64,
    pub pivots: u64,
    pub warm_hits: u64,
}

/// Assignment to every declared variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Model {
    pub values: Vec<Value>,
}

impl Model {
    pub fn get(&self, v: VarId) -> &Value {
        &self.values[v]
    }

    pub fn is_true(&self, v: VarId) -> bool {
        self.values[v] == Value::Bool(true)
    }

    pub fn satisfies(&self, e: &Expr) -> bool {
        e.eval(&|v| self.values[v].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckResult {
    Sat(Model),
    Unsat,
}

impl CheckResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, CheckResult::Sat(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Smt2,
    Lp,
}

/// A linear constraint `lo <= sum <= hi` whose bounds live on its slack
/// column; indicator constraints get bounds only while their guard holds.
#[derive(Debug, Clone)]
struct Cons {
    terms: Vec<(VarId, Rat)>,
    slack: usize,
    guard: Option<(Lit, RelOp, Rat)>,
}

type Bound = Option<Rat>;

#[derive(Debug, Clone)]
pub struct Solver {
    vars: VarTable,
    opts: SolverOptions,
    lp: Simplex,
    /// Simplex column per variable.
    col: Vec<usize>,
    cons: Vec<Cons>,
    /// Constraints whose terms mention each variable.
    occ: Vec<Vec<usize>>,
    /// Indicators guarded by each variable.
    guards: Vec<Vec<usize>>,
    assertions: Vec<Expr>,
    unsat: bool,
    assume_rows: HashMap<Vec<(VarId, Rat)>, usize>,
    activations: HashMap<Expr, VarId>,
    incumbent: Option<Vec<Value>>,
    trail: Vec<(usize, Bound, Bound)>,
    queue: Vec<usize>,
    queued: Vec<bool>,
    stats: SolveStats,
}

impl Default for Solver {
    fn default() -> Self {
        Solver::new(SolverOptions::default())
    }
}

fn bound_for(op: RelOp, rhs: &Rat) -> (Bound, Bound) {
    match op {
        RelOp::Le => (None, Some(rhs.clone())),
        RelOp::Ge => (Some(rhs.clone()), None),
        RelOp::Eq => (Some(rhs.clone()), Some(rhs.clone())),
    }
}

impl Solver {
    pub fn new(opts: SolverOptions) -> Self {
        Solver {
            vars: VarTable::new(),
            opts,
            lp: Simplex::new(),
            col: Vec::new(),
            cons: Vec::new(),
            occ: Vec::new(),
            guards: Vec::new(),
            assertions: Vec::new(),
            unsat: false,
            assume_rows: HashMap::new(),
            activations: HashMap::new(),
            incumbent: None,
            trail: Vec::new(),
            queue: Vec::new(),
            queued: Vec::new(),
            stats: SolveStats::default(),
        }
    }

    pub fn vars(&self) -> &VarTable {
        &self.vars
    }

    pub fn options(&self) -> SolverOptions {
        self.opts
    }

    pub fn stats(&self) -> &SolveStats {
        &self.stats
    }

    pub fn assertions(&self) -> &[Expr] {
        &self.assertions
    }

    pub fn set_incumbent(&mut self, model: Option<Vec<Value>>) {
        self.incumbent = model;
    }

    pub fn incumbent(&self) -> Option<&[Value]> {
        self.incumbent.as_deref()
    }

    fn sync_columns(&mut self) {
        while self.col.len() < self.vars.len() {
            let info = self.vars.get(self.col.len());
            let c = self.lp.add_var(info.lo(), info.hi());
            self.col.push(c);
            self.occ.push(Vec::new());
            self.guards.push(Vec::new());
        }
    }

    pub fn declare(&mut self, name: &str, kind: VarKind, lower: Option<Rat>, upper: Option<Rat>) -> Result<VarId, SolveError> {
        let v = self.vars.declare(name, kind, lower, upper)?;
        self.sync_columns();
        Ok(v)
    }

    pub fn lookup(&self, name: &str) -> Option<VarId> {
        self.vars.lookup(name)
    }

    fn check_declared(&self, e: &Expr) -> Result<(), SolveError> {
        match e.vars().into_iter().find(|v| *v >= self.vars.len()) {
            Some(v) => Err(ExprError::Undeclared(v).into()),
            None => Ok(()),
        }
    }

    fn is_integral_col(&self, v: VarId) -> bool {
        self.vars.is_integral(v)
    }

    /// Tightens the persistent box of `v` (outside any search).
    fn tighten_base(&mut self, v: VarId, lo: Bound, hi: Bound) {
        let c = self.col[v];
        let mut nlo = self.lp.lower(c).cloned();
        let mut nhi = self.lp.upper(c).cloned();
        if let Some(mut l) = lo {
            if self.is_integral_col(v) {
                l = l.ceil();
            }
            if nlo.as_ref().is_none_or(|x| l > *x) {
                nlo = Some(l);
            }
        }
        if let Some(mut h) = hi {
            if self.is_integral_col(v) {
                h = h.floor();
            }
            if nhi.as_ref().is_none_or(|x| h < *x) {
                nhi = Some(h);
            }
        }
        if let (Some(l), Some(h)) = (&nlo, &nhi) {
            if l > h {
                self.unsat = true;
            }
        }
        self.lp.set_bounds(c, nlo, nhi);
    }

    /// `x op rhs/coeff` as a bound pair on a single variable.
    fn single_bound(c: &Rat, op: RelOp, rhs: &Rat) -> (Bound, Bound) {
        let b = rhs / c;
        let op = if c.is_negative() { op.flipped() } else { op };
        bound_for(op, &b)
    }

    fn add_cons(&mut self, terms: Vec<(VarId, Rat)>, guard: Option<(Lit, RelOp, Rat)>) -> usize {
        let lp_terms: Vec<(usize, Rat)> = terms.iter().map(|(v, c)| (self.col[*v], c.clone())).collect();
        let slack = self.lp.add_row(&lp_terms);
        let id = self.cons.len();
        for (v, _) in &terms {
            self.occ[*v].push(id);
        }
        if let Some(((g, _), _, _)) = &guard {
            self.guards[*g].push(id);
        }
        self.cons.push(Cons { terms, slack, guard });
        self.queued.push(false);
        id
    }

    fn add_row(&mut self, r: LinRel) {
        match r.terms.len() {
            0 => {
                if !r.op.holds(&Rat::ZERO, &r.rhs) {
                    self.unsat = true;
                }
            }
            1 => {
                let (v, c) = r.terms[0].clone();
                let (lo, hi) = Self::single_bound(&c, r.op, &r.rhs);
                self.tighten_base(v, lo, hi);
            }
            _ => {
                let (lo, hi) = bound_for(r.op, &r.rhs);
                let id = self.add_cons(r.terms, None);
                let slack = self.cons[id].slack;
                self.lp.set_bounds(slack, lo, hi);
            }
        }
    }

    fn add_indicator(&mut self, ind: Indicator) {
        let Indicator { guard, rel } = ind;
        if rel.terms.is_empty() {
            if !rel.op.holds(&Rat::ZERO, &rel.rhs) {
                let (g, pol) = guard;
                let off = Rat::from_int(i64::from(!pol));
                self.tighten_base(g, Some(off.clone()), Some(off));
            }
            return;
        }
        self.add_cons(rel.terms, Some((guard, rel.op, rel.rhs)));
    }

    /// Adds a persistent assertion.
    pub fn assert(&mut self, e: &Expr) -> Result<(), SolveError> {
        self.check_declared(e)?;
        let cnf = pg_transform(e, &mut self.vars);
        self.sync_columns();
        let set = to_milp(&cnf, &self.vars, self.opts.mode)?;
        for r in set.rows {
            self.add_row(r);
        }
        for ind in set.indicators {
            self.add_indicator(ind);
        }
        self.assertions.push(e.clone());
        Ok(())
    }

    // -- search state -------------------------------------------------------

    fn lo(&self, v: VarId) -> Option<&Rat> {
        self.lp.lower(self.col[v])
    }

    fn hi(&self, v: VarId) -> Option<&Rat> {
        self.lp.upper(self.col[v])
    }

    fn set_col(&mut self, c: usize, lo: Bound, hi: Bound) {
        let old_lo = self.lp.lower(c).cloned();
        let old_hi = self.lp.upper(c).cloned();
        self.trail.push((c, old_lo, old_hi));
        self.lp.set_bounds(c, lo, hi);
    }

    fn enqueue(&mut self, id: usize) {
        if !self.queued[id] {
            self.queued[id] = true;
            self.queue.push(id);
        }
    }

    fn touch_var(&mut self, v: VarId) {
        for i in 0..self.occ[v].len() {
            let id = self.occ[v][i];
            self.enqueue(id);
        }
        for i in 0..self.guards[v].len() {
            let id = self.guards[v][i];
            self.enqueue(id);
        }
    }

    /// Intersects the box of `v`; `Err` on an empty box.
    fn tighten(&mut self, v: VarId, lo: Bound, hi: Bound) -> Result<bool, ()> {
        let integral = self.is_integral_col(v);
        let mut nlo = self.lo(v).cloned();
        let mut nhi = self.hi(v).cloned();
        let mut changed = false;
        if let Some(mut l) = lo {
            if integral {
                l = l.ceil();
            }
            if nlo.as_ref().is_none_or(|x| l > *x) {
                nlo = Some(l);
                changed = true;
            }
        }
        if let Some(mut h) = hi {
            if integral {
                h = h.floor();
            }
            if nhi.as_ref().is_none_or(|x| h < *x) {
                nhi = Some(h);
                changed = true;
            }
        }
        if !changed {
            return Ok(false);
        }
        let empty = matches!((&nlo, &nhi), (Some(l), Some(h)) if l > h);
        let c = self.col[v];
        self.set_col(c, nlo, nhi);
        if empty {
            return Err(());
        }
        self.touch_var(v);
        Ok(true)
    }

    fn activity(&self, terms: &[(VarId, Rat)]) -> (Bound, Bound) {
        let mut min = Some(Rat::ZERO);
        let mut max = Some(Rat::ZERO);
        for (v, c) in terms {
            let (a, b) = if c.is_positive() { (self.lo(*v), self.hi(*v)) } else { (self.hi(*v), self.lo(*v)) };
            min = match (min, a) {
                (Some(m), Some(x)) => Some(m + c * x),
                _ => None,
            };
            max = match (max, b) {
                (Some(m), Some(x)) => Some(m + c * x),
                _ => None,
            };
        }
        (min, max)
    }

    fn guard_state(&self, (g, pol): Lit) -> Option<bool> {
        let target = Rat::from_int(i64::from(pol));
        let (lo, hi) = (self.lo(g)?, self.hi(g)?);
        if lo == hi {
            Some(*lo == target)
        } else {
            None
        }
    }

    fn propagate_cons(&mut self, id: usize, budget: &mut usize) -> Result<(), ()> {
        let c = self.cons[id].clone();
        if let Some((guard, op, rhs)) = &c.guard {
            match self.guard_state(*guard) {
                Some(false) => return Ok(()),
                None => {
                    let (min, max) = self.activity(&c.terms);
                    let impossible = match op {
                        RelOp::Le => min.is_some_and(|m| m > *rhs),
                        RelOp::Ge => max.is_some_and(|m| m < *rhs),
                        RelOp::Eq => min.is_some_and(|m| m > *rhs) || max.is_some_and(|m| m < *rhs),
                    };
                    if impossible {
                        let off = Rat::from_int(i64::from(!guard.1));
                        self.tighten(guard.0, Some(off.clone()), Some(off))?;
                    }
                    return Ok(());
                }
                Some(true) => {
                    if self.lp.lower(c.slack).is_none() && self.lp.upper(c.slack).is_none() {
                        let (lo, hi) = bound_for(*op, rhs);
                        self.set_col(c.slack, lo, hi);
                    }
                }
            }
        }
        let lo = self.lp.lower(c.slack).cloned();
        let hi = self.lp.upper(c.slack).cloned();
        if lo.is_none() && hi.is_none() {
            return Ok(());
        }
        let (min, max) = self.activity(&c.terms);
        if matches!((&min, &hi), (Some(m), Some(h)) if m > h) || matches!((&max, &lo), (Some(m), Some(l)) if m < l) {
            return Err(());
        }
        for (i, (v, a)) in c.terms.iter().enumerate() {
            if !self.is_integral_col(*v) || *budget == 0 {
                continue;
            }
            // activity of the other terms, recomputed against current boxes
            let rest: Vec<(VarId, Rat)> = c.terms.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| t.clone()).collect();
            let (rmin, rmax) = self.activity(&rest);
            let mut new_lo = None;
            let mut new_hi = None;
            if let (Some(h), Some(rm)) = (&hi, &rmin) {
                // a x <= h - rmin
                let b = (h - rm) / a;
                if a.is_positive() {
                    new_hi = Some(b);
                } else {
                    new_lo = Some(b);
                }
            }
            if let (Some(l), Some(rm)) = (&lo, &rmax) {
                // a x >= l - rmax
                let b = (l - rm) / a;
                if a.is_positive() {
                    new_lo = new_lo.or(Some(b));
                } else {
                    new_hi = new_hi.or(Some(b));
                }
            }
            if self.tighten(*v, new_lo, new_hi)? {
                *budget -= 1;
            }
        }
        Ok(())
    }

    fn propagate(&mut self) -> Result<(), ()> {
        let mut budget = PROPAGATION_BUDGET;
        let result = loop {
            let Some(id) = self.queue.pop() else { break Ok(()) };
            self.queued[id] = false;
            if let Err(()) = self.propagate_cons(id, &mut budget) {
                break Err(());
            }
        };
        for id in self.queue.drain(..) {
            self.queued[id] = false;
        }
        result
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let (c, lo, hi) = self.trail.pop().expect("nonempty");
            self.lp.set_bounds(c, lo, hi);
        }
    }

    fn lp_value(&self, v: VarId) -> &Rat {
        self.lp.value(self.col[v])
    }

    fn model_from_lp(&self) -> Model {
        let values = (0..self.vars.len())
            .map(|v| {
                let x = self.lp_value(v).clone();
                match self.vars.get(v).kind {
                    VarKind::Boolean => Value::Bool(!x.is_zero()),
                    _ => Value::Num(x),
                }
            })
            .collect();
        Model { values }
    }

    fn rel_holds_at(&self, terms: &[(VarId, Rat)], op: RelOp, rhs: &Rat, val: &impl Fn(VarId) -> Rat) -> bool {
        let lhs: Rat = terms.iter().map(|(v, c)| c * val(*v)).sum();
        op.holds(&lhs, rhs)
    }

    /// Next branching decision: `(var, down child hi, up child lo)`.
    fn choose_branch(&self) -> Option<(VarId, Rat, Rat)> {
        let half = Rat::new(1, 2);
        let mut best: Option<(Rat, VarId)> = None;
        for v in 0..self.vars.len() {
            if !self.is_integral_col(v) {
                continue;
            }
            let x = self.lp_value(v);
            if x.is_integer() {
                continue;
            }
            let dist = (x.fract() - &half).abs();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, v));
            }
        }
        if let Some((_, v)) = best {
            let x = self.lp_value(v);
            return Some((v, x.floor(), x.ceil()));
        }
        let val = |v: VarId| self.lp_value(v).clone();
        for c in &self.cons {
            let Some(((g, pol), op, rhs)) = &c.guard else { continue };
            if self.guard_state((*g, *pol)).is_some() {
                continue;
            }
            let active = self.lp_value(*g) == &Rat::from_int(i64::from(*pol));
            if active && !self.rel_holds_at(&c.terms, *op, rhs, &val) {
                return Some((*g, Rat::ZERO, Rat::ONE));
            }
        }
        None
    }

    /// Child order: towards the incumbent, else the guard-off side for
    /// indicator branches, else the nearer rounding.
    fn up_first(&self, v: VarId, down: &Rat, up: &Rat) -> bool {
        if let Some(inc) = &self.incumbent {
            if let Some(x) = inc.get(v) {
                let x = x.to_rat();
                if x >= *up {
                    return true;
                }
                if x <= *down {
                    return false;
                }
            }
        }
        let x = self.lp_value(v);
        if x.is_integer() {
            // indicator branch: switch the guard off first
            let pol = self
                .guards[v]
                .iter()
                .find_map(|&id| self.cons[id].guard.as_ref().map(|g| g.0 .1))
                .unwrap_or(true);
            return !pol;
        }
        x.fract() >= Rat::new(1, 2)
    }

    fn search(&mut self) -> Result<Option<Model>, SolveError> {
        struct Frame {
            mark: usize,
            alt: (VarId, Bound, Bound),
        }
        let mut stack: Vec<Frame> = Vec::new();
        let mut change: Option<(VarId, Bound, Bound)> = None;
        let mut nodes = 0u64;
        
        'outer: loop {
            nodes += 1;
            self.stats.nodes += 1;
            if nodes > self.opts.node_limit {
                break Err(SolveError::NodeLimit(self.opts.node_limit));
            }
            let mut ok = match change.take() {
                Some((v, lo, hi)) => self.tighten(v, lo, hi).is_ok(),
                None => true,
            };
            ok = ok && self.propagate().is_ok();
            if ok {
                let before = self.lp.pivots();
                let feasible = self.lp.check();
                self.stats.pivots += self.lp.pivots() - before;
                ok = match feasible {
                    Ok(b) => b,
                    Err(e) => break Err(e.into()),
                };
            }
            if ok {
                match self.choose_branch() {
                    None => break Ok(Some(self.model_from_lp())),
                    Some((v, down, up)) => {
                        let down_child = (v, None, Some(down.clone()));
                        let up_child = (v, Some(up.clone()), None);
                        let (first, second) = if self.up_first(v, &down, &up) {
                            (up_child, down_child)
                        } else {
                            (down_child, up_child)
                        };
                        stack.push(Frame {
                            mark: self.trail.len(),
                            alt: second,
                        });
                        change = Some(first);
                        continue;
                    }
                }
            }
            match stack.pop() {
                None => break 'outer Ok(None),
                Some(f) => {
                    self.undo_to(f.mark);
                    change = Some(f.alt);
                }
            }
        }
    }

    // -- assumptions ----------------------------------------------------------

    fn assumption_row(&mut self, terms: Vec<(VarId, Rat)>) -> usize {
        if let Some(&id) = self.assume_rows.get(&terms) {
            return id;
        }
        let id = self.add_cons(terms.clone(), None);
        self.assume_rows.insert(terms, id);
        id
    }

    fn activation(&mut self, e: &Expr) -> Result<VarId, SolveError> {
        if let Some(&a) = self.activations.get(e) {
            return Ok(a);
        }
        let mut n = self.vars.len();
        let a = loop {
            if let Ok(v) = self.vars.declare(&format!("_act{n}"), VarKind::Boolean, None, None) {
                break v;
            }
            n += 1;
        };
        self.sync_columns();
        self.assert(&Expr::implies(Expr::var(a), e.clone()))?;
        self.activations.insert(e.clone(), a);
        Ok(a)
    }

    /// Applies assumptions as trailed bound changes; `Ok(false)` when one
    /// is trivially false.
    fn apply_assumptions(&mut self, assumptions: &[Expr]) -> Result<bool, SolveError> {
        let mut parts = Vec::new();
        for a in assumptions {
            self.check_declared(a)?;
            let n = nnf(a, &self.vars);
            match n.node() {
                Node::And(cs) => parts.extend(cs.iter().cloned()),
                _ => parts.push(n),
            }
        }
        for p in parts {
            if let Some((v, pol)) = p.as_lit() {
                let x = Rat::from_int(i64::from(pol));
                if self.tighten(v, Some(x.clone()), Some(x)).is_err() {
                    return Ok(false);
                }
                continue;
            }
            let rel = match p.node() {
                Node::Const(true) => continue,
                Node::Const(false) => return Ok(false),
                Node::Rel(r) => Some(r.clone()),
                Node::AtMost(vs, k) => Some(LinRel::new(vs.iter().map(|v| (*v, Rat::ONE)), RelOp::Le, Rat::from_int(*k as i64))),
                Node::Exactly(vs, k) => Some(LinRel::new(vs.iter().map(|v| (*v, Rat::ONE)), RelOp::Eq, Rat::from_int(*k as i64))),
                _ => None,
            };
            match rel {
                Some(r) if r.terms.len() == 1 => {
                    let (v, c) = &r.terms[0];
                    let (lo, hi) = Self::single_bound(c, r.op, &r.rhs);
                    if self.tighten(*v, lo, hi).is_err() {
                        return Ok(false);
                    }
                }
                Some(r) => {
                    let id = self.assumption_row(r.terms.clone());
                    let (lo, hi) = bound_for(r.op, &r.rhs);
                    let slack = self.cons[id].slack;
                    let lo = match (lo, self.lp.lower(slack)) {
                        (Some(a), Some(b)) => Some(a.max(b.clone())),
                        (a, b) => a.or(b.cloned()),
                    };
                    let hi = match (hi, self.lp.upper(slack)) {
                        (Some(a), Some(b)) => Some(a.min(b.clone())),
                        (a, b) => a.or(b.cloned()),
                    };
                    if matches!((&lo, &hi), (Some(l), Some(h)) if l > h) {
                        return Ok(false);
                    }
                    self.set_col(slack, lo, hi);
                    self.enqueue(id);
                }
                None => {
                    let a = self.activation(&p)?;
                    if self.tighten(a, Some(Rat::ONE), Some(Rat::ONE)).is_err() {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// Whether `values` satisfies every constraint under the current boxes.
    fn satisfied_by(&self, values: &[Value]) -> bool {
        if values.len() != self.vars.len() {
            return false;
        }
        let val = |v: VarId| values[v].to_rat();
        for v in 0..self.vars.len() {
            let x = val(v);
            if self.lo(v).is_some_and(|l| x < *l) || self.hi(v).is_some_and(|h| x > *h) {
                return false;
            }
            if self.is_integral_col(v) && !x.is_integer() {
                return false;
            }
        }
        self.cons.iter().all(|c| {
            let lhs: Rat = c.terms.iter().map(|(v, a)| a * val(*v)).sum();
            if let Some(((g, pol), op, rhs)) = &c.guard {
                if (val(*g) == Rat::ONE) == *pol && !op.holds(&lhs, rhs) {
                    return false;
                }
            }
            self.lp.lower(c.slack).is_none_or(|l| lhs >= *l) && self.lp.upper(c.slack).is_none_or(|h| lhs <= *h)
        })
    }

    /// Decides persistent assertions together with `assumptions`.
    pub fn check_assuming(&mut self, assumptions: &[Expr]) -> Result<CheckResult, SolveError> {
        self.stats.checks += 1;
        if self.unsat {
            return Ok(CheckResult::Unsat);
        }
        let root = self.trail.len();
        for id in 0..self.cons.len() {
            self.enqueue(id);
        }
        let result = (|| {
            if !self.apply_assumptions(assumptions)? {
                return Ok(None);
            }
            if self.opts.warm_start {
                if let Some(inc) = &self.incumbent {
                    if self.satisfied_by(inc) {
                        self.stats.warm_hits += 1;
                        return Ok(Some(Model { values: inc.clone() }));
                    }
                }
            }
            self.search()
        })();
        self.undo_to(root);
        self.queue.clear();
        self.queued.iter_mut().for_each(|q| *q = false);
        match result? {
            Some(m) => {
                if self.opts.warm_start {
                    self.incumbent = Some(m.values.clone());
                }
                Ok(CheckResult::Sat(m))
            }
            None => Ok(CheckResult::Unsat),
        }
    }

    pub fn check(&mut self) -> Result<CheckResult, SolveError> {
        self.check_assuming(&[])
    }

    /// Smallest number of true literals among `lits`, with a witness, found
    /// by increasing a cardinality bound. `None` when unsatisfiable.
    pub fn minimize_true(&mut self, lits: &[Lit], assumptions: &[Expr]) -> Result<Option<(usize, Model)>, SolveError> {
        let negs = lits.iter().filter(|(_, p)| !p).count() as i64;
        let terms: Vec<(VarId, Rat)> = lits.iter().map(|&(v, p)| (v, if p { Rat::ONE } else { -Rat::ONE })).collect();
        for k in 0..=lits.len() {
            let mut a = assumptions.to_vec();
            a.push(Expr::linear(terms.clone(), RelOp::Le, Rat::from_int(k as i64 - negs)));
            if let CheckResult::Sat(m) = self.check_assuming(&a)? {
                return Ok(Some((k, m)));
            }
            if k == 0 && !self.check_assuming(assumptions)?.is_sat() {
                return Ok(None);
            }
        }
        Ok(None)
    }

    /// Model check against the stored assertions and the given assumptions.
    pub fn verify(&self, model: &Model, assumptions: &[Expr]) -> bool {
        self.assertions.iter().chain(assumptions).all(|e| model.satisfies(e))
    }

    // -- export ---------------------------------------------------------------

    /// Textual dump of the persistent store (SMT-LIB 2 or CPLEX LP).
    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Smt2 => self.export_smt2(&[]),
            ExportFormat::Lp => self.export_lp(),
        }
    }

    pub fn export_smt2(&self, assumptions: &[Expr]) -> String {
        let mut s = String::from("(set-logic QF_LIRA)\n");
        s.push_str(&smt_declarations(&self.vars));
        for e in &self.assertions {
            let _ = writeln!(s, "(assert {})", to_smt(e, &self.vars));
        }
        if assumptions.is_empty() {
            s.push_str("(check-sat)\n");
        } else if assumptions.iter().all(|a| a.as_lit().is_some()) {
            let lits: Vec<String> = assumptions
                .iter()
                .map(|a| {
                    let (v, p) = a.as_lit().expect("checked");
                    let n = smt_symbol(&self.vars.get(v).name);
                    if p {
                        n
                    } else {
                        format!("(not {n})")
                    }
                })
                .collect();
            let _ = writeln!(s, "(check-sat-assuming ({}))", lits.join(" "));
        } else {
            s.push_str("(push 1)\n");
            for a in assumptions {
                let _ = writeln!(s, "(assert {})", to_smt(a, &self.vars));
            }
            s.push_str("(check-sat)\n(pop 1)\n");
        }
        s
    }

    /// Retranslates every assertion with Big-M rows where boxes allow and
    /// native indicator constraints otherwise.
    pub fn export_lp(&self) -> String {
        let mut vars = self.base_table();
        let mut rows = Vec::new();
        let mut natives = Vec::new();
        for e in &self.assertions {
            let cnf = pg_transform(e, &mut vars);
            let set = to_milp(&cnf, &vars, MilpMode::Indicator).expect("indicator mode never fails");
            rows.extend(set.rows);
            for ind in set.indicators {
                match big_m_rows(&ind, &vars) {
                    Ok(rs) => rows.extend(rs),
                    Err(_) => natives.push(ind),
                }
            }
        }
        let mut lp = LinProgram::new();
        for (_, info) in vars.iter() {
            lp.add_var(info.name.clone(), info.lo(), info.hi());
        }
        for r in rows {
            lp.add_row(r.terms, r.op, r.rhs);
        }
        let integer: Vec<bool> = vars.iter().map(|(_, i)| i.kind.is_integral()).collect();
        let inds: Vec<(LpRow, usize, bool)> = natives
            .into_iter()
            .map(|i| {
                (
                    LpRow {
                        coeffs: i.rel.terms,
                        op: i.rel.op,
                        rhs: i.rel.rhs,
                    },
                    i.guard.0,
                    i.guard.1,
                )
            })
            .collect();
        to_cplex_lp(&lp, &integer, &inds)
    }

    /// Declared variables without translation auxiliaries.
    fn base_table(&self) -> VarTable {
        let mut t = VarTable::new();
        for (_, info) in self.vars.iter() {
            t.declare(&info.name, info.kind, info.lower.clone(), info.upper.clone())
                .expect("names are unique");
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn int(n: i64) -> Rat {
        Rat::from_int(n)
    }

    #[test]
    fn assumptions_are_retracted() {
        let mut s = Solver::default();
        let x = s.declare("x", VarKind::Integer, Some(int(0)), Some(int(2))).unwrap();
        let ge = |k| Expr::linear([(x, Rat::ONE)], RelOp::Ge, int(k));
        assert_eq!(s.check_assuming(&[ge(3)]).unwrap(), CheckResult::Unsat);
        let CheckResult::Sat(m) = s.check_assuming(&[ge(1)]).unwrap() else { panic!() };
        assert!(m.get(x).to_rat() >= int(1));
        assert!(s.assertions().is_empty());
    }

    #[test]
    fn redeclare_is_an_error() {
        let mut s = Solver::default();
        s.declare("c@1", VarKind::Integer, Some(int(0)), Some(int(2))).unwrap();
        assert!(matches!(s.declare("c@1", VarKind::Integer, None, None), Err(SolveError::Expr(ExprError::Redeclared(_)))));
    }

    #[test]
    fn undeclared_variables_are_rejected() {
        let mut s = Solver::default();
        assert!(matches!(s.assert(&Expr::var(3)), Err(SolveError::Expr(ExprError::Undeclared(3)))));
    }

    #[test]
    fn indicator_and_cardinality() {
        let mut s = Solver::default();
        let b: Vec<VarId> = (0..3).map(|i| s.declare(&format!("b{i}"), VarKind::Boolean, None, None).unwrap()).collect();
        let x = s.declare("x", VarKind::Integer, Some(int(0)), Some(int(10))).unwrap();
        s.assert(&Expr::exactly(b.clone(), 2)).unwrap();
        for (i, &bi) in b.iter().enumerate() {
            s.assert(&Expr::implies(Expr::var(bi), Expr::linear([(x, Rat::ONE)], RelOp::Ge, int(3 * i as i64 + 2)))).unwrap();
        }
        s.assert(&Expr::linear([(x, Rat::ONE)], RelOp::Le, int(6))).unwrap();
        // b2 needs x >= 8, so exactly two of three is impossible below... b0,b1 fit.
        let CheckResult::Sat(m) = s.check().unwrap() else { panic!() };
        assert!(m.is_true(b[0]) && m.is_true(b[1]) && !m.is_true(b[2]));
        assert!(s.verify(&m, &[]));
        assert_eq!(s.check_assuming(&[Expr::var(b[2])]).unwrap(), CheckResult::Unsat);
    }

    #[test]
    fn minimize_true_finds_minimum() {
        let mut s = Solver::default();
        let b: Vec<VarId> = (0..4).map(|i| s.declare(&format!("b{i}"), VarKind::Boolean, None, None).unwrap()).collect();
        s.assert(&Expr::or([Expr::var(b[0]), Expr::var(b[1])])).unwrap();
        s.assert(&Expr::or([Expr::var(b[1]), Expr::var(b[2])])).unwrap();
        s.assert(&Expr::or([Expr::var(b[3]), Expr::var(b[2])])).unwrap();
        let lits: Vec<Lit> = b.iter().map(|&v| (v, true)).collect();
        let (k, m) = s.minimize_true(&lits, &[]).unwrap().unwrap();
        assert_eq!(k, 2);
        assert!(s.verify(&m, &[]));
    }

    #[test]
    fn exports_are_deterministic() {
        let build = || {
            let mut s = Solver::default();
            let p = s.declare("p", VarKind::Boolean, None, None).unwrap();
            let x = s.declare("x", VarKind::Integer, Some(int(0)), Some(int(10))).unwrap();
            s.assert(&Expr::implies(Expr::var(p), Expr::linear([(x, Rat::ONE)], RelOp::Le, int(3)))).unwrap();
            s
        };
        let (a, b) = (build(), build());
        assert_eq!(a.export(ExportFormat::Smt2), b.export(ExportFormat::Smt2));
        assert_eq!(a.export(ExportFormat::Lp), b.export(ExportFormat::Lp));
        assert!(a.export(ExportFormat::Lp).contains("14 p + x <= 17"));
        let empty = Solver::default().export(ExportFormat::Smt2);
        assert_eq!(empty, "(set-logic QF_LIRA)\n(check-sat)\n");
    }

    // Random MILPs: up to 8 binaries and 2 bounded integers. Oracle:
    // enumerate every assignment.
    const NB: usize = 8;

    fn arb_formula() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0..NB).prop_map(Expr::var),
            (0..NB).prop_map(|v| Expr::not(Expr::var(v))),
            (prop::collection::vec((0..NB + 2, -3i64..=3), 1..4), prop_oneof![Just(RelOp::Le), Just(RelOp::Ge), Just(RelOp::Eq)], -4i64..=4)
                .prop_map(|(ts, op, rhs)| Expr::linear(ts.into_iter().map(|(v, c)| (v, int(c))), op, int(rhs))),
            (prop::collection::vec(0..NB, 2..5), 0u32..3).prop_map(|(vs, k)| Expr::at_most(vs, k)),
        ];
        let node = leaf.prop_recursive(3, 16, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::or),
                prop::collection::vec(inner.clone(), 2..3).prop_map(Expr::and),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::implies(a, b)),
                inner.prop_map(Expr::not),
            ]
        });
        prop::collection::vec(node, 1..5).prop_map(Expr::and)
    }

    fn brute_force(e: &Expr) -> bool {
        (0..1u32 << NB).any(|mask| {
            (-2..=3).any(|x| {
                (-2..=3).any(|y| {
                    e.eval(&|v| match v {
                        v if v < NB => Value::Bool(mask >> v & 1 == 1),
                        v if v == NB => Value::Num(int(x)),
                        _ => Value::Num(int(y)),
                    })
                })
            })
        })
    }

    fn solver_for(mode: MilpMode, warm: bool) -> Solver {
        let mut s = Solver::new(SolverOptions {
            mode,
            warm_start: warm,
            ..SolverOptions::default()
        });
        for i in 0..NB {
            s.declare(&format!("b{i}"), VarKind::Boolean, None, None).unwrap();
        }
        s.declare("x", VarKind::Integer, Some(int(-2)), Some(int(3))).unwrap();
        s.declare("y", VarKind::Integer, Some(int(-2)), Some(int(3))).unwrap();
        s
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn verdict_matches_enumeration(e in arb_formula(), extra in arb_formula()) {
            let truth = brute_force(&e);
            for mode in [MilpMode::Indicator, MilpMode::BigM] {
                let mut s = solver_for(mode, true);
                s.assert(&e).unwrap();
                let r = s.check().unwrap();
                prop_assert_eq!(r.is_sat(), truth, "mode {:?}", mode);
                if let CheckResult::Sat(m) = &r {
                    prop_assert!(s.verify(m, &[]));
                }
                // Assumption isolation: same verdict as a fresh solver.
                let with = s.check_assuming(std::slice::from_ref(&extra)).unwrap();
                let mut fresh = solver_for(mode, false);
                fresh.assert(&e).unwrap();
                fresh.assert(&extra).unwrap();
                prop_assert_eq!(with.is_sat(), fresh.check().unwrap().is_sat());
                if let CheckResult::Sat(m) = &with {
                    prop_assert!(s.verify(m, std::slice::from_ref(&extra)));
                }
                prop_assert_eq!(s.check().unwrap().is_sat(), truth);
            }
        }
    }
}
