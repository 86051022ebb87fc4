//! Expression IR for constraints, with partial evaluation (`pval`), an
//! incomplete propagation-based satisfiability test (`psat`), negation
//! normal form and an SMT-LIB 2 printer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde::Serialize;

use crate::problem::{RelOp, Value, VarKind};
use crate::rational::Rat;

pub type VarId = usize;

/// Linear relation `sum(coeff * var) op rhs`. Boolean variables count as 0/1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LinRel {
    /// Sorted by variable, coefficients nonzero.
    pub terms: Vec<(VarId, Rat)>,
    pub op: RelOp,
    pub rhs: Rat,
}

impl LinRel {
    /// Normalizes terms (merge, sort, drop zeros).
    pub fn new(terms: impl IntoIterator<Item = (VarId, Rat)>, op: RelOp, rhs: Rat) -> LinRel {
        let mut merged: BTreeMap<VarId, Rat> = BTreeMap::new();
        for (v, c) in terms {
            *merged.entry(v).or_default() += c;
        }
        LinRel {
            terms: merged.into_iter().filter(|(_, c)| !c.is_zero()).collect(),
            op,
            rhs,
        }
    }

    pub fn lhs_value(&self, value: impl Fn(VarId) -> Rat) -> Rat {
        self.terms.iter().map(|(v, c)| c * value(*v)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Const(bool),
    Var(VarId),
    Not(Expr),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Implies(Expr, Expr),
    Rel(LinRel),
    /// At most `k` of the boolean variables are true.
    AtMost(Vec<VarId>, u32),
    /// Exactly `k` of the boolean variables are true.
    Exactly(Vec<VarId>, u32),
}

/// Immutable, cheaply cloned expression with structural equality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&*self.0, f)
    }
}

impl Expr {
    fn mk(n: Node) -> Expr {
        Expr(Arc::new(n))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn tru() -> Expr {
        Expr::mk(Node::Const(true))
    }

    pub fn fals() -> Expr {
        Expr::mk(Node::Const(false))
    }

    pub fn constant(b: bool) -> Expr {
        Expr::mk(Node::Const(b))
    }

    pub fn var(v: VarId) -> Expr {
        Expr::mk(Node::Var(v))
    }

    /// `v` when `polarity`, else `not v`.
    pub fn lit(v: VarId, polarity: bool) -> Expr {
        if polarity {
            Expr::var(v)
        } else {
            Expr::not(Expr::var(v))
        }
    }

    pub fn as_const(&self) -> Option<bool> {
        match self.node() {
            Node::Const(b) => Some(*b),
            _ => None,
        }
    }

    /// `(var, polarity)` for `v` and `not v`.
    pub fn as_lit(&self) -> Option<(VarId, bool)> {
        match self.node() {
            Node::Var(v) => Some((*v, true)),
            Node::Not(e) => match e.node() {
                Node::Var(v) => Some((*v, false)),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn not(e: Expr) -> Expr {
        match e.node() {
            Node::Const(b) => Expr::constant(!b),
            Node::Not(inner) => inner.clone(),
            _ => Expr::mk(Node::Not(e)),
        }
    }

    /// Flattened conjunction with constant folding.
    pub fn and(items: impl IntoIterator<Item = Expr>) -> Expr {
        let mut out = Vec::new();
        for e in items {
            match e.node() {
                Node::Const(true) => {}
                Node::Const(false) => return Expr::fals(),
                Node::And(cs) => out.extend(cs.iter().cloned()),
                _ => out.push(e),
            }
        }
        match out.len() {
            0 => Expr::tru(),
            1 => out.pop().unwrap(),
            _ => Expr::mk(Node::And(out)),
        }
    }

    /// Flattened disjunction with constant folding.
    pub fn or(items: impl IntoIterator<Item = Expr>) -> Expr {
        let mut out = Vec::new();
        for e in items {
            match e.node() {
                Node::Const(false) => {}
                Node::Const(true) => return Expr::tru(),
                Node::Or(cs) => out.extend(cs.iter().cloned()),
                _ => out.push(e),
            }
        }
        match out.len() {
            0 => Expr::fals(),
            1 => out.pop().unwrap(),
            _ => Expr::mk(Node::Or(out)),
        }
    }

    pub fn implies(a: Expr, b: Expr) -> Expr {
        match (a.node(), b.node()) {
            (Node::Const(true), _) => b,
            (Node::Const(false), _) | (_, Node::Const(true)) => Expr::tru(),
            (_, Node::Const(false)) => Expr::not(a),
            _ => Expr::mk(Node::Implies(a, b)),
        }
    }

    /// Relation with constant folding when no terms remain.
    pub fn rel(r: LinRel) -> Expr {
        let r = LinRel::new(r.terms, r.op, r.rhs);
        if r.terms.is_empty() {
            return Expr::constant(r.op.holds(&Rat::ZERO, &r.rhs));
        }
        Expr::mk(Node::Rel(r))
    }

    pub fn linear(terms: impl IntoIterator<Item = (VarId, Rat)>, op: RelOp, rhs: Rat) -> Expr {
        Expr::rel(LinRel::new(terms, op, rhs))
    }

    pub fn at_most(mut vars: Vec<VarId>, k: u32) -> Expr {
        vars.sort_unstable();
        vars.dedup();
        if vars.len() <= k as usize {
            return Expr::tru();
        }
        Expr::mk(Node::AtMost(vars, k))
    }

    pub fn exactly(mut vars: Vec<VarId>, k: u32) -> Expr {
        vars.sort_unstable();
        vars.dedup();
        if vars.len() < k as usize {
            return Expr::fals();
        }
        if vars.is_empty() {
            return Expr::constant(k == 0);
        }
        Expr::mk(Node::Exactly(vars, k))
    }

    /// Variables occurring in the expression.
    pub fn vars(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<VarId>) {
        match self.node() {
            Node::Const(_) => {}
            Node::Var(v) => {
                out.insert(*v);
            }
            Node::Not(e) => e.collect_vars(out),
            Node::And(cs) | Node::Or(cs) => cs.iter().for_each(|c| c.collect_vars(out)),
            Node::Implies(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Node::Rel(r) => out.extend(r.terms.iter().map(|(v, _)| *v)),
            Node::AtMost(vs, _) | Node::Exactly(vs, _) => out.extend(vs.iter().copied()),
        }
    }

    /// Evaluates under a total assignment.
    pub fn eval(&self, value: &impl Fn(VarId) -> Value) -> bool {
        let count = |vs: &[VarId]| vs.iter().filter(|v| value(**v) == Value::Bool(true)).count() as u32;
        match self.node() {
            Node::Const(b) => *b,
            Node::Var(v) => value(*v) == Value::Bool(true),
            Node::Not(e) => !e.eval(value),
            Node::And(cs) => cs.iter().all(|c| c.eval(value)),
            Node::Or(cs) => cs.iter().any(|c| c.eval(value)),
            Node::Implies(a, b) => !a.eval(value) || b.eval(value),
            Node::Rel(r) => r.op.holds(&r.lhs_value(|v| value(v).to_rat()), &r.rhs),
            Node::AtMost(vs, k) => count(vs) <= *k,
            Node::Exactly(vs, k) => count(vs) == *k,
        }
    }

    pub fn display<'a>(&'a self, vars: &'a VarTable) -> impl fmt::Display + 'a {
        Pretty(self, vars)
    }
}

// ---------------------------------------------------------------------------
// Variables

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VarInfo {
    pub name: String,
    pub kind: VarKind,
    pub lower: Option<Rat>,
    pub upper: Option<Rat>,
}

impl VarInfo {
    /// Effective lower bound; booleans are `[0, 1]`.
    pub fn lo(&self) -> Option<Rat> {
        match self.kind {
            VarKind::Boolean => Some(Rat::ZERO),
            _ => self.lower.clone(),
        }
    }

    pub fn hi(&self) -> Option<Rat> {
        match self.kind {
            VarKind::Boolean => Some(Rat::ONE),
            _ => self.upper.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("variable `{0}` declared twice")]
    Redeclared(String),
    #[error("variable #{0} is not declared")]
    Undeclared(VarId),
}

/// Declared variables with kinds and boxes.
#[derive(Debug, Clone, Default)]
pub struct VarTable {
    vars: Vec<VarInfo>,
    by_name: HashMap<String, VarId>,
}

impl VarTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: &str, kind: VarKind, lower: Option<Rat>, upper: Option<Rat>) -> Result<VarId, ExprError> {
        if self.by_name.contains_key(name) {
            return Err(ExprError::Redeclared(name.to_string()));
        }
        let id = self.vars.len();
        self.vars.push(VarInfo {
            name: name.to_string(),
            kind,
            lower,
            upper,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn lookup(&self, name: &str) -> Option<VarId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: VarId) -> &VarInfo {
        &self.vars[id]
    }

    pub fn try_get(&self, id: VarId) -> Option<&VarInfo> {
        self.vars.get(id)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, &VarInfo)> {
        self.vars.iter().enumerate()
    }

    pub fn is_integral(&self, id: VarId) -> bool {
        self.vars[id].kind.is_integral()
    }
}

/// Source of fresh variables for transformations that introduce auxiliaries.
pub trait Declare {
    fn fresh_bool(&mut self, hint: &str) -> VarId;
    fn info(&self, id: VarId) -> &VarInfo;
}

// ---------------------------------------------------------------------------
// Partial evaluation

pub type BindingSet = BTreeMap<VarId, Value>;

/// Substitutes bindings and simplifies; fully bound expressions reduce to
/// constants.
pub fn pval(e: &Expr, b: &BindingSet) -> Expr {
    match e.node() {
        Node::Const(_) => e.clone(),
        Node::Var(v) => match b.get(v) {
            Some(Value::Bool(x)) => Expr::constant(*x),
            Some(Value::Num(r)) => Expr::constant(!r.is_zero()),
            None => e.clone(),
        },
        Node::Not(x) => Expr::not(pval(x, b)),
        Node::And(cs) => Expr::and(cs.iter().map(|c| pval(c, b))),
        Node::Or(cs) => Expr::or(cs.iter().map(|c| pval(c, b))),
        Node::Implies(x, y) => Expr::implies(pval(x, b), pval(y, b)),
        Node::Rel(r) => {
            if r.terms.iter().all(|(v, _)| !b.contains_key(v)) {
                return e.clone();
            }
            let mut rhs = r.rhs.clone();
            let mut terms = Vec::with_capacity(r.terms.len());
            for (v, c) in &r.terms {
                match b.get(v) {
                    Some(x) => rhs -= c * x.to_rat(),
                    None => terms.push((*v, c.clone())),
                }
            }
            Expr::rel(LinRel { terms, op: r.op, rhs })
        }
        Node::AtMost(vs, k) | Node::Exactly(vs, k) => {
            let mut trues = 0u32;
            let mut rest = Vec::new();
            for v in vs {
                match b.get(v) {
                    Some(x) if x.to_rat().is_zero() => {}
                    Some(_) => trues += 1,
                    None => rest.push(*v),
                }
            }
            let exact = matches!(e.node(), Node::Exactly(..));
            if trues > *k {
                return Expr::fals();
            }
            let k = k - trues;
            if exact {
                Expr::exactly(rest, k)
            } else {
                Expr::at_most(rest, k)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Negation normal form

fn scaled_integral(r: &LinRel) -> (Vec<(VarId, Rat)>, Rat) {
    let l = Rat::from_bigint(Rat::lcm_denominators(r.terms.iter().map(|(_, c)| c)));
    let terms = r.terms.iter().map(|(v, c)| (*v, c * &l)).collect();
    (terms, &r.rhs * &l)
}

/// Negates a relation. With integral variables the complement is exact;
/// otherwise `exact` decides between keeping a `Not` atom and taking the
/// closure of the complement.
fn negate_rel(r: &LinRel, integral: bool, exact: bool) -> Expr {
    if integral {
        let (terms, rhs) = scaled_integral(r);
        let one = Rat::ONE;
        match r.op {
            RelOp::Le => Expr::linear(terms, RelOp::Ge, rhs.floor() + one),
            RelOp::Ge => Expr::linear(terms, RelOp::Le, rhs.ceil() - one),
            RelOp::Eq => {
                if !rhs.is_integer() {
                    return Expr::tru();
                }
                Expr::or([
                    Expr::linear(terms.clone(), RelOp::Le, &rhs - &one),
                    Expr::linear(terms, RelOp::Ge, rhs + one),
                ])
            }
        }
    } else if exact {
        Expr::mk(Node::Not(Expr::mk(Node::Rel(r.clone()))))
    } else {
        match r.op {
            RelOp::Le => Expr::linear(r.terms.clone(), RelOp::Ge, r.rhs.clone()),
            RelOp::Ge => Expr::linear(r.terms.clone(), RelOp::Le, r.rhs.clone()),
            RelOp::Eq => Expr::tru(),
        }
    }
}

fn card_terms(vs: &[VarId]) -> Vec<(VarId, Rat)> {
    vs.iter().map(|v| (*v, Rat::ONE)).collect()
}

fn nnf_with(e: &Expr, integral: &impl Fn(VarId) -> bool, exact: bool, negate: bool) -> Expr {
    match e.node() {
        Node::Const(b) => Expr::constant(*b != negate),
        Node::Var(_) => {
            if negate {
                Expr::not(e.clone())
            } else {
                e.clone()
            }
        }
        Node::Not(x) => nnf_with(x, integral, exact, !negate),
        Node::And(cs) | Node::Or(cs) => {
            let kids = cs.iter().map(|c| nnf_with(c, integral, exact, negate));
            if matches!(e.node(), Node::And(_)) != negate {
                Expr::and(kids)
            } else {
                Expr::or(kids)
            }
        }
        Node::Implies(a, b) => {
            let na = nnf_with(a, integral, exact, !negate);
            let nb = nnf_with(b, integral, exact, negate);
            if negate {
                // not (a => b)  ==  a and not b
                Expr::and([na, nb])
            } else {
                Expr::or([na, nb])
            }
        }
        Node::Rel(r) => {
            if negate {
                negate_rel(r, r.terms.iter().all(|(v, _)| integral(*v)), exact)
            } else {
                e.clone()
            }
        }
        Node::AtMost(vs, k) => {
            if negate {
                Expr::linear(card_terms(vs), RelOp::Ge, Rat::from_int(*k as i64 + 1))
            } else {
                e.clone()
            }
        }
        Node::Exactly(vs, k) => {
            if negate {
                let t = card_terms(vs);
                Expr::or([
                    Expr::linear(t.clone(), RelOp::Le, Rat::from_int(*k as i64 - 1)),
                    Expr::linear(t, RelOp::Ge, Rat::from_int(*k as i64 + 1)),
                ])
            } else {
                e.clone()
            }
        }
    }
}

/// Negation normal form. Negated relations over integral variables become
/// exact complements; over real variables the closure of the complement is
/// used, which over-approximates the negation.
pub fn nnf(e: &Expr, vars: &VarTable) -> Expr {
    nnf_with(e, &|v| vars.is_integral(v), false, false)
}

// ---------------------------------------------------------------------------
// Propagation-based satisfiability

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Psat {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Tri {
    True,
    False,
    Unknown,
}

#[derive(Clone)]
struct Boxes<'a> {
    vars: &'a VarTable,
    lo: HashMap<VarId, Option<Rat>>,
    hi: HashMap<VarId, Option<Rat>>,
}

struct Empty;

impl<'a> Boxes<'a> {
    fn new(vars: &'a VarTable, ids: &BTreeSet<VarId>) -> Result<Self, Empty> {
        let mut b = Boxes {
            vars,
            lo: HashMap::new(),
            hi: HashMap::new(),
        };
        for &v in ids {
            let info = vars.get(v);
            b.lo.insert(v, info.lo());
            b.hi.insert(v, info.hi());
            b.tighten(v, info.lo(), info.hi())?;
        }
        Ok(b)
    }

    fn lo(&self, v: VarId) -> Option<&Rat> {
        self.lo[&v].as_ref()
    }

    fn hi(&self, v: VarId) -> Option<&Rat> {
        self.hi[&v].as_ref()
    }

    /// Intersects the box of `v`; returns whether it changed.
    fn tighten(&mut self, v: VarId, lo: Option<Rat>, hi: Option<Rat>) -> Result<bool, Empty> {
        let integral = self.vars.is_integral(v);
        let mut changed = false;
        if let Some(mut l) = lo {
            if integral {
                l = l.ceil();
            }
            if self.lo(v).is_none_or(|cur| l > *cur) {
                self.lo.insert(v, Some(l));
                changed = true;
            }
        }
        if let Some(mut h) = hi {
            if integral {
                h = h.floor();
            }
            if self.hi(v).is_none_or(|cur| h < *cur) {
                self.hi.insert(v, Some(h));
                changed = true;
            }
        }
        if let (Some(l), Some(h)) = (self.lo(v), self.hi(v)) {
            if l > h {
                return Err(Empty);
            }
        }
        Ok(changed)
    }

    /// Range of `sum(c * x)`; `None` means unbounded on that side.
    fn activity(&self, terms: &[(VarId, Rat)]) -> (Option<Rat>, Option<Rat>) {
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

    fn rel(&self, r: &LinRel) -> Tri {
        let (min, max) = self.activity(&r.terms);
        let le_true = max.as_ref().is_some_and(|m| *m <= r.rhs);
        let le_false = min.as_ref().is_some_and(|m| *m > r.rhs);
        let ge_true = min.as_ref().is_some_and(|m| *m >= r.rhs);
        let ge_false = max.as_ref().is_some_and(|m| *m < r.rhs);
        match r.op {
            RelOp::Le if le_true => Tri::True,
            RelOp::Le if le_false => Tri::False,
            RelOp::Ge if ge_true => Tri::True,
            RelOp::Ge if ge_false => Tri::False,
            RelOp::Eq if le_false || ge_false => Tri::False,
            RelOp::Eq if le_true && ge_true => Tri::True,
            _ => Tri::Unknown,
        }
    }

    fn eval(&self, e: &Expr) -> Tri {
        let not = |t: Tri| match t {
            Tri::True => Tri::False,
            Tri::False => Tri::True,
            Tri::Unknown => Tri::Unknown,
        };
        match e.node() {
            Node::Const(b) => {
                if *b {
                    Tri::True
                } else {
                    Tri::False
                }
            }
            Node::Var(v) => {
                if self.lo(*v).is_some_and(|l| l.is_positive()) {
                    Tri::True
                } else if self.hi(*v).is_some_and(|h| h.is_zero()) {
                    Tri::False
                } else {
                    Tri::Unknown
                }
            }
            Node::Not(x) => not(self.eval(x)),
            Node::And(cs) => {
                let mut all = true;
                for c in cs {
                    match self.eval(c) {
                        Tri::False => return Tri::False,
                        Tri::Unknown => all = false,
                        Tri::True => {}
                    }
                }
                if all {
                    Tri::True
                } else {
                    Tri::Unknown
                }
            }
            Node::Or(cs) => {
                let mut none = true;
                for c in cs {
                    match self.eval(c) {
                        Tri::True => return Tri::True,
                        Tri::Unknown => none = false,
                        Tri::False => {}
                    }
                }
                if none {
                    Tri::False
                } else {
                    Tri::Unknown
                }
            }
            Node::Implies(a, b) => match (self.eval(a), self.eval(b)) {
                (Tri::False, _) | (_, Tri::True) => Tri::True,
                (Tri::True, Tri::False) => Tri::False,
                _ => Tri::Unknown,
            },
            Node::Rel(r) => self.rel(r),
            Node::AtMost(vs, k) => self.rel(&LinRel {
                terms: card_terms(vs),
                op: RelOp::Le,
                rhs: Rat::from_int(*k as i64),
            }),
            Node::Exactly(vs, k) => self.rel(&LinRel {
                terms: card_terms(vs),
                op: RelOp::Eq,
                rhs: Rat::from_int(*k as i64),
            }),
        }
    }

    /// Bound propagation for a relation that must hold.
    fn propagate_rel(&mut self, r: &LinRel) -> Result<bool, Empty> {
        let mut changed = false;
        let ops: &[RelOp] = match r.op {
            RelOp::Le => &[RelOp::Le],
            RelOp::Ge => &[RelOp::Ge],
            RelOp::Eq => &[RelOp::Le, RelOp::Ge],
        };
        for &op in ops {
            for (i, (v, c)) in r.terms.iter().enumerate() {
                let rest: Vec<(VarId, Rat)> = r
                    .terms
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, t)| t.clone())
                    .collect();
                let (rmin, rmax) = self.activity(&rest);
                // c*x <= rhs - rmin  or  c*x >= rhs - rmax
                let bound = match op {
                    RelOp::Le => rmin.map(|m| (&r.rhs - &m) / c),
                    _ => rmax.map(|m| (&r.rhs - &m) / c),
                };
                let Some(b) = bound else { continue };
                let upper = (op == RelOp::Le) == c.is_positive();
                changed |= if upper {
                    self.tighten(*v, None, Some(b))?
                } else {
                    self.tighten(*v, Some(b), None)?
                };
            }
        }
        Ok(changed)
    }

    /// Forces `e` to hold where propagation can decide it.
    fn assert(&mut self, e: &Expr) -> Result<bool, Empty> {
        match self.eval(e) {
            Tri::True => return Ok(false),
            Tri::False => return Err(Empty),
            Tri::Unknown => {}
        }
        match e.node() {
            Node::Var(v) => self.tighten(*v, Some(Rat::ONE), None),
            Node::Not(x) => match x.node() {
                Node::Var(v) => self.tighten(*v, None, Some(Rat::ZERO)),
                _ => Ok(false),
            },
            Node::And(cs) => {
                let mut changed = false;
                for c in cs {
                    changed |= self.assert(c)?;
                }
                Ok(changed)
            }
            Node::Or(cs) => {
                let open: Vec<&Expr> = cs.iter().filter(|c| self.eval(c) != Tri::False).collect();
                match open.len() {
                    0 => Err(Empty),
                    1 => self.assert(open[0]),
                    _ => Ok(false),
                }
            }
            Node::Rel(r) => self.propagate_rel(r),
            Node::AtMost(vs, k) => self.propagate_rel(&LinRel {
                terms: card_terms(vs),
                op: RelOp::Le,
                rhs: Rat::from_int(*k as i64),
            }),
            Node::Exactly(vs, k) => self.propagate_rel(&LinRel {
                terms: card_terms(vs),
                op: RelOp::Eq,
                rhs: Rat::from_int(*k as i64),
            }),
            Node::Const(_) | Node::Implies(..) => Ok(false),
        }
    }

    fn is_open_bool(&self, v: VarId) -> bool {
        self.vars.get(v).kind == VarKind::Boolean && self.eval(&Expr::var(v)) == Tri::Unknown
    }

    /// Records the polarity of open boolean occurrences (bit 0 positive,
    /// bit 1 negative) in constraints that are not yet decided.
    fn polarity(&self, e: &Expr, out: &mut BTreeMap<VarId, u8>) {
        if self.eval(e) != Tri::Unknown {
            return;
        }
        let mut mark = |v: VarId, bits: u8| {
            if self.is_open_bool(v) {
                *out.entry(v).or_default() |= bits;
            }
        };
        match e.node() {
            Node::Var(v) => mark(*v, 1),
            Node::Not(x) => match x.node() {
                Node::Var(v) => mark(*v, 2),
                _ => x.vars().into_iter().for_each(|v| mark(v, 3)),
            },
            Node::And(cs) | Node::Or(cs) => cs.iter().for_each(|c| self.polarity(c, out)),
            Node::Rel(r) => {
                for (v, c) in &r.terms {
                    let bits = match r.op {
                        RelOp::Eq => 3,
                        RelOp::Le if c.is_positive() => 2,
                        RelOp::Le => 1,
                        RelOp::Ge if c.is_positive() => 1,
                        RelOp::Ge => 2,
                    };
                    mark(*v, bits);
                }
            }
            Node::AtMost(vs, _) => vs.iter().for_each(|v| mark(*v, 2)),
            Node::Exactly(vs, _) => vs.iter().for_each(|v| mark(*v, 3)),
            Node::Const(_) | Node::Implies(..) => e.vars().into_iter().for_each(|v| mark(v, 3)),
        }
    }
}

const PSAT_ROUNDS: usize = 200;

/// Sound but incomplete satisfiability: unit propagation with interval
/// reasoning on arithmetic atoms, plus pure-literal elimination, run to a
/// fixpoint without search. `Sat` is reported only when every conjunct
/// holds on the whole propagated box.
pub fn psat(e: &Expr, vars: &VarTable) -> Psat {
    let e = nnf_with(e, &|v| vars.is_integral(v), true, false);
    if let Some(b) = e.as_const() {
        return if b { Psat::Sat } else { Psat::Unsat };
    }
    let conjuncts: Vec<Expr> = match e.node() {
        Node::And(cs) => cs.clone(),
        _ => vec![e.clone()],
    };
    let Ok(mut boxes) = Boxes::new(vars, &e.vars()) else {
        return Psat::Unsat;
    };
    for _ in 0..PSAT_ROUNDS {
        let mut changed = false;
        for c in &conjuncts {
            match boxes.assert(c) {
                Ok(ch) => changed |= ch,
                Err(Empty) => return Psat::Unsat,
            }
        }
        if changed {
            continue;
        }
        let mut pol = BTreeMap::new();
        for c in &conjuncts {
            boxes.polarity(c, &mut pol);
        }
        for (v, bits) in pol {
            let r = match bits {
                1 => boxes.tighten(v, Some(Rat::ONE), None),
                2 => boxes.tighten(v, None, Some(Rat::ZERO)),
                _ => continue,
            };
            if r.is_err() {
                return Psat::Unsat;
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
    if conjuncts.iter().all(|c| boxes.eval(c) == Tri::True) {
        Psat::Sat
    } else {
        Psat::Unknown
    }
}

// ---------------------------------------------------------------------------
// Printing

struct Pretty<'a>(&'a Expr, &'a VarTable);

impl fmt::Display for Pretty<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |v: &VarId| self.1.try_get(*v).map(|i| i.name.clone()).unwrap_or_else(|| format!("#{v}"));
        let list = |f: &mut fmt::Formatter<'_>, cs: &[Expr], sep: &str| -> fmt::Result {
            write!(f, "(")?;
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    write!(f, " {sep} ")?;
                }
                write!(f, "{}", Pretty(c, self.1))?;
            }
            write!(f, ")")
        };
        match self.0.node() {
            Node::Const(b) => write!(f, "{b}"),
            Node::Var(v) => write!(f, "{}", name(v)),
            Node::Not(x) => write!(f, "!{}", Pretty(x, self.1)),
            Node::And(cs) => list(f, cs, "&"),
            Node::Or(cs) => list(f, cs, "|"),
            Node::Implies(a, b) => write!(f, "({} => {})", Pretty(a, self.1), Pretty(b, self.1)),
            Node::Rel(r) => {
                for (i, (v, c)) in r.terms.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    if c.is_one() {
                        write!(f, "{}", name(v))?;
                    } else {
                        write!(f, "{c}*{}", name(v))?;
                    }
                }
                write!(f, " {} {}", r.op.symbol(), r.rhs)
            }
            Node::AtMost(vs, k) => write!(f, "atmost({k}; {})", vs.iter().map(name).collect::<Vec<_>>().join(", ")),
            Node::Exactly(vs, k) => write!(f, "exactly({k}; {})", vs.iter().map(name).collect::<Vec<_>>().join(", ")),
        }
    }
}

/// SMT-LIB symbol for a variable name.
pub fn smt_symbol(name: &str) -> String {
    if !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "~!@$%^&*_-+=<>.?/".contains(c))
        && !name.starts_with(|c: char| c.is_ascii_digit())
    {
        name.to_string()
    } else {
        format!("|{}|", name.replace(['|', '\\'], "_"))
    }
}

fn smt_num(r: &Rat, real: bool) -> String {
    let mag = r.abs();
    let body = if mag.is_integer() {
        if real {
            format!("{}.0", mag.numer())
        } else {
            mag.numer().to_string()
        }
    } else {
        format!("(/ {}.0 {}.0)", mag.numer(), mag.denom())
    };
    if r.is_negative() {
        format!("(- {body})")
    } else {
        body
    }
}

fn smt_sort(kind: VarKind) -> &'static str {
    match kind {
        VarKind::Boolean => "Bool",
        VarKind::Integer => "Int",
        VarKind::Real => "Real",
    }
}

/// SMT-LIB 2 term for an expression.
pub fn to_smt(e: &Expr, vars: &VarTable) -> String {
    let sym = |v: VarId| smt_symbol(&vars.get(v).name);
    let sum = |terms: &[(VarId, Rat)], rhs: &Rat, op: &str| {
        let real = !rhs.is_integer()
            || terms
                .iter()
                .any(|(v, c)| !c.is_integer() || vars.get(*v).kind == VarKind::Real);
        let atom = |v: VarId| {
            let info = vars.get(v);
            match (info.kind, real) {
                (VarKind::Boolean, false) => format!("(ite {} 1 0)", sym(v)),
                (VarKind::Boolean, true) => format!("(ite {} 1.0 0.0)", sym(v)),
                (VarKind::Integer, true) => format!("(to_real {})", sym(v)),
                _ => sym(v),
            }
        };
        let mut parts = Vec::new();
        for (v, c) in terms {
            if c.is_one() {
                parts.push(atom(*v));
            } else {
                parts.push(format!("(* {} {})", smt_num(c, real), atom(*v)));
            }
        }
        let lhs = if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            format!("(+ {})", parts.join(" "))
        };
        format!("({op} {lhs} {})", smt_num(rhs, real))
    };
    let card = |vs: &[VarId], k: u32, op: &str| {
        let terms: Vec<(VarId, Rat)> = card_terms(vs);
        sum(&terms, &Rat::from_int(k as i64), op)
    };
    let many = |head: &str, cs: &[Expr]| {
        let mut s = format!("({head}");
        for c in cs {
            s.push(' ');
            s.push_str(&to_smt(c, vars));
        }
        s.push(')');
        s
    };
    match e.node() {
        Node::Const(b) => b.to_string(),
        Node::Var(v) => sym(*v),
        Node::Not(x) => format!("(not {})", to_smt(x, vars)),
        Node::And(cs) => many("and", cs),
        Node::Or(cs) => many("or", cs),
        Node::Implies(a, b) => format!("(=> {} {})", to_smt(a, vars), to_smt(b, vars)),
        Node::Rel(r) => sum(&r.terms, &r.rhs, r.op.symbol()),
        Node::AtMost(vs, k) => card(vs, *k, "<="),
        Node::Exactly(vs, k) => card(vs, *k, "="),
    }
}

/// Declarations (with boxes) for every variable in the table.
pub fn smt_declarations(vars: &VarTable) -> String {
    let mut s = String::new();
    for (_, info) in vars.iter() {
        let name = smt_symbol(&info.name);
        let _ = writeln!(s, "(declare-const {name} {})", smt_sort(info.kind));
        if info.kind != VarKind::Boolean {
            let real = info.kind == VarKind::Real;
            if let Some(l) = &info.lower {
                let _ = writeln!(s, "(assert (<= {} {name}))", smt_num(l, real));
            }
            if let Some(u) = &info.upper {
                let _ = writeln!(s, "(assert (<= {name} {}))", smt_num(u, real));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(bools: usize, ints: &[(i64, i64)]) -> VarTable {
        let mut t = VarTable::new();
        for i in 0..bools {
            t.declare(&format!("b{i}"), VarKind::Boolean, None, None).unwrap();
        }
        for (i, (l, h)) in ints.iter().enumerate() {
            t.declare(&format!("x{i}"), VarKind::Integer, Some(Rat::from_int(*l)), Some(Rat::from_int(*h)))
                .unwrap();
        }
        t
    }

    #[test]
    fn pval_identity_and_folding() {
        let (p, q) = (Expr::var(0), Expr::var(1));
        let b: BindingSet = [(0, Value::Bool(true))].into();
        assert_eq!(pval(&Expr::and([p, q.clone()]), &b), q);

        let r = Expr::linear([(2, Rat::from_int(2)), (3, Rat::from_int(3))], RelOp::Le, Rat::from_int(10));
        let b: BindingSet = [(2, Value::Num(Rat::from_int(2)))].into();
        assert_eq!(pval(&r, &b), Expr::linear([(3, Rat::from_int(3))], RelOp::Le, Rat::from_int(6)));
    }

    #[test]
    fn psat_basics() {
        let t = table(2, &[]);
        let (p, q) = (Expr::var(0), Expr::var(1));
        assert_eq!(psat(&Expr::and([p.clone(), Expr::not(p.clone())]), &t), Psat::Unsat);
        assert_eq!(psat(&Expr::or([p, q]), &t), Psat::Sat);
    }

    #[test]
    fn psat_interval_reasoning() {
        let t = table(1, &[(0, 2)]);
        let x = 1;
        // x >= 3 is false on [0, 2]
        assert_eq!(psat(&Expr::linear([(x, Rat::ONE)], RelOp::Ge, Rat::from_int(3)), &t), Psat::Unsat);
        // b => x >= 3 forces !b; b must hold as well
        let e = Expr::and([
            Expr::implies(Expr::var(0), Expr::linear([(x, Rat::ONE)], RelOp::Ge, Rat::from_int(3))),
            Expr::var(0),
        ]);
        assert_eq!(psat(&e, &t), Psat::Unsat);
        // 2x = 1 has no integer solution
        assert_eq!(psat(&Expr::linear([(x, Rat::from_int(2))], RelOp::Eq, Rat::ONE), &t), Psat::Unsat);
    }

    #[test]
    fn nnf_rules() {
        let t = table(2, &[(0, 10)]);
        let (p, q) = (Expr::var(0), Expr::var(1));
        assert_eq!(
            nnf(&Expr::not(Expr::and([p.clone(), q.clone()])), &t),
            Expr::or([Expr::not(p), Expr::not(q)])
        );
        let le = Expr::linear([(2, Rat::ONE)], RelOp::Le, Rat::from_int(3));
        assert_eq!(nnf(&Expr::not(le), &t), Expr::linear([(2, Rat::ONE)], RelOp::Ge, Rat::from_int(4)));
    }

    #[test]
    fn real_complement_is_closure() {
        let mut t = VarTable::new();
        let x = t.declare("x", VarKind::Real, Some(Rat::ZERO), Some(Rat::from_int(10))).unwrap();
        let le = Expr::linear([(x, Rat::ONE)], RelOp::Le, Rat::from_int(3));
        assert_eq!(nnf(&Expr::not(le.clone()), &t), Expr::linear([(x, Rat::ONE)], RelOp::Ge, Rat::from_int(3)));
        // psat stays exact: x <= 3 and not(x <= 3) is not reported satisfiable
        assert_ne!(psat(&Expr::and([le.clone(), Expr::not(le)]), &t), Psat::Sat);
    }

    #[test]
    fn smt_output() {
        let t = table(1, &[(0, 2)]);
        let e = Expr::implies(Expr::var(0), Expr::linear([(1, Rat::ONE)], RelOp::Le, Rat::ONE));
        assert_eq!(to_smt(&e, &t), "(=> b0 (<= x0 1))");
        assert!(smt_declarations(&t).contains("(declare-const x0 Int)"));
        assert_eq!(smt_symbol("p.at a@1"), "|p.at a@1|");
    }

    #[test]
    fn redeclaration_fails() {
        let mut t = table(1, &[]);
        assert_eq!(t.declare("b0", VarKind::Boolean, None, None), Err(ExprError::Redeclared("b0".into())));
    }

    // Random formulas over 6 booleans and 2 small integers.
    const NB: usize = 6;
    const BOX: (i64, i64) = (-2, 3);

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0..NB).prop_map(Expr::var),
            any::<bool>().prop_map(Expr::constant),
            (
                prop::collection::vec((0..NB + 2, -3i64..=3), 1..3),
                prop_oneof![Just(RelOp::Le), Just(RelOp::Ge), Just(RelOp::Eq)],
                -4i64..=4
            )
                .prop_map(|(ts, op, rhs)| Expr::linear(
                    ts.into_iter().map(|(v, c)| (v, Rat::from_int(c))),
                    op,
                    Rat::from_int(rhs)
                )),
            (prop::collection::vec(0..NB, 1..4), 0u32..3).prop_map(|(vs, k)| Expr::at_most(vs, k)),
            (prop::collection::vec(0..NB, 1..4), 0u32..3).prop_map(|(vs, k)| Expr::exactly(vs, k)),
        ];
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                inner.clone().prop_map(Expr::not),
                prop::collection::vec(inner.clone(), 1..4).prop_map(Expr::and),
                prop::collection::vec(inner.clone(), 1..4).prop_map(Expr::or),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::implies(a, b)),
            ]
        })
    }

    fn all_assignments() -> Vec<Vec<Value>> {
        let mut out = Vec::new();
        for mask in 0..(1u32 << NB) {
            for x in BOX.0..=BOX.1 {
                for y in BOX.0..=BOX.1 {
                    let mut a: Vec<Value> = (0..NB).map(|i| Value::Bool(mask >> i & 1 == 1)).collect();
                    a.push(Value::Num(Rat::from_int(x)));
                    a.push(Value::Num(Rat::from_int(y)));
                    out.push(a);
                }
            }
        }
        out
    }

    fn binding(a: &[Value]) -> BindingSet {
        a.iter().cloned().enumerate().collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn pval_total_binding_matches_eval(e in arb_expr(), seed in any::<u64>()) {
            let all = all_assignments();
            let a = &all[(seed as usize) % all.len()];
            let r = pval(&e, &binding(a));
            prop_assert_eq!(r.as_const(), Some(e.eval(&|v| a[v].clone())));
        }

        #[test]
        fn psat_and_nnf_agree_with_truth_table(e in arb_expr()) {
            let t = table(NB, &[BOX, BOX]);
            let all = all_assignments();
            let sat = all.iter().any(|a| e.eval(&|v| a[v].clone()));
            match psat(&e, &t) {
                Psat::Sat => prop_assert!(sat),
                Psat::Unsat => prop_assert!(!sat),
                Psat::Unknown => {}
            }
            let n = nnf(&e, &t);
            prop_assert_eq!(nnf(&n, &t), n.clone());
            for a in &all {
                prop_assert_eq!(n.eval(&|v| a[v].clone()), e.eval(&|v| a[v].clone()));
            }
            // Partial bindings preserve the value for every extension.
            let half: BindingSet = (0..NB / 2).map(|i| (i, all[37 % all.len()][i].clone())).collect();
            let pe = pval(&e, &half);
            for a in all.iter().filter(|a| half.iter().all(|(v, x)| a[*v] == *x)) {
                prop_assert_eq!(pe.eval(&|v| a[v].clone()), e.eval(&|v| a[v].clone()));
            }
        }
    }
}
