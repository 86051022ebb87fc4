//! Exact rational simplex over box-bounded variables.
//!
//! [`Simplex`] is an incremental tableau in the general form used by SMT
//! arithmetic solvers: every row introduces a slack variable equal to a
//! linear combination of structural variables, and all constraints are
//! bounds on variables. Feasibility repair and optimization both use
//! Bland's rule. Bounds may be tightened and relaxed freely between checks
//! without invalidating the basis, which is what branch and bound needs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::problem::RelOp;
use crate::rational::Rat;

pub const PIVOT_LIMIT: u64 = 10_000_000;

/// Pivots per call chosen by sparsity before switching to Bland's rule.
const GREEDY_PIVOTS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LpError {
    #[error("pivot limit of {0} exceeded")]
    PivotLimit(u64),
    #[error("row {row} references undeclared variable {var}")]
    UnknownVar { row: usize, var: usize },
    #[error("variable {0} has lower bound above upper bound")]
    EmptyBox(usize),
    #[error("optimization requested without an objective")]
    NoObjective,
}

type Row = Vec<(usize, Rat)>;

fn row_get(row: &Row, v: usize) -> Option<&Rat> {
    row.binary_search_by_key(&v, |e| e.0).ok().map(|i| &row[i].1)
}

/// `dst += k * src` on sorted sparse rows. Calls `added` for variables that
/// become present in `dst`.
fn axpy(dst: &mut Row, k: &Rat, src: &Row, mut added: impl FnMut(usize)) {
    let mut out = Vec::with_capacity(dst.len() + src.len());
    let (mut i, mut j) = (0, 0);
    while i < dst.len() || j < src.len() {
        let take_dst = j >= src.len() || (i < dst.len() && dst[i].0 < src[j].0);
        let take_src = i >= dst.len() || (j < src.len() && src[j].0 < dst[i].0);
        if take_dst {
            out.push(std::mem::take(&mut dst[i]));
            i += 1;
        } else if take_src {
            added(src[j].0);
            out.push((src[j].0, k * &src[j].1));
            j += 1;
        } else {
            let c = &dst[i].1 + &(k * &src[j].1);
            if !c.is_zero() {
                out.push((dst[i].0, c));
            }
            i += 1;
            j += 1;
        }
    }
    *dst = out;
}

/// Incremental general-form simplex tableau.
#[derive(Debug, Clone, Default)]
pub struct Simplex {
    lo: Vec<Option<Rat>>,
    hi: Vec<Option<Rat>>,
    val: Vec<Rat>,
    /// Row index for basic variables.
    row_of: Vec<Option<usize>>,
    /// Basic variable of each row.
    basic: Vec<usize>,
    /// `basic[r] = sum(coeff * nonbasic)`.
    rows: Vec<Row>,
    /// Rows that may mention each variable; may hold stale entries.
    cols: Vec<Vec<usize>>,
    pivots: u64,
    call_start: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Feasible,
    Infeasible,
    Unbounded,
}

impl Simplex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var_count(&self) -> usize {
        self.val.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn pivots(&self) -> u64 {
        self.pivots
    }

    pub fn value(&self, v: usize) -> &Rat {
        &self.val[v]
    }

    pub fn values(&self) -> &[Rat] {
        &self.val
    }

    pub fn lower(&self, v: usize) -> Option<&Rat> {
        self.lo[v].as_ref()
    }

    pub fn upper(&self, v: usize) -> Option<&Rat> {
        self.hi[v].as_ref()
    }

    pub fn add_var(&mut self, lo: Option<Rat>, hi: Option<Rat>) -> usize {
        let v = self.val.len();
        let start = match (&lo, &hi) {
            (Some(l), _) if l.is_positive() => l.clone(),
            (_, Some(h)) if h.is_negative() => h.clone(),
            _ => Rat::ZERO,
        };
        self.lo.push(lo);
        self.hi.push(hi);
        self.val.push(start);
        self.row_of.push(None);
        self.cols.push(Vec::new());
        v
    }

    /// Adds a free slack variable `s = sum(coeff * var)` and returns it.
    pub fn add_row(&mut self, terms: &[(usize, Rat)]) -> usize {
        let mut expanded: BTreeMap<usize, Rat> = BTreeMap::new();
        for (v, c) in terms {
            if c.is_zero() {
                continue;
            }
            match self.row_of[*v] {
                Some(r) => {
                    for (w, d) in &self.rows[r] {
                        *expanded.entry(*w).or_default() += c * d;
                    }
                }
                None => *expanded.entry(*v).or_default() += c.clone(),
            }
        }
        let row: Row = expanded.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        let value: Rat = row.iter().map(|(v, c)| c * &self.val[*v]).sum();
        let s = self.add_var(None, None);
        self.val[s] = value;
        let r = self.rows.len();
        for (v, _) in &row {
            self.cols[*v].push(r);
        }
        self.rows.push(row);
        self.basic.push(s);
        self.row_of[s] = Some(r);
        s
    }

    /// Replaces both bounds of `v`. Nonbasic values are moved into the new
    /// box immediately so the basis stays valid.
    pub fn set_bounds(&mut self, v: usize, lo: Option<Rat>, hi: Option<Rat>) {
        self.lo[v] = lo;
        self.hi[v] = hi;
        if self.row_of[v].is_none() {
            let target = if self.lo[v].as_ref().is_some_and(|l| self.val[v] < *l) {
                self.lo[v].clone()
            } else if self.hi[v].as_ref().is_some_and(|h| self.val[v] > *h) {
                self.hi[v].clone()
            } else {
                None
            };
            if let Some(t) = target {
                self.update(v, t);
            }
        }
    }

    pub fn set_lower(&mut self, v: usize, lo: Option<Rat>) {
        let hi = self.hi[v].clone();
        self.set_bounds(v, lo, hi);
    }

    pub fn set_upper(&mut self, v: usize, hi: Option<Rat>) {
        let lo = self.lo[v].clone();
        self.set_bounds(v, lo, hi);
    }

    fn rows_with(&mut self, v: usize) -> Vec<usize> {
        let rows = &self.rows;
        let mut list = std::mem::take(&mut self.cols[v]);
        list.sort_unstable();
        list.dedup();
        list.retain(|&r| row_get(&rows[r], v).is_some());
        self.cols[v] = list.clone();
        list
    }

    /// Sets nonbasic `v` to `x` and updates dependent basic values.
    fn update(&mut self, v: usize, x: Rat) {
        let delta = &x - &self.val[v];
        if delta.is_zero() {
            return;
        }
        for r in self.rows_with(v) {
            let c = row_get(&self.rows[r], v).expect("column index is exact after filtering");
            let b = self.basic[r];
            self.val[b] += c * &delta;
        }
        self.val[v] = x;
    }

    fn count_pivot(&mut self) -> Result<(), LpError> {
        self.pivots += 1;
        if self.pivots - self.call_start > PIVOT_LIMIT {
            return Err(LpError::PivotLimit(PIVOT_LIMIT));
        }
        Ok(())
    }

    fn pivot(&mut self, r: usize, entering: usize) -> Result<(), LpError> {
        self.count_pivot()?;
        let leaving = self.basic[r];
        let old = std::mem::take(&mut self.rows[r]);
        let a = row_get(&old, entering).expect("entering variable is in the pivot row").clone();
        let inv = a.recip();
        // entering = inv * leaving - sum(inv * c * other)
        let mut new_row: Row = Vec::with_capacity(old.len());
        let neg_inv = -&inv;
        let mut placed = false;
        for (w, c) in &old {
            if *w == entering {
                continue;
            }
            if !placed && *w > leaving {
                new_row.push((leaving, inv.clone()));
                placed = true;
            }
            new_row.push((*w, c * &neg_inv));
        }
        if !placed {
            new_row.push((leaving, inv.clone()));
        }
        self.cols[leaving].push(r);
        for r2 in self.rows_with(entering) {
            if r2 == r {
                continue;
            }
            let k = row_get(&self.rows[r2], entering).expect("filtered").clone();
            let mut dst = std::mem::take(&mut self.rows[r2]);
            let cols = &mut self.cols;
            axpy(&mut dst, &k, &new_row, |w| cols[w].push(r2));
            let pos = dst.binary_search_by_key(&entering, |e| e.0).expect("entering present");
            dst.remove(pos);
            self.rows[r2] = dst;
        }
        self.rows[r] = new_row;
        self.basic[r] = entering;
        self.row_of[entering] = Some(r);
        self.row_of[leaving] = None;
        Ok(())
    }

    fn pivot_and_update(&mut self, r: usize, entering: usize, target: Rat) -> Result<(), LpError> {
        let b = self.basic[r];
        let a = row_get(&self.rows[r], entering).expect("entering in row").clone();
        let theta = (&target - &self.val[b]) / &a;
        let new_entering = &self.val[entering] + &theta;
        self.update(entering, new_entering);
        self.pivot(r, entering)
    }

    fn below(&self, v: usize) -> bool {
        self.lo[v].as_ref().is_some_and(|l| self.val[v] < *l)
    }

    fn above(&self, v: usize) -> bool {
        self.hi[v].as_ref().is_some_and(|h| self.val[v] > *h)
    }

    fn can_increase(&self, v: usize) -> bool {
        self.hi[v].as_ref().is_none_or(|h| self.val[v] < *h)
    }

    fn can_decrease(&self, v: usize) -> bool {
        self.lo[v].as_ref().is_none_or(|l| self.val[v] > *l)
    }

    /// Restores feasibility of all bounds. Returns `false` when infeasible.
    pub fn check(&mut self) -> Result<bool, LpError> {
        self.call_start = self.pivots;
        for v in 0..self.lo.len() {
            if let (Some(l), Some(h)) = (&self.lo[v], &self.hi[v]) {
                if l > h {
                    return Ok(false);
                }
            }
        }
        loop {
            let viol = (0..self.rows.len())
                .map(|r| (self.basic[r], r))
                .filter(|&(b, _)| self.below(b) || self.above(b))
                .min();
            let Some((b, r)) = viol else { return Ok(true) };
            let raise = self.below(b);
            let eligible = self.rows[r].iter().filter(|(w, c)| {
                if raise == c.is_positive() {
                    self.can_increase(*w)
                } else {
                    self.can_decrease(*w)
                }
            });
            // Sparsest column first to limit fill-in; Bland's smallest index
            // once the call has pivoted enough to risk cycling.
            let entering = if self.pivots - self.call_start < GREEDY_PIVOTS {
                eligible.min_by_key(|(w, _)| (self.cols[*w].len(), *w)).map(|(w, _)| *w)
            } else {
                eligible.map(|(w, _)| *w).next()
            };
            let Some(j) = entering else { return Ok(false) };
            let target = if raise { self.lo[b].clone() } else { self.hi[b].clone() }.expect("violated bound exists");
            self.pivot_and_update(r, j, target)?;
        }
    }

    /// Minimizes `obj` from a feasible basis. Returns `Unbounded` or
    /// `Feasible` (optimal); requires a prior successful [`Simplex::check`].
    pub fn minimize(&mut self, obj: &[(usize, Rat)]) -> Result<LpStatus, LpError> {
        self.call_start = self.pivots;
        let z = self.add_row(obj);
        let zr = self.row_of[z].expect("new row is basic");
        let status = loop {
            // Entering: smallest index that improves z.
            let entering = self.rows[zr]
                .iter()
                .find(|(w, d)| {
                    if d.is_negative() {
                        self.can_increase(*w)
                    } else {
                        self.can_decrease(*w)
                    }
                })
                .map(|(w, d)| (*w, d.is_negative()));
            let Some((j, up)) = entering else { break LpStatus::Feasible };
            // Ratio test: limit from j's own box, then from each basic.
            let mut best: Option<(Rat, usize, Option<usize>)> = None;
            let own = if up {
                self.hi[j].as_ref().map(|h| h - &self.val[j])
            } else {
                self.lo[j].as_ref().map(|l| &self.val[j] - l)
            };
            if let Some(t) = own {
                best = Some((t, j, None));
            }
            for r in self.rows_with(j) {
                if r == zr {
                    continue;
                }
                let b = self.basic[r];
                let a = row_get(&self.rows[r], j).expect("filtered");
                let rises = a.is_positive() == up;
                let limit = if rises {
                    self.hi[b].as_ref().map(|h| (h - &self.val[b]) / a.abs())
                } else {
                    self.lo[b].as_ref().map(|l| (&self.val[b] - l) / a.abs())
                };
                if let Some(t) = limit {
                    let better = match &best {
                        None => true,
                        Some((bt, bv, _)) => t < *bt || (t == *bt && b < *bv),
                    };
                    if better {
                        best = Some((t, b, Some(r)));
                    }
                }
            }
            match best {
                None => break LpStatus::Unbounded,
                Some((t, _, None)) => {
                    let x = if up { &self.val[j] + &t } else { &self.val[j] - &t };
                    self.update(j, x);
                    self.count_pivot()?;
                }
                Some((_, b, Some(r))) => {
                    let a = row_get(&self.rows[r], j).expect("filtered");
                    let rises = a.is_positive() == up;
                    let target = if rises { self.hi[b].clone() } else { self.lo[b].clone() }.expect("limit came from a bound");
                    self.pivot_and_update(r, j, target)?;
                }
            }
        };
        // Leave the objective row in place but unconstrained.
        Ok(status)
    }
}

// ---------------------------------------------------------------------------
// Standalone programs

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LpVar {
    pub name: String,
    pub lower: Option<Rat>,
    pub upper: Option<Rat>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LpRow {
    pub coeffs: Vec<(usize, Rat)>,
    pub op: RelOp,
    pub rhs: Rat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Objective {
    pub sense: Sense,
    pub coeffs: Vec<(usize, Rat)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LinProgram {
    pub vars: Vec<LpVar>,
    pub rows: Vec<LpRow>,
    pub objective: Option<Objective>,
}

impl LinProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<Rat>, upper: Option<Rat>) -> usize {
        self.vars.push(LpVar {
            name: name.into(),
            lower,
            upper,
        });
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, Rat)>, op: RelOp, rhs: Rat) {
        self.rows.push(LpRow { coeffs, op, rhs });
    }

    /// Whether `point` satisfies every box and row exactly.
    pub fn satisfied_by(&self, point: &[Rat]) -> bool {
        point.len() == self.vars.len()
            && self.vars.iter().zip(point).all(|(v, x)| {
                v.lower.as_ref().is_none_or(|l| x >= l) && v.upper.as_ref().is_none_or(|u| x <= u)
            })
            && self.rows.iter().all(|r| {
                let lhs: Rat = r.coeffs.iter().map(|(v, c)| c * &point[*v]).sum();
                r.op.holds(&lhs, &r.rhs)
            })
    }

    fn load(&self) -> Result<Simplex, LpError> {
        let mut s = Simplex::new();
        for (i, v) in self.vars.iter().enumerate() {
            if let (Some(l), Some(u)) = (&v.lower, &v.upper) {
                if l > u {
                    return Err(LpError::EmptyBox(i));
                }
            }
            s.add_var(v.lower.clone(), v.upper.clone());
        }
        for (i, r) in self.rows.iter().enumerate() {
            if let Some((var, _)) = r.coeffs.iter().find(|(v, _)| *v >= self.vars.len()) {
                return Err(LpError::UnknownVar { row: i, var: *var });
            }
            let slack = s.add_row(&r.coeffs);
            let (lo, hi) = match r.op {
                RelOp::Le => (None, Some(r.rhs.clone())),
                RelOp::Ge => (Some(r.rhs.clone()), None),
                RelOp::Eq => (Some(r.rhs.clone()), Some(r.rhs.clone())),
            };
            s.set_bounds(slack, lo, hi);
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LpResult {
    pub status: LpStatus,
    pub point: Option<Vec<Rat>>,
    pub objective_value: Option<Rat>,
}

impl LpResult {
    pub fn is_feasible(&self) -> bool {
        self.status == LpStatus::Feasible
    }
}

/// Feasibility check; a feasible result carries an exact point.
pub fn lp_feasible(lp: &LinProgram) -> Result<LpResult, LpError> {
    let mut s = lp.load()?;
    if !s.check()? {
        return Ok(LpResult {
            status: LpStatus::Infeasible,
            point: None,
            objective_value: None,
        });
    }
    let point = s.values()[..lp.vars.len()].to_vec();
    debug_assert!(lp.satisfied_by(&point));
    Ok(LpResult {
        status: LpStatus::Feasible,
        point: Some(point),
        objective_value: None,
    })
}

/// Optimizes the objective; `Feasible` means optimal.
pub fn lp_optimize(lp: &LinProgram) -> Result<LpResult, LpError> {
    let obj = lp.objective.as_ref().ok_or(LpError::NoObjective)?;
    let mut s = lp.load()?;
    if !s.check()? {
        return Ok(LpResult {
            status: LpStatus::Infeasible,
            point: None,
            objective_value: None,
        });
    }
    let coeffs: Vec<(usize, Rat)> = match obj.sense {
        Sense::Min => obj.coeffs.clone(),
        Sense::Max => obj.coeffs.iter().map(|(v, c)| (*v, -c)).collect(),
    };
    let status = s.minimize(&coeffs)?;
    if status == LpStatus::Unbounded {
        return Ok(LpResult {
            status,
            point: None,
            objective_value: None,
        });
    }
    let point = s.values()[..lp.vars.len()].to_vec();
    let value: Rat = obj.coeffs.iter().map(|(v, c)| c * &point[*v]).sum();
    Ok(LpResult {
        status,
        point: Some(point),
        objective_value: Some(value),
    })
}

// ---------------------------------------------------------------------------
// CPLEX LP text format

/// Decimal rendering; exact when the denominator has only factors 2 and 5.
pub fn decimal(r: &Rat) -> String {
    let mut d = r.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    let two = num_bigint::BigInt::from(2);
    let five = num_bigint::BigInt::from(5);
    let zero = num_bigint::BigInt::from(0);
    while &d % &two == zero {
        d /= &two;
        twos += 1;
    }
    while &d % &five == zero {
        d /= &five;
        fives += 1;
    }
    if d == num_bigint::BigInt::from(1) {
        let places = twos.max(fives);
        if places == 0 {
            return r.numer().to_string();
        }
        let scaled = r * &Rat::from_bigint(num_bigint::BigInt::from(10).pow(places));
        let n = scaled.numer();
        let neg = n < zero;
        let digits = n.magnitude().to_string();
        let digits = format!("{digits:0>width$}", width = places as usize + 1);
        let (int, frac) = digits.split_at(digits.len() - places as usize);
        let frac = frac.trim_end_matches('0');
        let sign = if neg { "-" } else { "" };
        if frac.is_empty() {
            format!("{sign}{int}")
        } else {
            format!("{sign}{int}.{frac}")
        }
    } else {
        format!("{:.17e}", r.to_f64())
    }
}

/// Scales a row by the lcm of its denominators so coefficients are integers.
fn integral_row(coeffs: &[(usize, Rat)], rhs: &Rat) -> (Vec<(usize, Rat)>, Rat) {
    let l = Rat::from_bigint(Rat::lcm_denominators(coeffs.iter().map(|(_, c)| c).chain([rhs])));
    (coeffs.iter().map(|(v, c)| (*v, c * &l)).collect(), rhs * &l)
}

fn lp_name(s: &str) -> String {
    let mut out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]{}".contains(c) { c } else { '_' })
        .collect();
    if out.starts_with(|c: char| c.is_ascii_digit() || c == '.') || out.is_empty() {
        out.insert(0, '_');
    }
    out
}

fn lp_expr(coeffs: &[(usize, Rat)], names: &[String]) -> String {
    if coeffs.is_empty() {
        return "0 x_zero_".to_string();
    }
    let mut s = String::new();
    for (i, (v, c)) in coeffs.iter().enumerate() {
        let mag = decimal(&c.abs());
        let sign = if c.is_negative() { "-" } else if i > 0 { "+" } else { "" };
        if i > 0 {
            s.push(' ');
        }
        s.push_str(sign);
        if !sign.is_empty() {
            s.push(' ');
        }
        if mag != "1" {
            s.push_str(&mag);
            s.push(' ');
        }
        s.push_str(&names[*v]);
    }
    s
}

/// Renders a program with optional integrality marks in CPLEX LP format.
/// `indicators` are `(row, guard var, guard value)` triples written as
/// indicator constraints.
pub fn to_cplex_lp(lp: &LinProgram, integer: &[bool], indicators: &[(LpRow, usize, bool)]) -> String {
    let names: Vec<String> = lp.vars.iter().map(|v| lp_name(&v.name)).collect();
    let mut s = String::new();
    let op = |o: RelOp| match o {
        RelOp::Le => "<=",
        RelOp::Ge => ">=",
        RelOp::Eq => "=",
    };
    match &lp.objective {
        Some(o) => {
            let _ = writeln!(s, "{}", if o.sense == Sense::Min { "Minimize" } else { "Maximize" });
            let _ = writeln!(s, " obj: {}", lp_expr(&o.coeffs, &names));
        }
        None => {
            let _ = writeln!(s, "Minimize\n obj: 0 x_zero_");
        }
    }
    let _ = writeln!(s, "Subject To");
    for (i, r) in lp.rows.iter().enumerate() {
        let (c, rhs) = integral_row(&r.coeffs, &r.rhs);
        let _ = writeln!(s, " r{i}: {} {} {}", lp_expr(&c, &names), op(r.op), decimal(&rhs));
    }
    for (i, (r, g, val)) in indicators.iter().enumerate() {
        let (c, rhs) = integral_row(&r.coeffs, &r.rhs);
        let _ = writeln!(
            s,
            " ind{i}: {} = {} -> {} {} {}",
            names[*g],
            u8::from(*val),
            lp_expr(&c, &names),
            op(r.op),
            decimal(&rhs)
        );
    }
    let _ = writeln!(s, "Bounds");
    let _ = writeln!(s, " x_zero_ = 0");
    for (i, v) in lp.vars.iter().enumerate() {
        let n = &names[i];
        match (&v.lower, &v.upper) {
            (None, None) => {
                let _ = writeln!(s, " {n} free");
            }
            (Some(l), None) => {
                let _ = writeln!(s, " {n} >= {}", decimal(l));
            }
            (None, Some(u)) => {
                let _ = writeln!(s, " -inf <= {n} <= {}", decimal(u));
            }
            (Some(l), Some(u)) => {
                let _ = writeln!(s, " {} <= {n} <= {}", decimal(l), decimal(u));
            }
        }
    }
    let generals: Vec<&String> = names.iter().zip(integer).filter(|(_, b)| **b).map(|(n, _)| n).collect();
    if !generals.is_empty() {
        let _ = writeln!(s, "General");
        for chunk in generals.chunks(8) {
            let _ = writeln!(s, " {}", chunk.iter().map(|n| n.as_str()).collect::<Vec<_>>().join(" "));
        }
    }
    let _ = writeln!(s, "End");
    s
}
