//! Grounded planning problems: model, document format, validation and
//! serial action semantics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rational::Rat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Boolean,
    Integer,
    Real,
}

impl VarKind {
    pub fn is_numeric(self) -> bool {
        self != VarKind::Boolean
    }

    /// Boolean and integer variables only take integral values.
    pub fn is_integral(self) -> bool {
        self != VarKind::Real
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateVariable {
    pub id: usize,
    pub name: String,
    pub kind: VarKind,
    pub lower: Option<Rat>,
    pub upper: Option<Rat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelOp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl RelOp {
    pub fn holds(self, lhs: &Rat, rhs: &Rat) -> bool {
        match self {
            RelOp::Le => lhs <= rhs,
            RelOp::Ge => lhs >= rhs,
            RelOp::Eq => lhs == rhs,
        }
    }

    /// The operator obtained by multiplying both sides by -1.
    pub fn flipped(self) -> RelOp {
        match self {
            RelOp::Le => RelOp::Ge,
            RelOp::Ge => RelOp::Le,
            RelOp::Eq => RelOp::Eq,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Le => "<=",
            RelOp::Ge => ">=",
            RelOp::Eq => "=",
        }
    }
}

/// Value of a state variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Bool(bool),
    Num(Rat),
}

impl Value {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            Value::Num(_) => None,
        }
    }

    pub fn as_num(&self) -> Option<&Rat> {
        match self {
            Value::Num(r) => Some(r),
            Value::Bool(_) => None,
        }
    }

    /// Numeric view: booleans count as 0/1.
    pub fn to_rat(&self) -> Rat {
        match self {
            Value::Bool(b) => Rat::from_int(*b as i64),
            Value::Num(r) => r.clone(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Num(r) => write!(f, "{r}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Bool(b) => s.serialize_bool(*b),
            Value::Num(r) => r.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bool(bool),
            Num(Rat),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Bool(b) => Value::Bool(b),
            Raw::Num(r) => Value::Num(r),
        })
    }
}

/// A precondition, goal condition or global state constraint.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Condition {
    Lit {
        var: usize,
        value: bool,
    },
    /// `sum(coeff * var) op rhs`; terms sorted by variable id.
    Rel {
        terms: Vec<(usize, Rat)>,
        op: RelOp,
        rhs: Rat,
    },
}

impl Condition {
    pub fn lit(var: usize, value: bool) -> Condition {
        Condition::Lit { var, value }
    }

    /// Builds a relation, merging repeated variables and dropping zero terms.
    pub fn rel(terms: impl IntoIterator<Item = (usize, Rat)>, op: RelOp, rhs: Rat) -> Condition {
        let mut merged: BTreeMap<usize, Rat> = BTreeMap::new();
        for (v, c) in terms {
            *merged.entry(v).or_default() += c;
        }
        let terms = merged.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        Condition::Rel { terms, op, rhs }
    }

    pub fn vars(&self) -> Vec<usize> {
        match self {
            Condition::Lit { var, .. } => vec![*var],
            Condition::Rel { terms, .. } => terms.iter().map(|(v, _)| *v).collect(),
        }
    }

    pub fn holds(&self, state: &[Value]) -> bool {
        match self {
            Condition::Lit { var, value } => state[*var].as_bool() == Some(*value),
            Condition::Rel { terms, op, rhs } => {
                let lhs: Rat = terms.iter().map(|(v, c)| c * state[*v].to_rat()).sum();
                op.holds(&lhs, rhs)
            }
        }
    }

    /// Human-readable rendering with variable names.
    pub fn display<'a>(&'a self, p: &'a Problem) -> impl fmt::Display + 'a {
        CondDisplay(self, p)
    }
}

struct CondDisplay<'a>(&'a Condition, &'a Problem);

impl fmt::Display for CondDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |v: usize| {
            self.1
                .vars
                .get(v)
                .map(|x| x.name.as_str())
                .unwrap_or("?")
        };
        match self.0 {
            Condition::Lit { var, value: true } => write!(f, "{}", name(*var)),
            Condition::Lit { var, value: false } => write!(f, "not {}", name(*var)),
            Condition::Rel { terms, op, rhs } => {
                for (i, (v, c)) in terms.iter().enumerate() {
                    let (sign, mag) = if c.is_negative() { ("-", c.abs()) } else { ("+", c.clone()) };
                    match (i, sign) {
                        (0, "-") => write!(f, "-")?,
                        (0, _) => {}
                        (_, s) => write!(f, " {s} ")?,
                    }
                    if mag.is_one() {
                        write!(f, "{}", name(*v))?;
                    } else {
                        write!(f, "{mag}*{}", name(*v))?;
                    }
                }
                write!(f, " {} {rhs}", op.symbol())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Effect {
    Assign { var: usize, value: bool },
    Delta { var: usize, delta: Rat },
}

impl Effect {
    pub fn var(&self) -> usize {
        match self {
            Effect::Assign { var, .. } | Effect::Delta { var, .. } => *var,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub name: String,
    pub pre: Vec<Condition>,
    pub eff: Vec<Effect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Problem {
    pub vars: Vec<StateVariable>,
    pub actions: Vec<Action>,
    pub init: Vec<Value>,
    pub goal: Vec<Condition>,
    /// State constraints that must hold in every visited state.
    pub constraints: Vec<Condition>,
}

impl Problem {
    pub fn var_id(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn action_id(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    /// True when the state respects explicit bounds and global constraints.
    pub fn admissible(&self, state: &[Value]) -> bool {
        self.vars.iter().zip(state).all(|(v, x)| match x {
            Value::Num(r) => {
                v.lower.as_ref().is_none_or(|l| r >= l) && v.upper.as_ref().is_none_or(|u| r <= u)
            }
            Value::Bool(_) => true,
        }) && self.constraints.iter().all(|c| c.holds(state))
    }

    /// Applies action `a` ignoring its preconditions.
    pub fn apply_effects(&self, a: usize, state: &[Value]) -> Vec<Value> {
        let mut next = state.to_vec();
        for e in &self.actions[a].eff {
            match e {
                Effect::Assign { var, value } => next[*var] = Value::Bool(*value),
                Effect::Delta { var, delta } => {
                    next[*var] = Value::Num(state[*var].to_rat() + delta);
                }
            }
        }
        next
    }

    /// Serial successor: `None` when the precondition fails or the result
    /// leaves the admissible region.
    pub fn successor(&self, a: usize, state: &[Value]) -> Option<Vec<Value>> {
        if !self.actions[a].pre.iter().all(|c| c.holds(state)) {
            return None;
        }
        let next = self.apply_effects(a, state);
        self.admissible(&next).then_some(next)
    }

    pub fn goal_holds(&self, state: &[Value]) -> bool {
        self.goal.iter().all(|c| c.holds(state))
    }

    /// Copy of the problem with a different goal.
    pub fn with_goal(&self, goal: Vec<Condition>) -> Problem {
        Problem { goal, ..self.clone() }
    }
}

// ---------------------------------------------------------------------------
// Validation

/// One violated invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Diagnostic {
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

fn diag(entity: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        entity: entity.into(),
        message: message.into(),
    }
}

fn check_condition(p: &Problem, c: &Condition, ctx: &str, out: &mut Vec<Diagnostic>) {
    match c {
        Condition::Lit { var, .. } => match p.vars.get(*var) {
            None => out.push(diag(ctx, format!("unknown variable #{var}"))),
            Some(v) if v.kind != VarKind::Boolean => out.push(diag(
                ctx,
                format!("literal on numeric variable `{}`", v.name),
            )),
            _ => {}
        },
        Condition::Rel { terms, .. } => {
            if terms.is_empty() {
                out.push(diag(ctx, "relation without terms"));
            }
            let mut seen = HashSet::new();
            for (v, coeff) in terms {
                match p.vars.get(*v) {
                    None => out.push(diag(ctx, format!("unknown variable #{v}"))),
                    Some(var) => {
                        if var.kind == VarKind::Boolean {
                            out.push(diag(ctx, format!("relation on boolean variable `{}`", var.name)));
                        }
                        if coeff.is_zero() {
                            out.push(diag(ctx, format!("zero coefficient on `{}`", var.name)));
                        }
                        if !seen.insert(*v) {
                            out.push(diag(ctx, format!("repeated term on `{}`", var.name)));
                        }
                    }
                }
            }
        }
    }
}

/// Lists every violated model invariant; empty iff the problem is valid.
pub fn validate_problem(p: &Problem) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for (i, v) in p.vars.iter().enumerate() {
        let ent = format!("variable `{}`", v.name);
        if v.id != i {
            out.push(diag(&ent, format!("id {} does not match position {i}", v.id)));
        }
        if !names.insert(v.name.as_str()) {
            out.push(diag(&ent, "duplicate variable name"));
        }
        if v.kind == VarKind::Boolean && (v.lower.is_some() || v.upper.is_some()) {
            out.push(diag(&ent, "boolean variable with explicit bounds"));
        }
        if let (Some(l), Some(u)) = (&v.lower, &v.upper) {
            if l > u {
                out.push(diag(&ent, format!("lower bound {l} exceeds upper bound {u}")));
            }
        }
    }

    let mut action_names = HashSet::new();
    for a in &p.actions {
        let ent = format!("action `{}`", a.name);
        if !action_names.insert(a.name.as_str()) {
            out.push(diag(&ent, "duplicate action name"));
        }
        let mut lit_vars = HashSet::new();
        for c in &a.pre {
            check_condition(p, c, &ent, &mut out);
            if let Condition::Lit { var, .. } = c {
                if !lit_vars.insert(*var) {
                    out.push(diag(&ent, format!("repeated precondition literal on variable #{var}")));
                }
            }
        }
        let mut eff_vars = HashSet::new();
        for e in &a.eff {
            let var = e.var();
            let Some(v) = p.vars.get(var) else {
                out.push(diag(&ent, format!("effect on unknown variable #{var}")));
                continue;
            };
            if !eff_vars.insert(var) {
                out.push(diag(&ent, format!("duplicate effect on `{}`", v.name)));
            }
            match e {
                Effect::Assign { .. } if v.kind != VarKind::Boolean => {
                    out.push(diag(&ent, format!("boolean assignment to numeric `{}`", v.name)))
                }
                Effect::Delta { delta, .. } => {
                    if v.kind == VarKind::Boolean {
                        out.push(diag(&ent, format!("numeric effect on boolean `{}`", v.name)));
                    }
                    if delta.is_zero() {
                        out.push(diag(&ent, format!("zero delta on `{}`", v.name)));
                    }
                    if v.kind == VarKind::Integer && !delta.is_integer() {
                        out.push(diag(&ent, format!("fractional delta on integer `{}`", v.name)));
                    }
                }
                _ => {}
            }
        }
    }

    for (i, c) in p.goal.iter().enumerate() {
        check_condition(p, c, &format!("goal condition {i}"), &mut out);
    }
    for (i, c) in p.constraints.iter().enumerate() {
        check_condition(p, c, &format!("constraint {i}"), &mut out);
    }

    if p.init.len() != p.vars.len() {
        out.push(diag(
            "init",
            format!("{} values for {} variables", p.init.len(), p.vars.len()),
        ));
    } else {
        for (v, x) in p.vars.iter().zip(&p.init) {
            let ent = format!("init `{}`", v.name);
            match (v.kind, x) {
                (VarKind::Boolean, Value::Bool(_)) => {}
                (VarKind::Boolean, Value::Num(_)) => out.push(diag(&ent, "number for boolean variable")),
                (_, Value::Bool(_)) => out.push(diag(&ent, "boolean for numeric variable")),
                (kind, Value::Num(r)) => {
                    if kind == VarKind::Integer && !r.is_integer() {
                        out.push(diag(&ent, format!("fractional value {r} for integer variable")));
                    }
                    if v.lower.as_ref().is_some_and(|l| r < l) || v.upper.as_ref().is_some_and(|u| r > u) {
                        out.push(diag(&ent, format!("value {r} outside bounds")));
                    }
                }
            }
        }
        let shape_ok = out.iter().all(|d| !d.entity.starts_with("constraint"));
        if shape_ok {
            for (i, c) in p.constraints.iter().enumerate() {
                if !c.holds(&p.init) {
                    out.push(diag(format!("constraint {i}"), "violated by the initial state"));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Document format

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("parse error at `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid problem: {}", join_diags(.0))]
    Invalid(Vec<Diagnostic>),
}

fn join_diags(d: &[Diagnostic]) -> String {
    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawVar {
    pub name: String,
    pub kind: VarKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Rat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Rat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawRel {
    pub terms: Vec<(Rat, String)>,
    pub op: RelOp,
    pub rhs: Rat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub(crate) enum RawCond {
    Lit((String, bool)),
    Rel(RawRel),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub(crate) enum RawEffect {
    Set((String, bool)),
    Add((String, Rat)),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawAction {
    pub name: String,
    #[serde(default)]
    pub pre: Vec<RawCond>,
    #[serde(default)]
    pub eff: Vec<RawEffect>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawProblem {
    pub vars: Vec<RawVar>,
    pub actions: Vec<RawAction>,
    pub init: BTreeMap<String, Value>,
    pub goal: Vec<RawCond>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<RawCond>,
}

/// Resolves variable names against a problem's declarations.
pub(crate) struct Names<'a> {
    ids: HashMap<&'a str, usize>,
}

impl<'a> Names<'a> {
    pub fn new(vars: &'a [StateVariable]) -> Self {
        Names {
            ids: vars.iter().map(|v| (v.name.as_str(), v.id)).collect(),
        }
    }

    fn id(&self, name: &str, ctx: &str, out: &mut Vec<Diagnostic>) -> usize {
        match self.ids.get(name) {
            Some(&i) => i,
            None => {
                out.push(diag(ctx, format!("unknown variable `{name}`")));
                usize::MAX
            }
        }
    }

    pub fn condition(&self, c: &RawCond, ctx: &str, out: &mut Vec<Diagnostic>) -> Condition {
        match c {
            RawCond::Lit((n, b)) => Condition::Lit {
                var: self.id(n, ctx, out),
                value: *b,
            },
            RawCond::Rel(r) => {
                let mut terms: Vec<(usize, Rat)> = r
                    .terms
                    .iter()
                    .map(|(c, n)| (self.id(n, ctx, out), c.clone()))
                    .collect();
                // Keep repeats so validation can report them.
                terms.sort_by_key(|(v, _)| *v);
                Condition::Rel {
                    terms,
                    op: r.op,
                    rhs: r.rhs.clone(),
                }
            }
        }
    }
}

pub(crate) fn raw_condition(c: &Condition, vars: &[StateVariable]) -> RawCond {
    match c {
        Condition::Lit { var, value } => RawCond::Lit((vars[*var].name.clone(), *value)),
        Condition::Rel { terms, op, rhs } => RawCond::Rel(RawRel {
            terms: terms
                .iter()
                .map(|(v, c)| (c.clone(), vars[*v].name.clone()))
                .collect(),
            op: *op,
            rhs: rhs.clone(),
        }),
    }
}

fn parse_error(path: String, e: &serde_json::Error) -> ProblemError {
    ProblemError::Parse {
        path,
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Deserializes `text` into `T`, reporting the field path on failure.
pub(crate) fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ProblemError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        parse_error(path, e.inner())
    })?;
    Ok(value)
}

impl RawProblem {
    fn resolve(&self) -> Result<Problem, ProblemError> {
        let mut out = Vec::new();
        let vars: Vec<StateVariable> = self
            .vars
            .iter()
            .enumerate()
            .map(|(id, v)| StateVariable {
                id,
                name: v.name.clone(),
                kind: v.kind,
                lower: v.lower.clone(),
                upper: v.upper.clone(),
            })
            .collect();
        let names = Names::new(&vars);
        let actions = self
            .actions
            .iter()
            .map(|a| {
                let ctx = format!("action `{}`", a.name);
                Action {
                    name: a.name.clone(),
                    pre: a.pre.iter().map(|c| names.condition(c, &ctx, &mut out)).collect(),
                    eff: a
                        .eff
                        .iter()
                        .map(|e| match e {
                            RawEffect::Set((n, b)) => Effect::Assign {
                                var: names.id(n, &ctx, &mut out),
                                value: *b,
                            },
                            RawEffect::Add((n, d)) => Effect::Delta {
                                var: names.id(n, &ctx, &mut out),
                                delta: d.clone(),
                            },
                        })
                        .collect(),
                }
            })
            .collect();
        let goal = self
            .goal
            .iter()
            .enumerate()
            .map(|(i, c)| names.condition(c, &format!("goal condition {i}"), &mut out))
            .collect();
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(i, c)| names.condition(c, &format!("constraint {i}"), &mut out))
            .collect();
        for name in self.init.keys() {
            if !names.ids.contains_key(name.as_str()) {
                out.push(diag("init", format!("unknown variable `{name}`")));
            }
        }
        let mut init = Vec::with_capacity(vars.len());
        for v in &vars {
            match self.init.get(&v.name) {
                Some(x) => init.push(x.clone()),
                None => {
                    out.push(diag(format!("init `{}`", v.name), "missing initial value"));
                    init.push(Value::Bool(false));
                }
            }
        }
        if !out.is_empty() {
            return Err(ProblemError::Invalid(out));
        }
        Ok(Problem {
            vars,
            actions,
            init,
            goal,
            constraints,
        })
    }
}

/// Parses and validates a problem document.
pub fn parse_problem(text: &str) -> Result<Problem, ProblemError> {
    let raw: RawProblem = from_json(text)?;
    let p = raw.resolve()?;
    let diags = validate_problem(&p);
    if diags.is_empty() {
        Ok(p)
    } else {
        Err(ProblemError::Invalid(diags))
    }
}

pub(crate) fn to_raw(p: &Problem) -> RawProblem {
    RawProblem {
        vars: p
            .vars
            .iter()
            .map(|v| RawVar {
                name: v.name.clone(),
                kind: v.kind,
                lower: v.lower.clone(),
                upper: v.upper.clone(),
            })
            .collect(),
        actions: p
            .actions
            .iter()
            .map(|a| RawAction {
                name: a.name.clone(),
                pre: a.pre.iter().map(|c| raw_condition(c, &p.vars)).collect(),
                eff: a
                    .eff
                    .iter()
                    .map(|e| match e {
                        Effect::Assign { var, value } => RawEffect::Set((p.vars[*var].name.clone(), *value)),
                        Effect::Delta { var, delta } => RawEffect::Add((p.vars[*var].name.clone(), delta.clone())),
                    })
                    .collect(),
            })
            .collect(),
        init: p
            .vars
            .iter()
            .zip(&p.init)
            .map(|(v, x)| (v.name.clone(), x.clone()))
            .collect(),
        goal: p.goal.iter().map(|c| raw_condition(c, &p.vars)).collect(),
        constraints: p.constraints.iter().map(|c| raw_condition(c, &p.vars)).collect(),
    }
}

/// Canonical pretty-printed document for `p`.
pub fn serialize_problem(p: &Problem) -> String {
    let mut s = serde_json::to_string_pretty(&to_raw(p)).expect("problem serializes");
    s.push('\n');
    s
}

/// Parses a single condition written in the document notation.
pub fn parse_condition(p: &Problem, value: &serde_json::Value) -> Result<Condition, ProblemError> {
    let raw: RawCond = serde_json::from_value(value.clone()).map_err(|e| parse_error(String::new(), &e))?;
    let mut out = Vec::new();
    let c = Names::new(&p.vars).condition(&raw, "condition", &mut out);
    if out.is_empty() {
        let probe = Problem {
            goal: vec![c.clone()],
            ..p.clone()
        };
        out = validate_problem(&probe)
            .into_iter()
            .filter(|d| d.entity.starts_with("goal condition"))
            .collect();
    }
    if out.is_empty() {
        Ok(c)
    } else {
        Err(ProblemError::Invalid(out))
    }
}

/// Document notation for a condition.
pub fn condition_json(p: &Problem, c: &Condition) -> serde_json::Value {
    serde_json::to_value(raw_condition(c, &p.vars)).expect("condition serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"vars":[{"name":"p","kind":"boolean"}],"actions":[],"init":{"p":true},"goal":[{"lit":["p",true]}]}"#;

    #[test]
    fn minimal_document() {
        let p = parse_problem(MINIMAL).unwrap();
        assert_eq!(p.vars.len(), 1);
        assert!(p.actions.is_empty());
        assert_eq!(p.goal, vec![Condition::lit(0, true)]);
        let text = serialize_problem(&p);
        assert_eq!(parse_problem(&text).unwrap(), p);
        assert_eq!(serialize_problem(&parse_problem(&text).unwrap()), text);
    }

    #[test]
    fn unknown_goal_variable_is_named() {
        let doc = MINIMAL.replace(r#""goal":[{"lit":["p",true]}]"#, r#""goal":[{"lit":["q",true]}]"#);
        match parse_problem(&doc) {
            Err(ProblemError::Invalid(d)) => assert!(d.iter().any(|x| x.message.contains("`q`"))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_path() {
        let doc = MINIMAL.replace(r#""kind":"boolean""#, r#""kind":"boolean","extra":1"#);
        match parse_problem(&doc) {
            Err(ProblemError::Parse { path, .. }) => assert!(path.starts_with("vars[0]"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_init() {
        let doc = r#"{"vars":[{"name":"c","kind":"integer","lower":0,"upper":2}],"actions":[],"init":{"c":5},"goal":[]}"#;
        match parse_problem(doc) {
            Err(ProblemError::Invalid(d)) => {
                assert_eq!(d.len(), 1);
                assert!(d[0].message.contains("outside bounds"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rational_strings_and_relations() {
        let doc = r#"{"vars":[{"name":"x","kind":"real","lower":"-1/2","upper":3}],
            "actions":[{"name":"a","pre":[{"rel":{"terms":[[2,"x"]],"op":"<=","rhs":"5/2"}}],"eff":[{"add":["x","1/3"]}]}],
            "init":{"x":0},"goal":[{"rel":{"terms":[[1,"x"]],"op":">=","rhs":1}}]}"#;
        let p = parse_problem(doc).unwrap();
        assert_eq!(p.vars[0].lower, Some(Rat::new(-1, 2)));
        let s = p.successor(0, &p.init).unwrap();
        assert_eq!(s[0], Value::Num(Rat::new(1, 3)));
        assert_eq!(parse_problem(&serialize_problem(&p)).unwrap(), p);
    }
}
