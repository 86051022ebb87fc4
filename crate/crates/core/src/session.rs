//! Sequential planning sessions: goal changes and constraint additions
//! applied to a live engine, with an append-only journal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use crate::planner::{Engine, PlanError, PlanOutcome, PlanReport, PlannerOptions};
use crate::problem::{
    condition_json, parse_condition, parse_problem, serialize_problem, Condition, Problem, ProblemError, RelOp, Value,
    VarKind,
};
use crate::rational::Rat;
use crate::relax::{GoalStatus, GroupKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Update {
    /// Goal conditions at `del` are removed, then `add` is appended.
    GoalChange { add: Vec<Condition>, del: Vec<usize> },
    AddConstraints(Vec<Condition>),
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("goal index {index} out of range for a goal of {len} conditions")]
    BadIndex { index: usize, len: usize },
    #[error("constraint {0} does not hold in the initial state")]
    InitViolates(String),
    #[error("malformed update: {0}")]
    Malformed(String),
    #[error("journal: {0}")]
    Journal(String),
}

/// Update in the document notation.
pub fn update_json(p: &Problem, u: &Update) -> Json {
    match u {
        Update::GoalChange { add, del } => json!({
            "type": "goal_change",
            "add": add.iter().map(|c| condition_json(p, c)).collect::<Vec<_>>(),
            "del": del,
        }),
        Update::AddConstraints(cs) => json!({
            "type": "add_constraints",
            "constraints": cs.iter().map(|c| condition_json(p, c)).collect::<Vec<_>>(),
        }),
    }
}

fn conditions(p: &Problem, v: Option<&Json>, field: &str) -> Result<Vec<Condition>, SessionError> {
    let Some(v) = v else { return Ok(Vec::new()) };
    let items = v.as_array().ok_or_else(|| SessionError::Malformed(format!("`{field}` must be a list")))?;
    Ok(items.iter().map(|c| parse_condition(p, c)).collect::<Result<_, _>>()?)
}

pub fn parse_update(p: &Problem, v: &Json) -> Result<Update, SessionError> {
    let obj = v.as_object().ok_or_else(|| SessionError::Malformed("expected an object".into()))?;
    let allowed: &[&str] = match obj.get("type").and_then(Json::as_str) {
        Some("goal_change") => &["type", "add", "del"],
        Some("add_constraints") => &["type", "constraints"],
        _ => return Err(SessionError::Malformed("`type` must be goal_change or add_constraints".into())),
    };
    if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(SessionError::Malformed(format!("unknown field `{k}`")));
    }
    if obj["type"] == "add_constraints" {
        return Ok(Update::AddConstraints(conditions(p, obj.get("constraints"), "constraints")?));
    }
    let del = match obj.get("del") {
        None => Vec::new(),
        Some(d) => serde_json::from_value(d.clone())
            .map_err(|_| SessionError::Malformed("`del` must be a list of goal indices".into()))?,
    };
    Ok(Update::GoalChange {
        add: conditions(p, obj.get("add"), "add")?,
        del,
    })
}

/// Outcome in the document notation, with explanation sets spelled out as
/// goal conditions.
pub fn outcome_json(p: &Problem, o: &PlanOutcome) -> Json {
    match o {
        PlanOutcome::Plan(plan) => json!({
            "status": "plan",
            "steps": plan.steps,
            "linearization": plan.linearization,
            "horizon": plan.horizon,
        }),
        PlanOutcome::Infeasible(e) => json!({
            "status": "infeasible",
            "method": e.method,
            "capped": e.capped,
            "explanations": e.goal_index_sets.iter().map(|set| json!({
                "goalIndices": set,
                "conditions": set.iter().map(|&i| condition_json(p, &p.goal[i])).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        }),
        PlanOutcome::Limit { detail } => json!({ "status": "limit", "detail": detail }),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JournalRecord {
    pub round: usize,
    pub kind: String,
    pub payload: Json,
    /// SHA-256 of the compact payload.
    pub digest: String,
}

impl JournalRecord {
    fn new(round: usize, kind: &str, payload: Json) -> Self {
        let digest = sha256_hex(payload.to_string().as_bytes());
        JournalRecord {
            round,
            kind: kind.to_string(),
            payload,
            digest,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub round: usize,
    pub engine: Engine,
    pub journal: Vec<JournalRecord>,
    pub last: Option<PlanReport>,
}

impl Session {
    pub fn create(id: impl Into<String>, p0: Problem, opts: PlannerOptions) -> Result<Session, SessionError> {
        let doc: Json = serde_json::from_str(&serialize_problem(&p0)).expect("serialized problems parse");
        let engine = Engine::new(p0, opts)?;
        Ok(Session {
            id: id.into(),
            round: 0,
            engine,
            journal: vec![JournalRecord::new(0, "create", doc)],
            last: None,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.engine.problem
    }

    /// Digest of the current problem and round.
    pub fn digest(&self) -> String {
        sha256_hex(format!("{}\n{}", self.round, serialize_problem(self.problem())).as_bytes())
    }

    /// Checks `u` against the current problem without changing anything.
    pub fn check_update(&self, u: &Update) -> Result<(), SessionError> {
        let p = self.problem();
        match u {
            Update::GoalChange { del, .. } => {
                if let Some(&index) = del.iter().find(|&&i| i >= p.goal.len()) {
                    return Err(SessionError::BadIndex {
                        index,
                        len: p.goal.len(),
                    });
                }
            }
            Update::AddConstraints(cs) => {
                if let Some(c) = cs.iter().find(|c| !c.holds(&p.init)) {
                    return Err(SessionError::InitViolates(condition_json(p, c).to_string()));
                }
            }
        }
        Ok(())
    }

    /// Applies `u` and starts the next round. A goal change keeps the net,
    /// relaxation, invariants, forward sets and solver store; added
    /// constraints trigger a full re-analysis and become assertions at
    /// every encoded step.
    pub fn apply_update(&mut self, u: &Update) -> Result<GoalStatus, SessionError> {
        self.check_update(u)?;
        let record = update_json(self.problem(), u);
        match u {
            Update::GoalChange { add, del } => {
                let goal: Vec<Condition> = self
                    .problem()
                    .goal
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !del.contains(i))
                    .map(|(_, c)| c.clone())
                    .chain(add.iter().cloned())
                    .collect();
                self.engine.set_goal(goal)?;
            }
            Update::AddConstraints(cs) => self.engine.add_constraints(cs)?,
        }
        self.round += 1;
        self.journal.push(JournalRecord::new(self.round, "update", record));
        Ok(self.engine.analysis.gate.status)
    }

    /// Plans for the current round, continuing from the deepest encoded step.
    pub fn solve_round(&mut self) -> Result<PlanReport, SessionError> {
        let from = self.engine.depth();
        let (outcome, h) = self.engine.solve_from(from)?;
        let report = self.engine.report(outcome, h);
        let payload = outcome_json(self.problem(), &report.outcome);
        self.journal.push(JournalRecord::new(self.round, "solve", payload));
        self.last = Some(report.clone());
        Ok(report)
    }

    pub fn journal_lines(&self) -> String {
        self.journal.iter().map(|r| r.to_line() + "\n").collect()
    }

    /// Rebuilds a session from its journal, re-running every solve. Fails if
    /// any record's digest or any solve status differs.
    pub fn replay(id: impl Into<String>, lines: &str, opts: PlannerOptions) -> Result<Session, SessionError> {
        let mut records = Vec::new();
        for (i, line) in lines.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let r: Json = serde_json::from_str(line).map_err(|e| SessionError::Journal(format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        let first = records.first().ok_or_else(|| SessionError::Journal("empty journal".into()))?;
        if first["kind"] != "create" {
            return Err(SessionError::Journal("first record must be a create record".into()));
        }
        let p0 = parse_problem(&first["payload"].to_string())?;
        let mut s = Session::create(id, p0, opts)?;
        for (i, r) in records.iter().enumerate().skip(1) {
            match r["kind"].as_str() {
                Some("update") => {
                    let u = parse_update(s.problem(), &r["payload"])?;
                    s.apply_update(&u)?;
                }
                Some("solve") => {
                    let report = s.solve_round()?;
                    if report.outcome.status() != r["payload"]["status"] {
                        return Err(SessionError::Journal(format!("line {}: outcome differs on replay", i + 1)));
                    }
                }
                _ => return Err(SessionError::Journal(format!("line {}: unknown record kind", i + 1))),
            }
            let ours = s.journal.last().expect("record appended");
            if r["kind"] != "solve" && Some(ours.digest.as_str()) != r["digest"].as_str() {
                return Err(SessionError::Journal(format!("line {}: digest mismatch", i + 1)));
            }
        }
        Ok(s)
    }

    /// State summary for the service. The last outcome is the one recorded
    /// at solve time; its goal indices refer to the goal of that round.
    pub fn state_json(&self) -> Json {
        let p = self.problem();
        let last_solve = self.journal.iter().rev().find(|r| r.kind == "solve");
        let a = &self.engine.analysis;
        let groups: Vec<Json> = a
            .invariants
            .groups
            .iter()
            .map(|g| {
                json!({
                    "kind": match g.kind { GroupKind::AtMostOne => "AT_MOST_ONE", GroupKind::ExactlyOne => "EXACTLY_ONE" },
                    "members": g.members.iter().map(|&m| a.net.places[m].name.clone()).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "id": self.id,
            "round": self.round,
            "digest": self.digest(),
            "goal": p.goal.iter().map(|c| condition_json(p, c)).collect::<Vec<_>>(),
            "constraints": p.constraints.iter().map(|c| condition_json(p, c)).collect::<Vec<_>>(),
            "relaxation": a.gate.status,
            "invariantGroups": groups,
            "lowerBound": a.lower_bound,
            "encodedSteps": self.engine.depth(),
            "lastOutcome": last_solve.map(|r| &r.payload),
            "lastOutcomeRound": last_solve.map(|r| r.round),
        })
    }
}

/// Deterministic update sequence alternating goal changes with constraint
/// additions. Goal changes replace one goal condition by a random literal or
/// numeric target (sometimes out of range); added constraints are upper
/// bounds or forbidden literals that hold initially.
pub fn gen_update_sequence(p: &Problem, seed: u64, len: usize) -> Vec<Update> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut goal_len = p.goal.len();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let v = rng.gen_range(0..p.vars.len());
        let var = &p.vars[v];
        if i % 2 == 0 {
            let add = match var.kind {
                VarKind::Boolean => Condition::lit(v, true),
                _ => {
                    let lo = var.lower.as_ref().map_or(0, |r| r.floor().to_i64().unwrap_or(0));
                    let hi = var.upper.as_ref().map_or(lo + 3, |r| r.floor().to_i64().unwrap_or(0));
                    Condition::rel([(v, Rat::ONE)], RelOp::Eq, Rat::from_int(rng.gen_range(lo..=hi + 1)))
                }
            };
            let del = if goal_len > 0 && rng.gen_bool(0.7) {
                vec![rng.gen_range(0..goal_len)]
            } else {
                Vec::new()
            };
            goal_len = goal_len - del.len() + 1;
            out.push(Update::GoalChange { add: vec![add], del });
        } else {
            let c = match &p.init[v] {
                Value::Bool(b) => Condition::lit(v, *b),
                Value::Num(x) => {
                    let x = x.floor().to_i64().unwrap_or(0);
                    let hi = var.upper.as_ref().map_or(x + 3, |r| r.floor().to_i64().unwrap_or(0));
                    Condition::rel([(v, Rat::ONE)], RelOp::Le, Rat::from_int(rng.gen_range(x..=hi.max(x))))
                }
            };
            out.push(Update::AddConstraints(vec![c]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::gen_counters;
    use crate::planner::plan;

    fn opts() -> PlannerOptions {
        PlannerOptions {
            max_horizon: 8,
            threads: 1,
            ..PlannerOptions::default()
        }
    }

    fn eq(k: i64) -> Condition {
        Condition::rel([(0, Rat::ONE)], RelOp::Eq, Rat::from_int(k))
    }

    #[test]
    fn goal_change_keeps_invariants_and_store() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let mut s = Session::create("s1", p, opts()).unwrap();
        let r = s.solve_round().unwrap();
        assert_eq!(r.outcome.status(), "plan");
        let groups = s.engine.analysis.invariants.clone();
        let asserted = s.engine.solver.assertions().len();
        let checks = s.engine.solver.stats().checks;
        s.apply_update(&Update::GoalChange { add: vec![eq(1)], del: vec![0] }).unwrap();
        assert_eq!(s.engine.analysis.invariants, groups);
        let r = s.solve_round().unwrap();
        let PlanOutcome::Plan(pl) = &r.outcome else { panic!() };
        assert_eq!(pl.linearization, vec!["inc0"]);
        assert_eq!(s.engine.solver.assertions().len(), asserted);
        assert_eq!(s.engine.solver.stats().checks, checks + 1);
    }

    #[test]
    fn added_constraint_makes_goal_infeasible() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let mut s = Session::create("s1", p, opts()).unwrap();
        s.solve_round().unwrap();
        let c = Condition::rel([(0, Rat::ONE)], RelOp::Le, Rat::ONE);
        assert_eq!(s.apply_update(&Update::AddConstraints(vec![c])).unwrap(), GoalStatus::Infeasible);
        let r = s.solve_round().unwrap();
        let PlanOutcome::Infeasible(e) = &r.outcome else { panic!() };
        assert_eq!(e.goal_index_sets, vec![vec![0]]);
    }

    #[test]
    fn bad_updates_leave_session_unchanged() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let mut s = Session::create("s1", p, opts()).unwrap();
        let before = s.digest();
        let err = s.apply_update(&Update::GoalChange { add: vec![], del: vec![3] }).unwrap_err();
        assert!(matches!(err, SessionError::BadIndex { index: 3, len: 1 }));
        let c = Condition::rel([(0, Rat::ONE)], RelOp::Ge, Rat::ONE);
        assert!(matches!(s.apply_update(&Update::AddConstraints(vec![c])), Err(SessionError::InitViolates(_))));
        assert_eq!(s.digest(), before);
        assert_eq!(s.round, 0);
    }

    #[test]
    fn state_after_goal_shrinks() {
        let p = gen_counters(1, 2, &[3]).unwrap();
        let mut s = Session::create("s1", p, opts()).unwrap();
        s.solve_round().unwrap();
        s.apply_update(&Update::GoalChange { add: vec![], del: vec![0] }).unwrap();
        let st = s.state_json();
        assert_eq!(st["lastOutcome"]["status"], "infeasible");
        assert_eq!(st["lastOutcomeRound"], 0);
        assert_eq!(st["round"], 1);
    }

    #[test]
    fn update_json_roundtrip_and_rejections() {
        let p = gen_counters(2, 3, &[1, 1]).unwrap();
        for u in gen_update_sequence(&p, 5, 10) {
            assert_eq!(parse_update(&p, &update_json(&p, &u)).unwrap(), u);
        }
        assert!(parse_update(&p, &json!({"type": "nope"})).is_err());
        assert!(parse_update(&p, &json!({"type": "goal_change", "extra": 1})).is_err());
        assert!(parse_update(&p, &json!({"type": "goal_change", "add": [{"lit": ["zz", true]}]})).is_err());
    }

    #[test]
    fn sequence_matches_fresh_plans_and_replays() {
        let p = gen_counters(2, 3, &[1, 2]).unwrap();
        let mut s = Session::create("s1", p, opts()).unwrap();
        for u in gen_update_sequence(s.problem(), 11, 12) {
            s.apply_update(&u).unwrap();
            let inc = s.solve_round().unwrap();
            let fresh = plan(s.problem(), &opts()).unwrap();
            assert_eq!(inc.outcome.status(), fresh.outcome.status());
            if let (PlanOutcome::Infeasible(a), PlanOutcome::Infeasible(b)) = (&inc.outcome, &fresh.outcome) {
                assert_eq!(a.goal_index_sets, b.goal_index_sets);
            }
        }
        let lines = s.journal_lines();
        let r = Session::replay("s2", &lines, opts()).unwrap();
        assert_eq!(r.digest(), s.digest());
        assert_eq!(r.journal_lines(), lines);
    }
}
