//! One-shot planning: relaxation gate, invariants, reachability, then a
//! horizon-extension loop over the incremental solver.

use std::time::Instant;

use serde::Serialize;

use crate::encode::{
    binding_at, condition_at, conflict_groups, encode_step, group_at, initial_slots, Slot, StepContext, StepEncoding,
};
use crate::expr::Expr;
use crate::petri::{analyze_net, PetriNet};
use crate::problem::{Condition, Problem, Value};
use crate::reach::{horizon_lower_bound, propagate_backward, propagate_forward, ReachableSets, DEFAULT_MAX_STEPS};
use crate::relax::{
    build_relaxed_system, relaxation_gate, synthesize_invariants, Explanation, GateReport, GoalStatus, Invariants,
    MutexGroup, RelaxError, RelaxedSystem,
};
use crate::solve::{CheckResult, Model, SolveError, SolveStats, Solver, SolverOptions};

pub const DEFAULT_MAX_HORIZON: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannerOptions {
    pub max_horizon: usize,
    /// Step cap for reachability propagation.
    pub max_steps: usize,
    /// Workers for the mutex sweep.
    pub threads: usize,
    pub solver: SolverOptions,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            max_horizon: DEFAULT_MAX_HORIZON,
            max_steps: DEFAULT_MAX_STEPS,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<crate::lp::LpError> for PlanError {
    fn from(e: crate::lp::LpError) -> Self {
        PlanError::Solve(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Plan {
    /// Non-empty parallel steps, action names ordered by id.
    pub steps: Vec<Vec<String>>,
    pub linearization: Vec<String>,
    /// Horizon of the satisfied encoding, empty steps included.
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PlanOutcome {
    Plan(Plan),
    Infeasible(Explanation),
    Limit { detail: String },
}

impl PlanOutcome {
    pub fn status(&self) -> &'static str {
        match self {
            PlanOutcome::Plan(_) => "plan",
            PlanOutcome::Infeasible(_) => "infeasible",
            PlanOutcome::Limit { .. } => "limit",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub analysis_ms: f64,
    pub encode_ms: f64,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub outcome: PlanOutcome,
    pub lower_bound: usize,
    /// Deepest horizon checked.
    pub horizon: usize,
    pub stats: SolveStats,
    pub timings: Timings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Everything derived from the problem before any solver call.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub net: PetriNet,
    pub relaxed: RelaxedSystem,
    pub gate: GateReport,
    pub invariants: Invariants,
    pub conflicts: Vec<MutexGroup>,
    pub fwd: ReachableSets,
    pub bwd: ReachableSets,
    pub lower_bound: usize,
}

impl Analysis {
    pub fn new(p: &Problem, opts: &PlannerOptions) -> Result<Analysis, PlanError> {
        let net = analyze_net(p);
        let relaxed = build_relaxed_system(&net);
        let gate = relaxation_gate(&relaxed, &p.goal)?;
        Analysis::with_relaxation(p, net, relaxed, gate, opts)
    }

    fn with_relaxation(
        p: &Problem,
        net: PetriNet,
        relaxed: RelaxedSystem,
        gate: GateReport,
        opts: &PlannerOptions,
    ) -> Result<Analysis, PlanError> {
        let invariants = synthesize_invariants(&relaxed, &net, opts.threads)?;
        let conflicts = conflict_groups(&net);
        let fwd = propagate_forward(&net, opts.max_steps);
        let bwd = propagate_backward(&net, &p.goal, opts.max_steps);
        let lower_bound = horizon_lower_bound(&net, &fwd, &bwd, &p.goal, opts.max_steps);
        Ok(Analysis {
            net,
            relaxed,
            gate,
            invariants,
            conflicts,
            fwd,
            bwd,
            lower_bound,
        })
    }

    /// Goal-dependent parts only: backward sets, gate and lower bound.
    pub fn refresh_goal(&mut self, goal: &[Condition], opts: &PlannerOptions) -> Result<(), PlanError> {
        self.gate = relaxation_gate(&self.relaxed, goal)?;
        self.bwd = propagate_backward(&self.net, goal, opts.max_steps);
        self.lower_bound = horizon_lower_bound(&self.net, &self.fwd, &self.bwd, goal, opts.max_steps);
        Ok(())
    }
}

/// Solver state plus the steps encoded so far. Goals are only ever passed
/// as assumptions, so the engine can be reused across goal changes.
#[derive(Debug, Clone)]
pub struct Engine {
    pub problem: Problem,
    pub opts: PlannerOptions,
    pub analysis: Analysis,
    pub solver: Solver,
    /// `steps[0]` holds the initial slots and no assertions.
    pub steps: Vec<StepEncoding>,
    pub timings: Timings,
}

impl Engine {
    pub fn new(problem: Problem, opts: PlannerOptions) -> Result<Engine, PlanError> {
        let start = Instant::now();
        let analysis = Analysis::new(&problem, &opts)?;
        Ok(Engine::from_analysis(problem, opts, analysis, ms(start)))
    }

    fn from_analysis(problem: Problem, opts: PlannerOptions, analysis: Analysis, analysis_ms: f64) -> Engine {
        let step0 = StepEncoding {
            k: 0,
            places: initial_slots(&analysis.net),
            transitions: Vec::new(),
            assertions: Vec::new(),
        };
        Engine {
            problem,
            opts,
            analysis,
            solver: Solver::new(opts.solver),
            steps: vec![step0],
            timings: Timings {
                analysis_ms,
                ..Timings::default()
            },
        }
    }

    /// Deepest encoded step.
    pub fn depth(&self) -> usize {
        self.steps.len() - 1
    }

    /// Encodes steps up to `h`. A previous model is padded with empty steps so
    /// the warm start stays usable.
    pub fn extend_to(&mut self, h: usize) -> Result<(), PlanError> {
        let start = Instant::now();
        while self.depth() < h {
            let k = self.depth() + 1;
            let before = self.solver.vars().len();
            let padded = self.solver.incumbent().filter(|inc| inc.len() == before).map(|inc| inc.to_vec());
            let ctx = StepContext {
                net: &self.analysis.net,
                fwd: &self.analysis.fwd,
                conflict_groups: &self.analysis.conflicts,
                invariants: &self.analysis.invariants.groups,
            };
            let step = encode_step(ctx, &self.steps[k - 1].places, k, &mut self.solver)?;
            for e in &step.assertions {
                self.solver.assert(e)?;
            }
            if let Some(mut inc) = padded {
                inc.resize(self.solver.vars().len(), Value::Bool(false));
                for (p, slot) in step.places.iter().enumerate() {
                    if let Slot::Var(v) = slot {
                        inc[*v] = match &self.steps[k - 1].places[p] {
                            Slot::Var(u) => inc[*u].clone(),
                            Slot::Const(x) => x.clone(),
                        };
                    }
                }
                self.solver.set_incumbent(Some(inc));
            }
            self.steps.push(step);
        }
        self.timings.encode_ms += ms(start);
        Ok(())
    }

    /// Goal at step `h` and backward bindings at earlier steps.
    pub fn goal_assumptions(&self, h: usize) -> Vec<Expr> {
        let mut out: Vec<Expr> = self
            .problem
            .goal
            .iter()
            .map(|c| condition_at(c, &self.steps[h].places))
            .collect();
        for k in 0..h {
            for (p, v) in self.analysis.bwd.at(h - k) {
                out.push(binding_at(&self.steps[k].places, *p, v));
            }
        }
        out.retain(|e| e.as_const() != Some(true));
        out
    }

    /// Satisfying model with the goal at step `h`, encoding steps as needed.
    pub fn check_at(&mut self, h: usize) -> Result<Option<Model>, PlanError> {
        self.extend_to(h)?;
        let start = Instant::now();
        let assumptions = self.goal_assumptions(h);
        let result = if assumptions.iter().any(|e| e.as_const() == Some(false)) {
            None
        } else {
            match self.solver.check_assuming(&assumptions)? {
                CheckResult::Sat(m) => {
                    if !self.solver.verify(&m, &assumptions) {
                        return Err(PlanError::Internal("model violates the encoding".into()));
                    }
                    Some(m)
                }
                CheckResult::Unsat => None,
            }
        };
        self.timings.solve_ms += ms(start);
        Ok(result)
    }

    pub fn extract(&self, model: &Model, h: usize) -> Plan {
        let mut steps = Vec::new();
        for step in &self.steps[1..=h] {
            let names: Vec<String> = step
                .transitions
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_some_and(|v| model.is_true(v)))
                .map(|(t, _)| self.analysis.net.transitions[t].clone())
                .collect();
            if !names.is_empty() {
                steps.push(names);
            }
        }
        let linearization = steps.concat();
        Plan {
            steps,
            linearization,
            horizon: h,
        }
    }

    /// Checks horizons `from..=max_horizon` in order, returning the first
    /// validated plan. The relaxation verdict is consulted first.
    pub fn solve_from(&mut self, from: usize) -> Result<(PlanOutcome, usize), PlanError> {
        if let (GoalStatus::Infeasible, Some(e)) = (self.analysis.gate.status, &self.analysis.gate.explanation) {
            return Ok((PlanOutcome::Infeasible(e.clone()), from));
        }
        let from = from.max(self.analysis.lower_bound);
        if from > self.opts.max_horizon {
            let detail = format!(
                "horizon lower bound {} exceeds the maximum horizon {}",
                self.analysis.lower_bound, self.opts.max_horizon
            );
            return Ok((PlanOutcome::Limit { detail }, from));
        }
        for h in from..=self.opts.max_horizon {
            let model = match self.check_at(h) {
                Ok(m) => m,
                Err(PlanError::Solve(SolveError::NodeLimit(n))) => {
                    let detail = format!("node limit {n} reached at horizon {h}");
                    return Ok((PlanOutcome::Limit { detail }, h));
                }
                Err(e) => return Err(e),
            };
            if let Some(m) = model {
                let plan = self.extract(&m, h);
                if let Err(e) = validate_plan(&self.problem, &plan) {
                    return Err(PlanError::Internal(format!("extracted plan is invalid: {e}")));
                }
                return Ok((PlanOutcome::Plan(plan), h));
            }
        }
        let detail = format!("no plan within horizon {}", self.opts.max_horizon);
        Ok((PlanOutcome::Limit { detail }, self.opts.max_horizon))
    }

    pub fn report(&self, outcome: PlanOutcome, horizon: usize) -> PlanReport {
        PlanReport {
            outcome,
            lower_bound: self.analysis.lower_bound,
            horizon,
            stats: self.solver.stats().clone(),
            timings: self.timings.clone(),
        }
    }

    /// Adds global constraints: the analysis is recomputed and the
    /// constraints, together with any new invariant or conflict groups, are
    /// asserted at every encoded step.
    pub fn add_constraints(&mut self, cs: &[Condition]) -> Result<(), PlanError> {
        let start = Instant::now();
        self.problem.constraints.extend(cs.iter().cloned());
        let old_groups = self.analysis.invariants.groups.clone();
        let old_conflicts = self.analysis.conflicts.clone();
        self.analysis = Analysis::new(&self.problem, &self.opts)?;
        self.timings.analysis_ms += ms(start);
        let new_groups: Vec<MutexGroup> =
            self.analysis.invariants.groups.iter().filter(|g| !old_groups.contains(g)).cloned().collect();
        let new_conflicts: Vec<MutexGroup> =
            self.analysis.conflicts.iter().filter(|g| !old_conflicts.contains(g)).cloned().collect();
        for k in 1..self.steps.len() {
            let step = &self.steps[k];
            let mut es: Vec<Expr> = cs.iter().map(|c| condition_at(c, &step.places)).collect();
            es.extend(new_groups.iter().map(|g| group_at(g, &step.places)));
            for g in &new_conflicts {
                let vs = g.members.iter().filter_map(|&t| step.transitions[t]).collect();
                es.push(Expr::at_most(vs, 1));
            }
            for e in es.into_iter().filter(|e| e.as_const() != Some(true)) {
                self.solver.assert(&e)?;
                self.steps[k].assertions.push(e);
            }
        }
        Ok(())
    }

    /// Replaces the goal; the solver store is untouched.
    pub fn set_goal(&mut self, goal: Vec<Condition>) -> Result<(), PlanError> {
        let start = Instant::now();
        self.analysis.refresh_goal(&goal, &self.opts)?;
        self.problem.goal = goal;
        self.timings.analysis_ms += ms(start);
        Ok(())
    }
}

/// Relaxation gate, invariants, reachability and the horizon loop from the
/// lower bound upwards.
pub fn plan(p: &Problem, opts: &PlannerOptions) -> Result<PlanReport, PlanError> {
    let start = Instant::now();
    let net = analyze_net(p);
    let relaxed = build_relaxed_system(&net);
    let gate = relaxation_gate(&relaxed, &p.goal)?;
    if let (GoalStatus::Infeasible, Some(e)) = (gate.status, &gate.explanation) {
        return Ok(PlanReport {
            outcome: PlanOutcome::Infeasible(e.clone()),
            lower_bound: 0,
            horizon: 0,
            stats: SolveStats::default(),
            timings: Timings {
                analysis_ms: ms(start),
                ..Timings::default()
            },
        });
    }
    let analysis = Analysis::with_relaxation(p, net, relaxed, gate, opts)?;
    let mut engine = Engine::from_analysis(p.clone(), *opts, analysis, ms(start));
    let (outcome, h) = engine.solve_from(0)?;
    Ok(engine.report(outcome, h))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{}: {reason}", step.map_or("final state".to_string(), |s| format!("step {s}")))]
pub struct PlanInvalid {
    /// `None` for a failure of the final goal check.
    pub step: Option<usize>,
    pub reason: String,
}

fn replay(p: &Problem, state: &[Value], actions: &[usize], step: usize) -> Result<Vec<Value>, PlanInvalid> {
    let mut s = state.to_vec();
    for &a in actions {
        s = p.successor(a, &s).ok_or_else(|| PlanInvalid {
            step: Some(step),
            reason: format!("`{}` is not applicable or leaves the admissible region", p.actions[a].name),
        })?;
    }
    Ok(s)
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut perm in permutations(&rest) {
            perm.insert(0, x);
            out.push(perm);
        }
    }
    out
}

/// Replays the plan from the initial state, checking preconditions, bounds
/// and global constraints after every action and the goal at the end.
/// Steps of at most four actions are also replayed in every order.
pub fn validate_plan(p: &Problem, plan: &Plan) -> Result<(), PlanInvalid> {
    if plan.steps.concat() != plan.linearization {
        return Err(PlanInvalid {
            step: None,
            reason: "linearization does not follow the steps".into(),
        });
    }
    let mut state = p.init.clone();
    for (i, step) in plan.steps.iter().enumerate() {
        let ids = step
            .iter()
            .map(|n| {
                p.action_id(n).ok_or_else(|| PlanInvalid {
                    step: Some(i),
                    reason: format!("unknown action `{n}`"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let next = replay(p, &state, &ids, i)?;
        if ids.len() <= 4 {
            for perm in permutations(&ids) {
                if replay(p, &state, &perm, i)? != next {
                    return Err(PlanInvalid {
                        step: Some(i),
                        reason: "actions in the step do not commute".into(),
                    });
                }
            }
        }
        state = next;
    }
    if !p.goal_holds(&state) {
        return Err(PlanInvalid {
            step: None,
            reason: "goal does not hold".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{gen_counters, gen_delivery, gen_robot, oracle_reachable, OracleStatus};

    fn opts() -> PlannerOptions {
        PlannerOptions {
            max_horizon: 12,
            threads: 2,
            ..PlannerOptions::default()
        }
    }

    fn plan_of(r: &PlanReport) -> &Plan {
        match &r.outcome {
            PlanOutcome::Plan(p) => p,
            o => panic!("expected a plan, got {o:?}"),
        }
    }

    #[test]
    fn counters_plan() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let r = plan(&p, &opts()).unwrap();
        let pl = plan_of(&r);
        assert_eq!(pl.horizon, 2);
        assert_eq!(pl.linearization, vec!["inc0", "inc0"]);
        assert!(pl.horizon >= r.lower_bound);
    }

    #[test]
    fn counters_infeasible_before_solving() {
        let p = gen_counters(1, 2, &[3]).unwrap();
        let r = plan(&p, &opts()).unwrap();
        match r.outcome {
            PlanOutcome::Infeasible(e) => assert_eq!(e.goal_index_sets, vec![vec![0]]),
            o => panic!("{o:?}"),
        }
        assert_eq!(r.stats.checks, 0);
    }

    #[test]
    fn goal_equals_init() {
        let p = gen_counters(2, 2, &[0, 0]).unwrap();
        let r = plan(&p, &opts()).unwrap();
        let pl = plan_of(&r);
        assert!(pl.steps.is_empty());
        assert_eq!(pl.horizon, 0);
    }

    #[test]
    fn parallel_counters() {
        let p = gen_counters(3, 2, &[2, 1, 2]).unwrap();
        let r = plan(&p, &opts()).unwrap();
        let pl = plan_of(&r);
        assert_eq!(pl.horizon, 2);
        assert_eq!(pl.linearization.len(), 5);
    }

    #[test]
    fn robot_and_delivery_plans() {
        let p = gen_robot(4).unwrap();
        let pl = plan(&p, &opts()).unwrap();
        assert_eq!(plan_of(&pl).linearization.len(), 1);

        let p = gen_delivery(1, 1, 2, 1).unwrap();
        let r = plan(&p, &opts()).unwrap();
        let pl = plan_of(&r);
        let OracleStatus::Reachable { steps, .. } = oracle_reachable(&p, 100_000).status else { panic!() };
        assert!(pl.steps.len() <= steps);
        validate_plan(&p, pl).unwrap();
    }

    #[test]
    fn validator_rejections() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let ok = Plan {
            steps: vec![vec!["inc0".into()], vec!["inc0".into()]],
            linearization: vec!["inc0".into(), "inc0".into()],
            horizon: 2,
        };
        assert_eq!(validate_plan(&p, &ok), Ok(()));
        let bad = Plan {
            steps: vec![vec!["dec0".into()]],
            linearization: vec!["dec0".into()],
            horizon: 1,
        };
        assert_eq!(validate_plan(&p, &bad).unwrap_err().step, Some(0));
        let short = Plan {
            steps: vec![vec!["inc0".into()]],
            linearization: vec!["inc0".into()],
            horizon: 1,
        };
        assert_eq!(validate_plan(&p, &short).unwrap_err().step, None);
    }

    #[test]
    fn goal_change_reuses_steps() {
        let p = gen_counters(1, 2, &[2]).unwrap();
        let mut e = Engine::new(p.clone(), opts()).unwrap();
        let (o, _) = e.solve_from(0).unwrap();
        assert_eq!(o.status(), "plan");
        let depth = e.depth();
        let goal = vec![Condition::rel([(0, crate::Rat::ONE)], crate::RelOp::Eq, crate::Rat::ONE)];
        e.set_goal(goal).unwrap();
        let (o, _) = e.solve_from(e.depth()).unwrap();
        let PlanOutcome::Plan(pl) = o else { panic!() };
        assert_eq!(pl.linearization, vec!["inc0"]);
        assert_eq!(e.depth(), depth);
    }
}
