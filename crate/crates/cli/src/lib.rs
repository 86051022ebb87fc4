//! Command-line driver for petriplan: generation, analysis, feasibility
//! checks, planning, the session service and benchmarks.

pub mod bench;
pub mod server;

use std::fmt::Write as _;
use std::io::Read;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use petriplan_core::domains::{gen_counters, gen_delivery, gen_random_strips, gen_robot};
use petriplan_core::petri::{analyze_net, net_json, PetriNet};
use petriplan_core::planner::{Engine, PlanOutcome, PlanReport, PlannerOptions};
use petriplan_core::problem::{parse_problem, serialize_problem};
use petriplan_core::reach::{propagate_backward, propagate_forward, reach_json};
use petriplan_core::relax::{build_relaxed_system, relaxation_gate, synthesize_invariants, GoalStatus, Invariants};
use petriplan_core::session::outcome_json;
use petriplan_core::solve::SolverOptions;
use petriplan_core::Problem;
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "petriplan", version, about = "Grounded task planning over Petri-net relaxations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Emit a generated problem document.
    Generate(GenerateArgs),
    /// Print the net, invariants and reachability bindings.
    Analyze(AnalyzeArgs),
    /// Run the relaxation gate and explain infeasible goals.
    Check(CheckArgs),
    /// Search for a plan of increasing horizon.
    Plan(PlanArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Timing tables over generated domains.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Smt2,
    Lp,
}

#[derive(Debug, Args)]
pub struct Input {
    /// Problem document; `-` or absent reads standard input.
    pub input: Option<PathBuf>,
    /// Workers for the mutex sweep.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(subcommand)]
    pub family: Family,
    /// Write to this file instead of standard output.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Family {
    /// Integer counters with increment and decrement actions.
    Counters {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        max: i64,
        /// Goal value per counter, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        goal: Vec<i64>,
    },
    /// Trucks moving packages between locations.
    Delivery {
        #[arg(long, default_value_t = 1)]
        trucks: usize,
        #[arg(long, default_value_t = 1)]
        packages: usize,
        #[arg(long, default_value_t = 2)]
        locations: usize,
        #[arg(long, default_value_t = 1)]
        capacity: i64,
    },
    /// A robot on a chain of rooms.
    Robot {
        #[arg(long, default_value_t = 3)]
        n: usize,
    },
    /// Random STRIPS problem.
    Strips {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        vars: usize,
        #[arg(long, default_value_t = 6)]
        actions: usize,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: Input,
    /// Dump places, transitions and incidence triplets.
    #[arg(long)]
    pub emit_net: bool,
    /// Dump forward and backward per-step bindings.
    #[arg(long)]
    pub emit_reach: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long, default_value_t = petriplan_core::planner::DEFAULT_MAX_HORIZON)]
    pub max_horizon: usize,
    /// Branch-and-bound node limit per check.
    #[arg(long)]
    pub node_limit: Option<u64>,
    /// Print the encoding at the final horizon instead of the plan.
    #[arg(long, value_enum, conflicts_with = "format")]
    pub emit: Option<Emit>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "PETRIPLAN_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Directory holding one journal per session; sessions are restored
    /// from it at startup.
    #[arg(long, env = "PETRIPLAN_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = petriplan_core::planner::DEFAULT_MAX_HORIZON)]
    pub max_horizon: usize,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = bench::Suite::Oneshot)]
    pub suite: bench::Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Problems per family in the one-shot suite.
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    /// Update sequences in the sequential suite.
    #[arg(long, default_value_t = 4)]
    pub sequences: usize,
    #[arg(long, default_value_t = 30)]
    pub updates: usize,
    #[arg(long, default_value_t = 12)]
    pub max_horizon: usize,
    /// Leave out wall-clock columns.
    #[arg(long)]
    pub no_timings: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

fn options(threads: Option<usize>) -> PlannerOptions {
    let mut opts = PlannerOptions::default();
    if let Some(t) = threads {
        opts.threads = t.max(1);
    }
    opts
}

fn read_problem(path: &Option<PathBuf>) -> anyhow::Result<Problem> {
    let text = match path {
        Some(p) if p.as_os_str() != "-" => {
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
        }
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading standard input")?;
            s
        }
    };
    Ok(parse_problem(&text)?)
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json serializes") + "\n"
}

/// Output text and exit code of one command.
pub struct Output {
    pub stdout: String,
    pub code: i32,
}

fn ok(stdout: String) -> Output {
    Output { stdout, code: EXIT_OK }
}

fn generate(args: &GenerateArgs) -> anyhow::Result<Output> {
    let p = match &args.family {
        Family::Counters { n, max, goal } => gen_counters(*n, *max, goal)?,
        Family::Delivery {
            trucks,
            packages,
            locations,
            capacity,
        } => gen_delivery(*trucks, *packages, *locations, *capacity)?,
        Family::Robot { n } => gen_robot(*n)?,
        Family::Strips { seed, vars, actions } => gen_random_strips(*seed, *vars, *actions),
    };
    let doc = serialize_problem(&p);
    match &args.output {
        Some(path) => {
            std::fs::write(path, doc).with_context(|| format!("writing {}", path.display()))?;
            Ok(ok(String::new()))
        }
        None => Ok(ok(doc)),
    }
}

fn invariants_json(net: &PetriNet, inv: &Invariants) -> Value {
    let name = |p: usize| net.places[p].name.clone();
    json!({
        "mutexPairs": inv.pairs.iter().map(|&(a, b)| [name(a), name(b)]).collect::<Vec<_>>(),
        "groups": inv.groups.iter().map(|g| json!({
            "kind": g.kind,
            "members": g.members.iter().map(|&m| name(m)).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

fn analyze(args: &AnalyzeArgs) -> anyhow::Result<Output> {
    let p = read_problem(&args.input.input)?;
    let opts = options(args.input.threads);
    let net = analyze_net(&p);
    if args.emit_net {
        return Ok(ok(pretty(&net_json(&net))));
    }
    if args.emit_reach {
        let fwd = propagate_forward(&net, opts.max_steps);
        let bwd = propagate_backward(&net, &p.goal, opts.max_steps);
        return Ok(ok(pretty(&json!({
            "forward": reach_json(&net, &fwd),
            "backward": reach_json(&net, &bwd),
        }))));
    }
    let sys = build_relaxed_system(&net);
    let inv = synthesize_invariants(&sys, &net, opts.threads)?;
    if args.format == Format::Report {
        let mut doc = invariants_json(&net, &inv);
        doc["places"] = json!(net.place_count());
        doc["transitions"] = json!(net.transition_count());
        return Ok(ok(pretty(&doc)));
    }
    let mut s = String::new();
    let _ = writeln!(s, "{} places, {} transitions", net.place_count(), net.transition_count());
    for (i, place) in net.places.iter().enumerate() {
        let b = &net.bounds[i];
        if b.lower.is_some() || b.upper.is_some() {
            let show = |r: &Option<petriplan_core::Rat>| r.as_ref().map_or("-".to_string(), |r| r.to_string());
            let _ = writeln!(s, "  bounds {}: [{}, {}]", place.name, show(&b.lower), show(&b.upper));
        }
    }
    let _ = writeln!(s, "{} mutex pairs", inv.pairs.len());
    for g in &inv.groups {
        let members: Vec<&str> = g.members.iter().map(|&m| net.places[m].name.as_str()).collect();
        let kind = serde_json::to_value(g.kind).expect("kind serializes");
        let _ = writeln!(s, "  {} {{{}}}", kind.as_str().unwrap_or_default(), members.join(", "));
    }
    Ok(ok(s))
}

fn render_explanations(p: &Problem, sets: &[Vec<usize>]) -> String {
    let mut s = String::new();
    for set in sets {
        let conds: Vec<String> = set.iter().map(|&i| format!("[{i}] {}", p.goal[i].display(p))).collect();
        let _ = writeln!(s, "  conflict: {{{}}}", conds.join(", "));
    }
    s
}

fn check(args: &CheckArgs) -> anyhow::Result<Output> {
    let p = read_problem(&args.input.input)?;
    let opts = options(args.input.threads);
    let net = analyze_net(&p);
    let sys = build_relaxed_system(&net);
    let gate = relaxation_gate(&sys, &p.goal)?;
    let code = match gate.status {
        GoalStatus::PossiblyFeasible => EXIT_OK,
        GoalStatus::Infeasible => EXIT_INFEASIBLE,
    };
    let sets = gate.explanation.as_ref().map(|e| e.goal_index_sets.clone()).unwrap_or_default();
    if args.format == Format::Report {
        let inv = synthesize_invariants(&sys, &net, opts.threads)?;
        let doc = json!({
            "status": gate.status,
            "explanations": gate.explanation.as_ref().map(|e| outcome_json(&p, &PlanOutcome::Infeasible(e.clone()))["explanations"].clone()),
            "capped": gate.explanation.as_ref().is_some_and(|e| e.capped),
            "invariants": invariants_json(&net, &inv),
        });
        return Ok(Output { stdout: pretty(&doc), code });
    }
    let mut s = match gate.status {
        GoalStatus::PossiblyFeasible => "POSSIBLY_FEASIBLE\n".to_string(),
        GoalStatus::Infeasible => "INFEASIBLE\n".to_string(),
    };
    s.push_str(&render_explanations(&p, &sets));
    Ok(Output { stdout: s, code })
}

fn plan_text(p: &Problem, r: &PlanReport) -> String {
    let mut s = String::new();
    match &r.outcome {
        PlanOutcome::Plan(plan) => {
            let _ = writeln!(s, "PLAN horizon {} ({} actions)", plan.horizon, plan.linearization.len());
            for (i, step) in plan.steps.iter().enumerate() {
                let _ = writeln!(s, "  {}: {}", i + 1, step.join(", "));
            }
        }
        PlanOutcome::Infeasible(e) => {
            s.push_str("INFEASIBLE\n");
            s.push_str(&render_explanations(p, &e.goal_index_sets));
        }
        PlanOutcome::Limit { detail } => {
            let _ = writeln!(s, "LIMIT {detail}");
        }
    }
    s
}

fn outcome_code(o: &PlanOutcome) -> i32 {
    match o {
        PlanOutcome::Plan(_) => EXIT_OK,
        PlanOutcome::Infeasible(_) => EXIT_INFEASIBLE,
        PlanOutcome::Limit { .. } => EXIT_RESOURCE,
    }
}

fn plan_cmd(args: &PlanArgs) -> anyhow::Result<Output> {
    let p = read_problem(&args.input.input)?;
    let mut opts = options(args.input.threads);
    opts.max_horizon = args.max_horizon;
    if let Some(n) = args.node_limit {
        opts.solver = SolverOptions {
            node_limit: n,
            ..opts.solver
        };
    }
    if let Some(emit) = args.emit {
        let mut engine = Engine::new(p, opts)?;
        let (outcome, h) = engine.solve_from(0)?;
        let h = h.min(engine.depth());
        let goal = engine.goal_assumptions(h);
        let text = match emit {
            Emit::Smt2 => engine.solver.export_smt2(&goal),
            Emit::Lp => {
                let mut solver = engine.solver.clone();
                for g in &goal {
                    solver.assert(g)?;
                }
                solver.export_lp()
            }
        };
        return Ok(Output {
            stdout: text,
            code: outcome_code(&outcome),
        });
    }
    let report = petriplan_core::planner::plan(&p, &opts)?;
    let code = outcome_code(&report.outcome);
    let stdout = match args.format {
        Format::Report => pretty(&json!({
            "outcome": outcome_json(&p, &report.outcome),
            "lowerBound": report.lower_bound,
            "horizon": report.horizon,
            "stats": report.stats,
            "timings": report.timings,
        })),
        Format::Text => plan_text(&p, &report),
    };
    Ok(Output { stdout, code })
}

fn serve(args: &ServeArgs) -> anyhow::Result<Output> {
    let mut opts = options(args.threads);
    opts.max_horizon = args.max_horizon;
    let state = match &args.data_dir {
        Some(dir) => server::AppState::load(opts, dir)?,
        None => server::AppState::new(opts, None),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(state, args.port))?;
    Ok(ok(String::new()))
}

fn bench_cmd(args: &BenchArgs) -> anyhow::Result<Output> {
    let mut opts = options(args.threads);
    opts.max_horizon = args.max_horizon;
    let cfg = bench::BenchConfig {
        suite: args.suite,
        seed: args.seed,
        opts,
        instances: args.instances,
        sequences: args.sequences,
        updates: args.updates,
    };
    let report = bench::run(&cfg)?;
    Ok(ok(match args.format {
        Format::Report => pretty(&serde_json::to_value(&report)?),
        Format::Text => bench::render(&report, !args.no_timings),
    }))
}

pub fn execute(cli: &Cli) -> anyhow::Result<Output> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Analyze(a) => analyze(a),
        Command::Check(a) => check(a),
        Command::Plan(a) => plan_cmd(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

/// Parses `argv`, runs the command and returns the exit code. Usage and
/// runtime errors go to standard error with code 2.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            out.code
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
