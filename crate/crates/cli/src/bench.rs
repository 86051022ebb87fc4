//! One-shot and sequential timing tables over generated domains.

use std::fmt::Write as _;
use std::time::Instant;

use petriplan_core::domains::{gen_counters, gen_delivery, gen_random_strips};
use petriplan_core::planner::{plan, PlanOutcome, PlannerOptions};
use petriplan_core::session::{gen_update_sequence, Session};
use petriplan_core::Problem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Oneshot,
    Sequential,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub suite: Suite,
    pub seed: u64,
    pub opts: PlannerOptions,
    pub instances: usize,
    pub sequences: usize,
    pub updates: usize,
}

#[derive(Debug, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OneshotRow {
    pub family: String,
    pub instances: usize,
    pub plans: usize,
    pub infeasible: usize,
    pub limits: usize,
    pub nodes: u64,
    pub analysis_ms: f64,
    pub encode_ms: f64,
    pub solve_ms: f64,
}

#[derive(Debug, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SequenceRow {
    pub sequence: usize,
    pub family: String,
    pub updates: usize,
    pub plans: usize,
    pub infeasible: usize,
    pub limits: usize,
    pub incremental_nodes: u64,
    pub scratch_nodes: u64,
    /// Cumulative wall time after each round.
    pub incremental_cumulative_ms: Vec<f64>,
    pub scratch_cumulative_ms: Vec<f64>,
    pub analysis_ms: f64,
    pub encode_ms: f64,
    pub solve_ms: f64,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum BenchReport {
    Oneshot(Vec<OneshotRow>),
    Sequential(Vec<SequenceRow>),
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn oneshot_problem(family: &str, rng: &mut ChaCha8Rng) -> anyhow::Result<Problem> {
    Ok(match family {
        "counters" => {
            let n = rng.gen_range(1..=3);
            let max = rng.gen_range(1..=4);
            let goal: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=max + 1)).collect();
            gen_counters(n, max, &goal)?
        }
        "delivery" => gen_delivery(1, rng.gen_range(1..=2), rng.gen_range(2..=3), rng.gen_range(1..=2))?,
        _ => gen_random_strips(rng.gen(), rng.gen_range(3..=8), rng.gen_range(3..=10)),
    })
}

fn oneshot(cfg: &BenchConfig) -> anyhow::Result<Vec<OneshotRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for family in ["counters", "delivery", "strips"] {
        let mut row = OneshotRow {
            family: family.to_string(),
            ..OneshotRow::default()
        };
        for _ in 0..cfg.instances {
            let p = oneshot_problem(family, &mut rng)?;
            let r = plan(&p, &cfg.opts)?;
            row.instances += 1;
            match r.outcome {
                PlanOutcome::Plan(_) => row.plans += 1,
                PlanOutcome::Infeasible(_) => row.infeasible += 1,
                PlanOutcome::Limit { .. } => row.limits += 1,
            }
            row.nodes += r.stats.nodes;
            row.analysis_ms += r.timings.analysis_ms;
            row.encode_ms += r.timings.encode_ms;
            row.solve_ms += r.timings.solve_ms;
        }
        rows.push(row);
    }
    Ok(rows)
}

fn sequential(cfg: &BenchConfig) -> anyhow::Result<Vec<SequenceRow>> {
    let mut rows = Vec::new();
    for i in 0..cfg.sequences {
        let (family, p0) = if i % 2 == 0 {
            ("counters", gen_counters(2, 3, &[2, 1])?)
        } else {
            ("delivery", gen_delivery(1, 2, 3, 2)?)
        };
        let seed = cfg.seed.wrapping_add(i as u64);
        let updates = gen_update_sequence(&p0, seed, cfg.updates);
        let mut row = SequenceRow {
            sequence: i,
            family: family.to_string(),
            updates: updates.len(),
            ..SequenceRow::default()
        };
        let start = Instant::now();
        let mut session = Session::create(format!("bench{i}"), p0, cfg.opts)?;
        let mut incr_ms = ms(start);
        let mut scratch_ms = 0.0;
        for u in &updates {
            let t = Instant::now();
            session.apply_update(u)?;
            let report = session.solve_round()?;
            incr_ms += ms(t);
            row.incremental_cumulative_ms.push(incr_ms);
            match report.outcome {
                PlanOutcome::Plan(_) => row.plans += 1,
                PlanOutcome::Infeasible(_) => row.infeasible += 1,
                PlanOutcome::Limit { .. } => row.limits += 1,
            }

            let t = Instant::now();
            let fresh = plan(session.problem(), &cfg.opts)?;
            scratch_ms += ms(t);
            row.scratch_cumulative_ms.push(scratch_ms);
            row.scratch_nodes += fresh.stats.nodes;
        }
        let last = session.last.as_ref();
        row.incremental_nodes = last.map_or(0, |r| r.stats.nodes);
        let timings = &session.engine.timings;
        row.analysis_ms = timings.analysis_ms;
        row.encode_ms = timings.encode_ms;
        row.solve_ms = timings.solve_ms;
        rows.push(row);
    }
    Ok(rows)
}

pub fn run(cfg: &BenchConfig) -> anyhow::Result<BenchReport> {
    Ok(match cfg.suite {
        Suite::Oneshot => BenchReport::Oneshot(oneshot(cfg)?),
        Suite::Sequential => BenchReport::Sequential(sequential(cfg)?),
    })
}

/// Fixed-width table; timing columns are left out when `timings` is false so
/// the output is reproducible.
pub fn render(report: &BenchReport, timings: bool) -> String {
    let mut s = String::new();
    match report {
        BenchReport::Oneshot(rows) => {
            let _ = write!(s, "{:<10} {:>9} {:>6} {:>10} {:>6} {:>8}", "family", "instances", "plans", "infeasible", "limit", "nodes");
            if timings {
                let _ = write!(s, " {:>12} {:>10} {:>10}", "analysis_ms", "encode_ms", "solve_ms");
            }
            s.push('\n');
            for r in rows {
                let _ = write!(
                    s,
                    "{:<10} {:>9} {:>6} {:>10} {:>6} {:>8}",
                    r.family, r.instances, r.plans, r.infeasible, r.limits, r.nodes
                );
                if timings {
                    let _ = write!(s, " {:>12.1} {:>10.1} {:>10.1}", r.analysis_ms, r.encode_ms, r.solve_ms);
                }
                s.push('\n');
            }
        }
        BenchReport::Sequential(rows) => {
            let _ = write!(
                s,
                "{:<4} {:<9} {:>7} {:>6} {:>10} {:>6} {:>10} {:>10}",
                "seq", "family", "updates", "plans", "infeasible", "limit", "incr_nodes", "scr_nodes"
            );
            if timings {
                let _ = write!(
                    s,
                    " {:>10} {:>10} {:>12} {:>10} {:>10}",
                    "incr_ms", "scr_ms", "analysis_ms", "encode_ms", "solve_ms"
                );
            }
            s.push('\n');
            for r in rows {
                let _ = write!(
                    s,
                    "{:<4} {:<9} {:>7} {:>6} {:>10} {:>6} {:>10} {:>10}",
                    r.sequence, r.family, r.updates, r.plans, r.infeasible, r.limits, r.incremental_nodes, r.scratch_nodes
                );
                if timings {
                    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
                    let _ = write!(
                        s,
                        " {:>10.1} {:>10.1} {:>12.1} {:>10.1} {:>10.1}",
                        last(&r.incremental_cumulative_ms),
                        last(&r.scratch_cumulative_ms),
                        r.analysis_ms,
                        r.encode_ms,
                        r.solve_ms
                    );
                }
                s.push('\n');
            }
        }
    }
    s
}
