//! Shared generators and oracles for the integration tests.
#![allow(dead_code)]

use petriplan_core::domains::{gen_counters, gen_delivery, gen_random_strips, DeliveryLayout};
use petriplan_core::expr::{Expr, VarId};
use petriplan_core::{Condition, Problem, Rat, RelOp, Value};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn int(k: i64) -> Rat {
    Rat::from_int(k)
}

pub fn eq(v: usize, k: i64) -> Condition {
    Condition::rel([(v, Rat::ONE)], RelOp::Eq, int(k))
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub family: &'static str,
    pub name: String,
    pub problem: Problem,
}

/// Counters, delivery and random-STRIPS problems, deterministic in `seed`.
pub fn corpus(seed: u64, counters: usize, delivery: usize, strips: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..counters {
        let n = rng.gen_range(1..=3);
        let max = rng.gen_range(1..=4);
        let goal: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=max)).collect();
        out.push(Instance {
            family: "counters",
            name: format!("counters#{i} n={n} max={max} goal={goal:?}"),
            problem: gen_counters(n, max, &goal).unwrap(),
        });
    }
    for i in 0..delivery {
        let (t, pk, l) = (rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(2..=3));
        let cap = rng.gen_range(1..=2);
        let mut p = gen_delivery(t, pk, l, cap).unwrap();
        let lay = DeliveryLayout {
            trucks: t,
            packages: pk,
            locations: l,
        };
        let mut goal = Vec::new();
        for q in 0..pk {
            if rng.gen_bool(0.8) {
                goal.push(Condition::lit(lay.pkg_at(q, rng.gen_range(0..l)), true));
            }
        }
        if rng.gen_bool(0.4) || goal.is_empty() {
            goal.push(Condition::lit(lay.truck_at(rng.gen_range(0..t), rng.gen_range(0..l)), true));
        }
        p.goal = goal;
        out.push(Instance {
            family: "delivery",
            name: format!("delivery#{i} t={t} p={pk} l={l} cap={cap}"),
            problem: p,
        });
    }
    for i in 0..strips {
        let s = rng.gen();
        let nv = rng.gen_range(3..=12);
        let na = rng.gen_range(3..=14);
        out.push(Instance {
            family: "strips",
            name: format!("strips#{i} seed={s} vars={nv} actions={na}"),
            problem: gen_random_strips(s, nv, na),
        });
    }
    out
}

pub fn shuffle<T>(v: &mut [T], seed: u64) {
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

// ---------------------------------------------------------------------------
// Random formulas with a test-local evaluator.

pub const NUM_LO: i64 = -2;
pub const NUM_HI: i64 = 3;

#[derive(Debug, Clone)]
pub enum F {
    B(usize),
    Not(Box<F>),
    And(Vec<F>),
    Or(Vec<F>),
    Imp(Box<F>, Box<F>),
    /// Σ c·x op rhs; ids below `nb` are booleans, `nb` and `nb+1` numerics.
    Lin(Vec<(usize, i64)>, RelOp, i64),
    AtMost(Vec<usize>, u32),
}

pub struct Shape {
    pub nb: usize,
    pub nn: usize,
}

pub fn random_formula(rng: &mut ChaCha8Rng, shape: &Shape, depth: u32) -> F {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if leaf {
        match rng.gen_range(0..4) {
            0 | 1 => {
                let b = F::B(rng.gen_range(0..shape.nb));
                if rng.gen_bool(0.5) {
                    F::Not(Box::new(b))
                } else {
                    b
                }
            }
            2 => {
                let k = rng.gen_range(1..=3);
                let terms = (0..k)
                    .map(|_| (rng.gen_range(0..shape.nb + shape.nn), rng.gen_range(-3..=3)))
                    .collect();
                let op = [RelOp::Le, RelOp::Ge, RelOp::Eq][rng.gen_range(0..3)];
                F::Lin(terms, op, rng.gen_range(-4..=4))
            }
            _ => {
                let k = rng.gen_range(2..=4.min(shape.nb.max(2)));
                let vs = (0..k).map(|_| rng.gen_range(0..shape.nb)).collect();
                F::AtMost(vs, rng.gen_range(0..=2))
            }
        }
    } else {
        let kids = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| random_formula(rng, shape, depth - 1)).collect();
        let n = rng.gen_range(2..=3);
        match rng.gen_range(0..4) {
            0 => F::And(kids(rng, n)),
            1 => F::Or(kids(rng, n)),
            2 => F::Imp(
                Box::new(random_formula(rng, shape, depth - 1)),
                Box::new(random_formula(rng, shape, depth - 1)),
            ),
            _ => F::Not(Box::new(random_formula(rng, shape, depth - 1))),
        }
    }
}

/// `bits` assigns the booleans, `nums` the numerics.
pub fn eval(f: &F, nb: usize, bits: u32, nums: &[i64]) -> bool {
    let val = |v: usize| -> i64 {
        if v < nb {
            i64::from(bits >> v & 1)
        } else {
            nums[v - nb]
        }
    };
    match f {
        F::B(v) => bits >> v & 1 == 1,
        F::Not(a) => !eval(a, nb, bits, nums),
        F::And(cs) => cs.iter().all(|c| eval(c, nb, bits, nums)),
        F::Or(cs) => cs.iter().any(|c| eval(c, nb, bits, nums)),
        F::Imp(a, b) => !eval(a, nb, bits, nums) || eval(b, nb, bits, nums),
        F::Lin(ts, op, rhs) => {
            let lhs: i64 = ts.iter().map(|(v, c)| c * val(*v)).sum();
            match op {
                RelOp::Le => lhs <= *rhs,
                RelOp::Ge => lhs >= *rhs,
                RelOp::Eq => lhs == *rhs,
            }
        }
        F::AtMost(vs, k) => {
            let mut vs = vs.clone();
            vs.sort_unstable();
            vs.dedup();
            vs.iter().filter(|&&v| bits >> v & 1 == 1).count() <= *k as usize
        }
    }
}

pub fn to_expr(f: &F, var: &impl Fn(usize) -> VarId) -> Expr {
    match f {
        F::B(v) => Expr::var(var(*v)),
        F::Not(a) => Expr::not(to_expr(a, var)),
        F::And(cs) => Expr::and(cs.iter().map(|c| to_expr(c, var))),
        F::Or(cs) => Expr::or(cs.iter().map(|c| to_expr(c, var))),
        F::Imp(a, b) => Expr::implies(to_expr(a, var), to_expr(b, var)),
        F::Lin(ts, op, rhs) => Expr::linear(ts.iter().map(|(v, c)| (var(*v), int(*c))), *op, int(*rhs)),
        F::AtMost(vs, k) => Expr::at_most(vs.iter().map(|v| var(*v)).collect(), *k),
    }
}

/// Truth-table satisfiability over all boolean assignments and numeric
/// values in `[NUM_LO, NUM_HI]`.
pub fn brute_sat(f: &F, shape: &Shape) -> bool {
    let range: Vec<i64> = (NUM_LO..=NUM_HI).collect();
    let mut nums = vec![NUM_LO; shape.nn];
    (0..1u32 << shape.nb).any(|bits| num_any(f, shape, bits, &range, &mut nums, 0))
}

fn num_any(f: &F, shape: &Shape, bits: u32, range: &[i64], nums: &mut Vec<i64>, i: usize) -> bool {
    if i == shape.nn {
        return eval(f, shape.nb, bits, nums);
    }
    for &x in range {
        nums[i] = x;
        if num_any(f, shape, bits, range, nums, i + 1) {
            return true;
        }
    }
    false
}

pub fn value_of(v: usize, nb: usize, bits: u32, nums: &[i64]) -> Value {
    if v < nb {
        Value::Bool(bits >> v & 1 == 1)
    } else {
        Value::Num(int(nums[v - nb]))
    }
}
