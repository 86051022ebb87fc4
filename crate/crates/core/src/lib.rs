//! Grounded task planning through Petri-net relaxations and bounded-horizon
//! constraint solving over exact rationals.

pub mod domains;
pub mod encode;
pub mod expr;
pub mod lp;
pub mod petri;
pub mod planner;
pub mod problem;
pub mod rational;
pub mod session;
pub mod reach;
pub mod relax;
pub mod solve;

pub use problem::{Condition, Effect, Problem, RelOp, Value, VarKind};
pub use rational::Rat;
