//! One-time-scale adaptive stochastic gradient methods (Adagrad / RMSprop
//! family): schedule algebra, test objectives, noise oracles, the iteration
//! itself, convergence diagnostics and a seeded experiment harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coordwise;
pub mod diagnostics;
pub mod harness;
pub mod noise;
pub mod objectives;
pub mod optimizer;
pub mod schedules;
