//! Experiment harness for conservative offline maximum-likelihood IRL.
//!
//! Each command is a library function returning an [`report::ExperimentReport`];
//! the `mlirl` binary only parses flags and writes reports.
//!
//! * [`sample_complexity`]: world-model error against samples per pair, and the
//!   resulting likelihood optimality gap.
//! * [`convergence`]: gradient and policy-tracking averages against `K` and `ε_app`.
//! * [`pipeline`]: end-to-end IRL runs, reward transfer, `solve`, `estimate-model`.
//! * [`verify`]: randomised identity and inequality checks.
//!
//! Conditions run in parallel; rows are merged in condition order, then seed order.

pub mod cli;
pub mod convergence;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod sample_complexity;
pub mod setup;
pub mod theory;
pub mod verify;

pub use error::{HarnessError, Result};
