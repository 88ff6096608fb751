//! Conservative model-based offline maximum-likelihood inverse reinforcement
//! learning on finite MDPs.
//!
//! The crate is organised around the two data sources of offline IRL: a
//! dataset of `(s, a, s')` transitions, from which a world model and an
//! uncertainty penalty are estimated ([`world_model`]), and a set of expert
//! trajectories, whose log-likelihood under the soft-optimal policy of the
//! penalised model is maximised over reward parameters ([`irl`]).
//!
//! * [`mdp`]: tabular MDPs, soft (entropy-regularised) planning, policy
//!   evaluation, discounted visitation measures and trajectory sampling.
//! * [`world_model`]: maximum-likelihood transition estimates, count and
//!   bootstrap penalties, model-mismatch error and expert coverage sets.
//! * [`reward`]: bounded, differentiable reward parameterisations.
//! * [`irl`]: likelihood and surrogate objectives, their gradients, the
//!   alternating policy-improvement / reward-ascent loop and diagnostics.
//! * [`data_gen`]: synthetic instances, soft-optimal experts and datasets.
//! * [`io`]: JSON / JSON-lines file formats.

pub mod data_gen;
pub mod error;
pub mod io;
pub mod irl;
pub mod mdp;
pub mod reward;
pub mod world_model;

pub use error::{Error, Result};
