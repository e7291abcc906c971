//! Distributional policy optimization at desk scale.
//!
//! The crate contains a small reverse-mode numerics stack, continuous-action
//! test environments, implicit quantile actors (independent and
//! autoregressive), target weightings over positive-advantage actions, a
//! tabular three-timescale solver, the generative actor-critic learner, a
//! Gaussian policy-gradient baseline, distribution-distance statistics, and
//! the experiment harness behind the `gaclab` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod dpo;
pub mod envs;
pub mod error;
pub mod evalstats;
pub mod gac;
pub mod gradcheck;
pub mod harness;
pub mod numerics;
pub mod quantile;
pub mod seed;
pub mod targets;

pub use error::{Error, Result};
