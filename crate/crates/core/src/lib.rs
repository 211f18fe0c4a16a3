//! Constrained policy optimization with an adaptive estimator of the
//! sampling bias in the cost constraint.
//!
//! The crate is organised bottom-up:
//!
//! - [`cmdp`]: transitions, trajectories, discounted sums and the
//!   trajectory log format.
//! - [`envs`]: small deterministic benchmark environments and rollouts.
//! - [`policy`]: actor and critic networks with hand-derived gradients,
//!   KL divergences and Fisher-vector products.
//! - [`adaptation`]: the safety state, per-step gate `beta`, the adaptive
//!   `alpha` schedule and the decomposition of the cost advantage.
//! - [`trustregion`]: conjugate gradient, the single-constraint dual and
//!   the backtracking line search.
//! - [`trainer`]: advantage estimation, per-epoch updates for the constrained
//!   algorithm and its baselines, and the training loop.

// `!(x <= y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod cmdp;
pub mod envs;
pub mod error;
pub mod policy;
pub mod trainer;
pub mod trustregion;

pub use error::{Error, Result};
