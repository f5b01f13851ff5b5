//! Risk-aware motion control for vessels in tidal waterways.
//!
//! A point vessel tracks a reference trajectory along a one-dimensional
//! waterway while avoiding *tide islands*: stretches of the channel that are
//! too shallow for its draft. Each island is modelled as an interval with a
//! fixed center and a random radius. The controller bounds the worst-case
//! CVaR of penetration over a type-1 Wasserstein ball around the empirical
//! distribution of past radius observations.
//!
//! Modules, bottom-up:
//!
//! - [`tide_field`]: synthetic depth field, island extraction and the
//!   per-step radius observation sets.
//! - [`risk`]: safety loss, CVaR, Wasserstein distance, the robust inner
//!   supremum (LP and closed form) and the induced safe radius.
//! - [`lp`] / [`qp`]: small dense LP and QP solvers.
//! - [`mpc`]: DR-MPC, SAA-MPC and CC-MPC steps over a side-disjunction
//!   branch-and-bound, plus the closed-loop driver.
//! - [`sim`]: Monte-Carlo evaluation and sweep aggregation.
//! - [`config`], [`report`]: scenario files and output artifacts.
//! - [`verify`]: the invariant suite behind the `verify` subcommand.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod lp;
pub mod mpc;
pub mod par;
pub mod qp;
pub mod report;
pub mod risk;
pub mod sim;
pub mod tide_field;
pub mod verify;

pub use error::{Error, Result};
