//! Principal eigenvalue of the non-local operator `-½u'' + γV(u - ∫u dμ)` on
//! `(0,1)` with Dirichlet conditions.
//!
//! Two independent eigen routes (a scalar fixed point built from two
//! boundary-value problems, and shifted inverse iteration on the
//! rank-one-perturbed finite-difference matrix), large-γ limit constants and
//! sweeps, a Monte Carlo simulator of the underlying jump-diffusion, and an
//! explorer for rate profiles that vanish on the boundary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asym;
pub mod bvp;
pub mod cli;
pub mod degenerate;
pub mod eigen;
pub mod error;
pub mod mc;
pub mod model;
pub mod tridiag;

pub use error::{Error, Result};
