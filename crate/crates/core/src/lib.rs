//! Calderón–Zygmund machinery on finite metric measure spaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`mms`] – finite metric measure spaces, point sets, balls and dilations.
//! * [`models`] – generators for grids, trees, discrete groups and the
//!   solvable product model.
//! * [`cubes`] – deterministic Christ-type dyadic cubes.
//! * [`family`] – doubling sets, doubling families and density.
//! * [`maximal`] – the family maximal operator and weak (1,1) checks.
//! * [`cz`] – stopping-time selection, decomposition, verification,
//!   coarsening and constant scans.
//! * [`chains`] – quadratic forms, doubling chains of metrics and the base
//!   family on the solvable model.
//! * [`amenability`] – r-doubling (Følner-type) sets and the product
//!   inequality for group models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amenability;
pub mod chains;
pub mod cubes;
pub mod cz;
pub mod error;
pub mod family;
pub mod function;
pub mod maximal;
pub mod mms;
pub mod models;

pub use error::{CzError, Result};
pub use mms::{MetricKind, MetricMeasureSpace, PointId, PointSet};

/// Relative slack applied to every measure inequality.
pub const MEASURE_SLACK: f64 = 1e-9;

/// Relative tolerance for mean-zero and reconstruction identities.
pub const IDENTITY_TOL: f64 = 1e-12;

/// `a <= b` up to [`MEASURE_SLACK`] relative to the larger magnitude.
#[inline]
pub fn le_slack(a: f64, b: f64) -> bool {
    a <= b || (a.is_finite() && a <= b + MEASURE_SLACK * a.abs().max(b.abs()))
}
