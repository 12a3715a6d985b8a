//! Numerical transfer-operator toolkit for random compositions of piecewise
//! monotone interval maps with holes.
//!
//! Functions of bounded variation are represented by [`interval_fn::PiecewiseFn`].
//! [`transfer::Ensemble`] bundles the maps, a potential and a driving system, and
//! applies the weighted transfer operator fiber by fiber. On top of that sit the
//! Hilbert cone tools ([`cone`]), certification of the contraction condition
//! ([`certify`]), equivariant densities, conformal functionals and derived
//! quantities ([`rpf`]), escape rates ([`escape`]) and an independent Ulam
//! discretization used as a cross-check ([`oracle`]).

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod interval_fn;
pub mod random_map;
pub mod driver;
pub mod transfer;
pub mod cone;
pub mod stats;
pub mod rpf;
pub mod certify;
pub mod escape;
pub mod oracle;
pub mod config;

pub use error::{Result, RpfError};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
