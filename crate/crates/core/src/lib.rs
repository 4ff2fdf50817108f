//! Local/non-local decomposition of the measurement statistics of the
//! two-qubit pure states `cos θ |00⟩ + sin θ |11⟩`.
//!
//! The crate provides the quantum predictions, an explicit local
//! hidden-variable model built on a shared Bloch vector, the machinery to
//! test and extract the local weight of that model, chained Bell upper
//! bounds, and a checker for two-variable local models.
//!
//! Heavy sweeps run on rayon when the `parallel` feature is enabled (the
//! default). Every sweep takes an [`Exec`] so the sequential path stays
//! available for comparison and reproducibility checks.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chained;
pub mod decomposition;
pub mod density;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod local_model;
pub mod quadrature;
pub mod quantum;
pub mod report;
pub mod search;
pub mod two_lambda;

pub use error::{Error, Result};
pub use exec::Exec;
pub use geometry::{BlochVector, RandomStream, SettingPair, StateParam};
pub use quantum::{Correlator, JointDistribution, Outcome};
