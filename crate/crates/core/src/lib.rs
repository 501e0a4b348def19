//! Locally differentially private stream publication.
//!
//! The building blocks are the Square Wave mechanism ([`mechanism`]), the
//! per-user perturbation-parameterization state machines ([`perturber`]),
//! CAPP clip intervals ([`clip`]), segment sampling ([`sampling`]),
//! collector-side smoothing ([`smoothing`]), w-event budget accounting
//! ([`ledger`]), utility metrics ([`metrics`]), multi-dimensional strategies
//! ([`highdim`]) and an experiment harness ([`harness`]).

pub mod clip;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod highdim;
pub mod ledger;
pub mod mechanism;
pub mod metrics;
pub mod perturber;
pub mod sampling;
pub mod smoothing;

pub use error::{Error, Result};
