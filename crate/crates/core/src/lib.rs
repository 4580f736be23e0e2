//! Diverse Bayesian optimization with the expected diverse utility (EDU)
//! acquisition.
//!
//! The crate provides a Gaussian-process surrogate ([`gp`]), closed-form
//! acquisitions with gradients ([`acquisition`]), a multi-start box
//! optimizer ([`optimizer`]), sequential and batch optimization loops with
//! an ask/tell interface ([`bo`]), the test problems used to assess diverse
//! optimization ([`benchmarks`]) and coverage metrics ([`metrics`]).

pub mod acquisition;
pub mod benchmarks;
pub mod bo;
pub mod error;
pub mod gp;
pub mod metrics;
pub mod normal;
pub mod optimizer;

pub use error::{Error, Result};
