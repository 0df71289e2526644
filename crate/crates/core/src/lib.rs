//! Robust distributed gradient descent with SMEA and CWTM aggregation,
//! adversarial dataset constructions, a tailored Byzantine attack, and the
//! measurement tools needed to compare algorithmic stability under data
//! poisoning and Byzantine failures.

pub mod aggregation;
pub mod analysis;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod losses;
pub mod threats;
pub mod verify;

pub use error::{Error, Result};
