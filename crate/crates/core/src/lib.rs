//! Train, perturb and audit neural rationale models on five-way sentiment data.

pub mod corpus;
mod error;

pub use error::{Error, Result};
pub mod models;
pub mod perturbation;
pub mod stability;
pub mod study;
pub mod synthetic;
pub mod trojan;
