//! Parsimonious mixtures of multivariate contaminated normal distributions.

pub mod classify;
pub mod cli;
pub mod data;
pub mod engine;
pub mod init;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod mvn;
pub mod report;
pub mod scalar;
pub mod selection;
pub mod simulate;
pub mod structures;

pub use error::{CnError, Result};
