//! Poisson CP decomposition (CP-APR) of sparse count tensors with
//! damped-Newton (PDNR) and limited-memory quasi-Newton (PQNR) row solvers,
//! plus the sweep and reporting tools used to study their parameters.

pub mod cli;
pub mod config;
pub mod cpapr;
pub mod error;
pub mod kruskal;
pub mod report;
pub mod rowprob;
pub mod sptensor;
pub mod sweep;

pub use config::{Method, Parameter, SolverConfig};
pub use cpapr::{decompose, SolveResult, SolveStatus};
pub use error::{Error, Result};
pub use kruskal::KruskalTensor;
pub use sptensor::SparseTensor;
