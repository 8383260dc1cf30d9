use crate::linalg::SolverReport;

/// Errors produced by mesh construction, assembly, solvers and the time stepper.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("field length {field_len} does not match mesh vertex count {mesh_len}")]
    MeshMismatch { field_len: usize, mesh_len: usize },

    #[error("non-finite value {value} at vertex {vertex}")]
    NonFinite { vertex: usize, value: f64 },

    #[error("nonpositive value {value} at vertex {vertex} (strict positivity required)")]
    NonPositive { vertex: usize, value: f64 },

    #[error("linear solver failed after {} iterations, residual {:e}", report.iterations, report.final_residual)]
    SolverFailure { report: SolverReport },

    #[error("Newton iteration failed at step {step}: {reason} ({iterations} iterations, residual {residual:e})")]
    NewtonFailed {
        step: usize,
        reason: String,
        iterations: usize,
        residual: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
