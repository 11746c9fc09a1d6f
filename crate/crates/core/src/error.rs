use thiserror::Error;

use crate::conic::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The interior-point method stopped without meeting its tolerances.
    /// Carries the final residuals so callers can decide whether the
    /// iterate is still usable.
    #[error("solver did not converge ({status:?}): primal res {primal_residual:.3e}, dual res {dual_residual:.3e}, gap {gap:.3e}")]
    SolverFailure {
        status: SolveStatus,
        primal_residual: f64,
        dual_residual: f64,
        gap: f64,
    },

    /// The requested residual budget is below the smallest residual any
    /// nonnegative amplitude vector can reach.
    #[error("infeasible: residual budget {budget:.4e} < minimal achievable residual {min_residual:.4e}; increase epsilon_d")]
    Infeasible { budget: f64, min_residual: f64 },

    #[error("degenerate dual certificate: |p(tau)| is (numerically) constant")]
    DegenerateCertificate,

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
