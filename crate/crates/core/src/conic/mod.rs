//! Conic interior-point solver and the two problem templates built on it:
//! the Toeplitz SDP behind the line-spectrum estimator and the l1-type SOCP
//! used for amplitude refinement and grid-based sparse recovery.

pub mod cones;
pub mod ipm;

pub use ipm::{
    solve, ConeProgram, ConeSolution, Equality, LinearBlock, PsdBlock, SocBlock, SolveStatus,
    SolverOptions,
};
pub mod sdp;

pub use sdp::{
    certificate_residuals, solve_dual_sdp, solve_dual_sdp_with, CertificateResiduals,
    DualCertificate, SdpProblem,
};
pub mod socp;

pub use socp::{solve_l1_socp, solve_l1_socp_signed, SocpProblem, SocpSolution};
