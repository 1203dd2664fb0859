//! Constrained spherical deconvolution: the non-negative quadratic
//! programming engine plus the single-tissue, MSMT, and SS3T solvers.

mod incqr;
mod nnqp;
mod solvers;

pub use nnqp::{nnqp_solve, nnqp_solve_warm, Diagnostics, NnqpSolution, QpProblem, SolverConfig};
pub use solvers::{
    csd_single, fit_volume, msmt_csd, ss3t_csd, FitMethod, FitReport, MsmtCsd, SingleShellCsd,
    Ss3tCsd, Ss3tOutcome, TissueDecomposition,
};
