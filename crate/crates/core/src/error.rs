//! Error types shared across the toolkit.

use thiserror::Error;

/// Top-level error for all toolkit operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A requested fit/subset is mathematically impossible (e.g. fewer
    /// samples than coefficients).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Least-squares design is rank deficient or numerically singular.
    #[error("ill-conditioned design matrix (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },

    /// Iterative solver hit its iteration cap before reaching tolerance.
    /// Carries the best iterate found so the caller can still inspect it.
    #[error("solver did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    /// The SS3T outer loop hit its cap; carries the objective trace and the
    /// best iterate (concatenated WM | GM | CSF coefficients).
    #[error("alternating solver did not converge within {outer_iterations} outer iterations")]
    Ss3tNonConverged {
        outer_iterations: usize,
        objective_trace: Vec<f64>,
        best: Vec<f64>,
    },

    /// The acquisition does not satisfy a solver's shell requirements.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// No voxels eligible for a population statistic.
    #[error("empty population: {0}")]
    EmptyPopulation(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// Training loss became non-finite.
    #[error("training aborted: {0}")]
    AbortedTraining(String),

    /// Cohort/gradient-table mismatch in an experiment driver.
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Infeasible(_) => "infeasible",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::NonConverged { .. } => "non_converged",
            Error::Ss3tNonConverged { .. } => "non_converged",
            Error::InvalidModel(_) => "invalid_model",
            Error::EmptyPopulation(_) => "empty_population",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::AbortedTraining(_) => "aborted_training",
            Error::InvalidCohort(_) => "invalid_cohort",
            Error::Format(e) => e.code(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

/// File-format errors with distinct codes per failure mode.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i32),

    #[error("unsupported feature: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::MalformedHeader(_) => "malformed_header",
            FormatError::TruncatedPayload { .. } => "truncated_payload",
            FormatError::UnsupportedDatatype(_) => "unsupported_datatype",
            FormatError::Unsupported(_) => "unsupported_feature",
            FormatError::Parse { .. } => "parse_error",
        }
    }
}
