use thiserror::Error;

/// Errors produced by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The exponent system has no solution; `constraint` names the first
    /// inequality that could not be met.
    #[error("infeasible exponent system: {constraint}")]
    Infeasible { constraint: String },

    #[error("eigenvalue {eigenvalue} outside [{lower}, {upper}] at t = {t}, x = {x:?}")]
    EigenvalueBand {
        t: f64,
        x: Vec<f64>,
        eigenvalue: f64,
        lower: f64,
        upper: f64,
    },

    #[error("linear solver did not converge: residual {residual:e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A requested computation exceeds the configured sweep budget.
    #[error("cost guard: {estimated} PDE sweeps requested, cap is {cap}")]
    CostGuard { estimated: u64, cap: u64 },

    #[error("state blew up at step {step}: {state:?}")]
    BlowUp { step: usize, state: Vec<f64> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
