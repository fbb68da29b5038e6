use thiserror::Error;

/// Errors raised by the model, analysis and control routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("negative state component {component} = {value:e}")]
    NegativeState { component: &'static str, value: f64 },

    #[error("state component {component} = {value:e} exceeded the blow-up guard {limit} at t = {t}")]
    BlowUp {
        t: f64,
        component: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("operation not supported for model {0}")]
    UnsupportedModel(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("fit diverged: {0}")]
    FitDiverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
