use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the evaluated function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The endemic-equilibrium equation has no sign change on its bracket.
    #[error("root bracketing failed on [{lo}, {hi}]: h(lo) = {h_lo:e}, h(hi) = {h_hi:e}")]
    Bracketing {
        lo: f64,
        hi: f64,
        h_lo: f64,
        h_hi: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
