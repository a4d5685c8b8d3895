use thiserror::Error;

/// Errors raised by channel construction, matrix-series evaluation and protocol analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("degenerate Markov chain: {0}")]
    DegenerateChain(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    Dimension {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("series does not converge (spectral radius {radius})")]
    NonConvergent { radius: f64 },

    #[error("truncated series did not reach tolerance {tol} after {terms} terms")]
    Truncation { tol: f64, terms: usize },

    #[error("improper generating function: phi(1) = {value}")]
    ImproperMgf { value: f64 },

    #[error("flow graph: {0}")]
    Graph(String),
}

pub type Result<T> = std::result::Result<T, Error>;
