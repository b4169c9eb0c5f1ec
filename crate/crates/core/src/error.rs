use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A domain invariant failed; `name` identifies which one.
    #[error("invariant violated ({name}): {detail}")]
    Invariant { name: &'static str, detail: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular local system")]
    SingularLocalSystem,

    #[error("no convergence in {stage} after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        stage: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("degenerate dual derivative at z = {z}")]
    Degenerate { z: f64 },

    #[error("all-zero graph: every candidate edge clipped to zero")]
    AllZeroGraph,

    #[error("illegal edge {from} -> {to}")]
    IllegalEdge { from: usize, to: usize },

    #[error("could not generate connected graph after {retries} retries")]
    TopologyGeneration { retries: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invariant(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Invariant {
            name,
            detail: detail.into(),
        }
    }

    /// Name of the violated invariant, if this is an invariant error.
    pub fn invariant_name(&self) -> Option<&'static str> {
        match self {
            Error::Invariant { name, .. } => Some(name),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
