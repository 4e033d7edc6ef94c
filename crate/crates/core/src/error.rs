use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid hyperrectangle: {0}")]
    InvalidBox(String),

    #[error("box is not contained in the state space: {0}")]
    OutsideStateSpace(String),

    #[error("state {0:?} is outside the state space")]
    StateOutsideDomain(Vec<f64>),

    #[error("cannot split a fully degenerate box")]
    DegenerateBox,

    #[error("set sampling failed: acceptance rate below {threshold} after {attempts} attempts")]
    DegenerateSet { attempts: usize, threshold: f64 },

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {value}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        value: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
