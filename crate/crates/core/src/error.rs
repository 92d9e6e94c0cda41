use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty input: no samples found")]
    EmptyInput,

    #[error("invalid block partition: {0}")]
    Partition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid solver configuration: {0}")]
    Config(String),

    #[error("coefficient {index} is {value} but its block is not in the active set")]
    InactiveMass { index: usize, value: f64 },

    #[error("oracle hit the iteration cap with duality gap {gap:e}")]
    OracleCap { best: Vec<f64>, gap: f64 },

    #[error("solver diverged at epoch {epoch} (objective {objective:e}); try a smaller step size")]
    Diverged { epoch: u64, objective: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("worker {worker} disconnected: {reason}")]
    Disconnected { worker: usize, reason: String },

    #[error("frame error: {0}")]
    Frame(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
