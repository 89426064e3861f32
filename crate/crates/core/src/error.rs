use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("degenerate scan: need at least {needed} points, got {got}")]
    DegenerateScan { needed: usize, got: usize },

    #[error("scan has no normals")]
    MissingNormals,

    #[error("degenerate registration: {0} correspondences, need at least 4")]
    DegenerateRegistration(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("config: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format: {0}")]
    Format(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
