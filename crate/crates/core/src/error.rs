use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error("invalid target sequence: {0}")]
    Target(String),
    #[error("invalid lattice: {0}")]
    Lattice(String),
    #[error("invalid action path: {0}")]
    Path(String),
    #[error("READ attempted at terminal column (i = {t}, j = {j})")]
    ReadAtTerminal { t: usize, j: usize },
    #[error("no admissible path through the lattice")]
    NoAdmissiblePath,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid latency parameters: {0}")]
    Latency(String),
    #[error("invalid delays: {0}")]
    Delays(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scorer returned an unnormalized distribution (logsumexp = {0})")]
    Unnormalized(f64),
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
