//! Error type shared by every stage of the simulator.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),
    #[error("numerical rank deficiency: {0}")]
    NumericalRank(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no cycle-frequency peak above threshold")]
    NoPeaks,
    #[error("inconsistent peak count: {0}")]
    InconsistentPeakCount(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("link classification failed: {0}")]
    Classification(String),
    #[error("degenerate pulse: {0}")]
    DegeneratePulse(String),
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
