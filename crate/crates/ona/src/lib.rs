//! Directed co-occurrence ("ONA-style") network analysis of coded
//! discussion transcripts: accumulation over a moving window of turns,
//! normalization, means-rotation projection and Welch comparison.

pub mod export;
pub mod ingest;
pub mod network;
pub mod projection;
pub mod registry;
pub mod report;
pub mod stats;

pub use ingest::{ingest, CodedTurn, Conversation};
pub use network::{accumulate, normalize, Accumulation, OnaNetwork};
pub use projection::{project, Projection};
pub use registry::CodeRegistry;
pub use stats::{compare, Comparison};

#[derive(Debug, thiserror::Error)]
pub enum OnaError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("line {line}: unknown code {code}")]
    UnknownCode { line: usize, code: String },
    #[error("registry: {0}")]
    Registry(String),
    #[error("window must be at least 1")]
    Window,
    #[error("groups: {0}")]
    Groups(String),
    #[error("both groups have zero variance")]
    ZeroVariance,
    #[error("statistics: {0}")]
    Stats(String),
}
