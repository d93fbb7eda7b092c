//! Out-of-distribution detection by prototype-based optimal transport.
//!
//! The pipeline over precomputed embeddings:
//!
//! 1. [`prototypes`]: one prototype per ID class (class mean of training
//!    embeddings, or a classifier weight column) with a probability mass.
//! 2. [`transport`]: entropic OT between prototypes and a batch of test
//!    embeddings (Sinkhorn-Knopp, plain or log-domain), decomposed into a
//!    per-sample transport cost.
//! 3. [`scorer`]: the same solve against virtual outliers extrapolated past
//!    the batch mean, and the contrastive score `T - T*`.
//! 4. [`metrics`]: AUROC and FPR at 95% TPR.
//!
//! [`ingest`] handles file formats, [`synth`] generates seeded Gaussian
//! benchmarks, and [`cli`] drives everything from the command line.

pub mod cli;
pub mod ingest;
pub mod metrics;
pub mod prototypes;
pub mod scorer;
pub mod synth;
pub mod transport;

use thiserror::Error;

pub use ingest::{FeatureMatrix, LabeledDataset, LogitMatrix};
pub use metrics::{EvalReport, Orientation};
pub use prototypes::{PrototypeSet, PrototypeSource};
pub use scorer::{ScoredBatch, StreamScores, VirtualOutlierSet};
pub use transport::{CostMatrix, Lambda, Marginals, SolverConfig, Stabilization, TransportSolution};

/// Any failure surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Prototype(#[from] prototypes::PrototypeError),
    #[error(transparent)]
    Transport(#[from] transport::TransportError),
    #[error(transparent)]
    Score(#[from] scorer::ScoreError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Synth(#[from] synth::InvalidSpec),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Structured error name printed on stderr by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Ingest(e) => e.name(),
            Error::Prototype(e) => e.name(),
            Error::Transport(e) => e.name(),
            Error::Score(e) => e.name(),
            Error::Metrics(e) => e.name(),
            Error::Synth(_) => "InvalidSpec",
            Error::Io { .. } => "IoFailure",
            Error::Json { .. } => "InvalidJson",
            Error::Usage(_) => "Usage",
        }
    }

    /// Process exit code: 2 for I/O, 3 for validation, 4 for solver failures.
    pub fn exit_code(&self) -> i32 {
        use transport::TransportError as T;
        match self {
            Error::Io { .. } | Error::Ingest(ingest::IngestError::IoFailure { .. }) => 2,
            Error::Transport(T::NumericalUnderflow(_) | T::NotConverged { .. })
            | Error::Score(scorer::ScoreError::Transport(
                T::NumericalUnderflow(_) | T::NotConverged { .. },
            )) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
