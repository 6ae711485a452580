use std::path::PathBuf;

use crate::netgraph::{LayerId, LayerKind, Violation};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("layer {layer} ({kind:?}) is not quantizable")]
    NotQuantizable { layer: LayerId, kind: LayerKind },

    #[error("graph failed validation with {} violation(s); first: {}", .0.len(), .0[0])]
    InvalidGraph(Vec<Violation>),

    #[error("degenerate filter: {0}")]
    DegenerateFilter(&'static str),

    #[error("no plan entry for layer {0}")]
    MissingPlanEntry(LayerId),

    #[error("plan does not match graph: {0}")]
    PlanMismatch(String),

    #[error("shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch { layer: LayerId, detail: String },

    #[error("accumulator bound exceeded at layer {layer}: worst case {worst} does not fit in {capacity}")]
    AccumulatorBound {
        layer: LayerId,
        worst: u64,
        capacity: u64,
    },

    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for I/O failures,
    /// 1 for everything else (bad input, bad configuration, failed checks).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Csv(_) => 2,
            _ => 1,
        }
    }
}
