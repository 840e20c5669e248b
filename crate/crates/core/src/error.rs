use std::path::PathBuf;

use thiserror::Error;

use crate::tree::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The tree (or a structure built over it) breaks one of its invariants.
    #[error("structural error: {0}")]
    Structural(String),

    /// Leaf means are not Lipschitz with respect to the tree metric.
    #[error("means are not L-continuous: |mu({x}) - mu({y})| = {gap} > D = {distance}")]
    NotLipschitz {
        x: NodeId,
        y: NodeId,
        gap: f64,
        distance: f64,
    },

    /// A tree network edge violates the consistency or smallness constraint.
    #[error("edge {parent} -> {child}: {reason}")]
    EdgeConstraint {
        parent: NodeId,
        child: NodeId,
        reason: String,
    },

    #[error("mutation probabilities undefined: {0}")]
    Domain(String),

    /// Conditioning on an event of probability zero.
    #[error("conditioning event has probability {0}")]
    NullEvent(f64),

    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),

    #[error("refusing exhaustive search over {0} subsets")]
    TooManySubsets(u128),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }
}
