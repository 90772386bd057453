//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

use crate::fusion::IterationRecord;

/// Unified error for dataset handling, graph construction, spectral
/// analysis, selection, and fusion.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that must agree do not (row counts, component counts, mode
    /// counts).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An operation received an empty collection it cannot work with.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A file could not be parsed; `row` is the 1-based line number,
    /// counting the header.
    #[error("{path}: parse error at line {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An index list is not a permutation of `0..n`.
    #[error("invalid permutation: {0}")]
    Permutation(String),

    /// The operation does not apply to the object in its current state.
    #[error("invalid state: {0}")]
    State(String),

    /// The data admits no meaningful answer (all points identical, zero
    /// degree, constant component where variation is required).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// The graph has more than one near-zero Laplacian eigenvalue, so a
    /// Fiedler vector is not defined.
    #[error("disconnected graph: {near_zero} eigenvalues within the zero tolerance")]
    Disconnected { near_zero: usize },

    /// Eigenpair extraction requires a symmetric Laplacian (`p_exp ==
    /// q_exp`).
    #[error("unsupported normalization: p_exp={p_exp} != q_exp={q_exp} gives a non-symmetric operator")]
    UnsupportedNormalization { p_exp: f64, q_exp: f64 },

    /// A numerical routine produced non-finite values or failed to meet its
    /// accuracy contract.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// The descent solver could not make progress; `trace` holds the
    /// accepted iterates up to the failure.
    #[error("optimization failed: {msg}")]
    OptimizationFailure {
        msg: String,
        trace: Vec<IterationRecord>,
    },

    /// Low- and high-fidelity datasets cannot be joined (name or width
    /// disagreement, index out of range).
    #[error("alignment error: {0}")]
    Alignment(String),

    /// The requested dense computation is too large; the message names the
    /// supported alternative.
    #[error("size limit: {0}")]
    Size(String),

    /// A registry lookup (generator or function-pair name) found nothing.
    #[error("unknown name: {0}")]
    Registry(String),

    /// A generator specification is internally inconsistent.
    #[error("invalid spec: {0}")]
    Spec(String),

    /// Two artifacts that should describe the same objects do not.
    #[error("comparison error: {0}")]
    Comparison(String),

    /// Filesystem failure wrapped with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
