//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The overlap target cannot be reached by any geometric ratio at
    /// this dimension; the attainable open interval is reported.
    #[error(
        "overlap target {target} unattainable at dims {dims}: attainable range is ({lo}, {hi})"
    )]
    InfeasibleTarget {
        target: f64,
        dims: usize,
        lo: f64,
        hi: f64,
    },

    /// A responsibility pair needs two distinct component indices.
    #[error("responsibility pair needs distinct components, both were {index}")]
    InvalidPair { index: usize },

    /// The Langevin update is a contraction only for step bases inside
    /// (0, 2*sigma_last^2); outside it the variance recursion diverges.
    #[error("step base {epsilon} outside the stable range (0, {limit}) for the smallest scale")]
    DivergentRegime { epsilon: f64, limit: f64 },

    /// A chain coordinate left the admissible box during sampling.
    #[error(
        "chain {chain} diverged at scale {scale}/{scales}, step {step}/{steps}: \
         coordinate magnitude exceeded {threshold:e}"
    )]
    DivergedChain {
        chain: usize,
        scale: usize,
        scales: usize,
        step: usize,
        steps: usize,
        threshold: f64,
    },

    /// The training loss stopped being finite.
    #[error("training diverged at iteration {iteration}: loss is not finite")]
    TrainingDiverged { iteration: usize },

    /// Zero total variance leaves the score undefined.
    #[error("degenerate distribution: total variance is zero")]
    Degenerate,

    /// A file exists but does not have the expected layout.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(reason: impl Into<String>) -> Self {
        Error::InvalidInput(reason.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
