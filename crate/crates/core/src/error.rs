use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped by the exit code the CLI maps them to: usage errors
/// exit with 1, data and validation problems with 2, numerical failures
/// with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: column `{0}` not found")]
    MissingColumn(String),

    #[error("parse error at row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("arm error: the {0} arm is empty")]
    EmptyArm(&'static str),

    #[error("separation: treatment is constant ({0}) and no ridge penalty was given")]
    Separation(&'static str),

    #[error("rank deficient design ({0}); use a positive ridge penalty or drop collinear columns")]
    RankDeficient(String),

    #[error("fold {fold}: training complement has no {arm} units")]
    Fold { fold: usize, arm: &'static str },

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("no matched pairs within the caliper")]
    EmptyMatch,

    #[error("empty cell: group {group}, period {period}")]
    EmptyCell { group: u8, period: i64 },

    #[error("bandwidth too narrow: {side} side has {count} usable points (need 2)")]
    Bandwidth { side: &'static str, count: usize },

    #[error("instrument irrelevant: first stage is zero")]
    InstrumentIrrelevant,

    #[error("not identified: {0}")]
    Identification(String),

    #[error("functional not evaluable: {0}")]
    Evaluability(String),

    #[error("support error: {0}")]
    Support(String),

    #[error("step size error: {0}")]
    Step(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{failed} of {total} replications failed for `{estimator}`")]
    TooManyFailures {
        estimator: String,
        failed: usize,
        total: usize,
    },
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Io { .. }
            | Error::Csv(_)
            | Error::MissingColumn(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Config(_)
            | Error::EmptyArm(_)
            | Error::Fold { .. }
            | Error::EmptyCell { .. }
            | Error::Bandwidth { .. }
            | Error::Support(_)
            | Error::InsufficientData(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
