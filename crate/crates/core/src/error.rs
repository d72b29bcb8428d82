use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which bound of the copy mechanism a requested (accuracy, kappa) target violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopyBound {
    /// Copy probability outside [0, 1].
    Alpha,
    /// Independent draw rate outside [0, 1].
    IndependentRate,
}

impl fmt::Display for CopyBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CopyBound::Alpha => write!(f, "copy probability alpha"),
            CopyBound::IndependentRate => write!(f, "independent draw rate p'"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("probability {name} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },

    #[error(
        "infeasible copy model (p_L = {leader}, p_F = {follower}, kappa = {kappa}): \
         {bound} = {value} is outside [0, 1]"
    )]
    Infeasible {
        leader: f64,
        follower: f64,
        kappa: f64,
        bound: CopyBound,
        value: f64,
    },

    #[error("degenerate leader accuracy p_L = {leader}: only kappa = 0 is defined, got {kappa}")]
    DegenerateLeader { leader: f64, kappa: f64 },

    #[error("inconsistent parameters: {0}")]
    Inconsistent(String),

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: &'static str },

    #[error("{path}:{line}: duplicate vote for case `{case_id}` by rater `{rater_id}`")]
    DuplicateVote {
        path: PathBuf,
        line: u64,
        case_id: String,
        rater_id: String,
    },

    #[error("{path}:{line}: duplicate entry for case `{case_id}`")]
    DuplicateCase {
        path: PathBuf,
        line: u64,
        case_id: String,
    },

    #[error("{path}:{line}: value {value} for case `{case_id}` is outside [0, 1]")]
    ScoreOutOfRange {
        path: PathBuf,
        line: u64,
        case_id: String,
        value: String,
    },

    #[error("{path}:{line}: invalid label `{value}` (expected 0 or 1)")]
    InvalidLabel {
        path: PathBuf,
        line: u64,
        value: String,
    },

    #[error("rate undefined: no {0} cases")]
    UndefinedRate(&'static str),

    #[error("cannot stratify into {folds} folds: only {available} {class} cases")]
    Stratification {
        folds: usize,
        available: usize,
        class: &'static str,
    },

    #[error("case `{case_id}` has {available} raters, {needed} required")]
    TooFewRaters {
        case_id: String,
        needed: usize,
        available: usize,
    },

    #[error("no evaluable cases: {0}")]
    NoEvaluableCases(String),

    #[error("unknown rater `{0}`")]
    UnknownRater(String),

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Infeasible,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Infeasible { .. } | Error::DegenerateLeader { .. } => ErrorKind::Infeasible,
            Error::Io { .. } => ErrorKind::Io,
            Error::Csv { source, .. } if source.is_io_error() => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::ProbabilityOutOfRange { name, value })
    }
}
