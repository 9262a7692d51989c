use std::fmt;

use thiserror::Error;

/// A single broken invariant found while validating a joint activation matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Entry is NaN or outside `[0, 1]`.
    Range { row: usize, col: usize, value: f64 },
    /// `entries[row][col] != entries[col][row]`, reported once per unordered pair (`row < col`).
    Asymmetric { row: usize, col: usize },
    /// A joint probability exceeds one of the two marginals on the diagonal.
    JointExceedsMarginal { row: usize, col: usize, joint: f64, marginal: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Range { row, col, value } => {
                write!(f, "entry ({row},{col}) = {value} is not a probability in [0,1]")
            }
            Violation::Asymmetric { row, col } => {
                write!(f, "entries ({row},{col}) and ({col},{row}) differ (symmetry)")
            }
            Violation::JointExceedsMarginal { row, col, joint, marginal } => write!(
                f,
                "joint entry ({row},{col}) = {joint} exceeds marginal {marginal} (consistency)"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },

    #[error("invalid joint activation matrix: {}", join(.0))]
    InvalidMatrix(Vec<Violation>),

    #[error("schedule row {row}: {reason}")]
    InvalidSchedule { row: usize, reason: String },

    #[error("device {device} is assigned to channel {channel}, but only {n_channels} channels exist")]
    ChannelOutOfRange { device: usize, channel: usize, n_channels: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("instance too large for exhaustive enumeration: {count} canonical assignments (limit {limit})")]
    TooLarge { count: u128, limit: u128 },

    #[error("point is missing a value for variable `{0}`")]
    MissingVariable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl fmt::Display) -> Self {
        Error::Parse { location: location.into(), message: message.to_string() }
    }
}
