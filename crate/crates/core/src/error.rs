use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A forward operation produced NaN or an infinity.
    NonFinite { op: &'static str },
    /// Token id outside the vocabulary.
    Vocabulary { id: usize, size: usize },
    /// Sequence longer than the configured maximum.
    Length { len: usize, max: usize },
    Config(String),
    Input(String),
    /// Instance too large for an enumeration oracle.
    Bound(String),
    Options(String),
    Checkpoint(String),
    /// Correlation undefined (zero variance or too few points).
    Correlation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "dimension error in {op}: {left:?} vs {right:?}")
            }
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::Vocabulary { id, size } => {
                write!(f, "token id {id} out of range for vocabulary of size {size}")
            }
            Error::Length { len, max } => {
                write!(f, "sequence length {len} exceeds maximum {max}")
            }
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Bound(msg) => write!(f, "instance too large: {msg}"),
            Error::Options(msg) => write!(f, "option error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Correlation(msg) => write!(f, "undefined correlation: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
