use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on a dimension.
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    /// A token id is outside the model vocabulary.
    TokenOutOfVocab { token: usize, vocab: usize },
    /// A class target is outside the number of classes.
    ClassOutOfRange { class: usize, classes: usize },
    EmptySequence,
    EmptyDataset,
    /// A gradient or loss became NaN or infinite.
    NonFinite { what: &'static str, detail: String },
    /// The target kind does not fit the model head.
    TaskMismatch(&'static str),
    InvalidArgument(String),
    /// Line-oriented parsing failure, 1-based line number.
    Parse { line: usize, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { op, expected, found } => {
                write!(f, "{op}: dimension mismatch (expected {expected}, found {found})")
            }
            Error::TokenOutOfVocab { token, vocab } => {
                write!(f, "token {token} is outside the vocabulary of size {vocab}")
            }
            Error::ClassOutOfRange { class, classes } => {
                write!(f, "class {class} is outside 0..{classes}")
            }
            Error::EmptySequence => f.write_str("empty token sequence"),
            Error::EmptyDataset => f.write_str("empty dataset"),
            Error::NonFinite { what, detail } => write!(f, "non-finite {what}: {detail}"),
            Error::TaskMismatch(msg) => write!(f, "task mismatch: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Parse { line, message } => write!(f, "line {line}: {message}"),
        }
    }
}

impl core::error::Error for Error {}
