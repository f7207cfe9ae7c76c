//! Value types and their canonical text encodings: message-log lines,
//! checkpoint lines and network frames.

mod amount;
mod control;
mod ids;
mod log;

use alloc::string::String;
use core::fmt;

pub use amount::{format_amount, parse_amount, Amount};
pub use control::{encode_control, parse_control, ClientReply, ClientRequest, ControlMessage};
pub use ids::{AccountId, BranchId};
pub use log::{
    encode_checkpoint_line, encode_checkpoint_text, encode_log_line, encode_log_text,
    parse_checkpoint_line, parse_checkpoint_text, parse_log_line, parse_log_text,
    CheckpointEntry, LineError, LogRecord,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseError {
    Amount { text: String, reason: &'static str },
    Token { text: String, expected: &'static str },
    Grammar { text: String, expected: &'static str },
    BranchOutOfRange(u64),
    WrongBranch { expected: BranchId, found: BranchId },
    UnknownKeyword(String),
    Arity { keyword: &'static str, expected: usize, found: usize },
    /// Last line of a file is missing its newline.
    Truncated,
    Empty,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::Amount { text, reason } => write!(f, "bad amount {text:?}: {reason}"),
            ParseError::Token { text, expected } => write!(f, "expected {expected}, got {text:?}"),
            ParseError::Grammar { text, expected } => {
                write!(f, "malformed {text:?}, expected {expected}")
            }
            ParseError::BranchOutOfRange(n) => write!(
                f,
                "branch {n} outside {}..={}",
                BranchId::MIN,
                BranchId::MAX
            ),
            ParseError::WrongBranch { expected, found } => {
                write!(f, "record tagged for branch {found}, expected {expected}")
            }
            ParseError::UnknownKeyword(k) => write!(f, "unknown keyword {k:?}"),
            ParseError::Arity {
                keyword,
                expected,
                found,
            } => write!(f, "{keyword} takes {expected} argument(s), got {found}"),
            ParseError::Truncated => f.write_str("unterminated final line"),
            ParseError::Empty => f.write_str("empty frame"),
        }
    }
}

impl core::error::Error for ParseError {}
