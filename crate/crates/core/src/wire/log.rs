//! Message-log and checkpoint line grammars.
//!
//! Every line starts with `BANK #<branch>:`. Message-log bodies are
//! `OPEN <acct>`, `DEPOSIT <acct> <amt>`, `WITHDRAW <acct> <amt>` and
//! `TRANSFER START|COMMIT|CANCEL <src>-<dst>`; checkpoint bodies are
//! `<acct> <balance>`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{parse_amount, AccountId, Amount, BranchId, ParseError};

/// One state-changing message as recorded in a branch's message log.
/// Balance queries never appear here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LogRecord {
    Open { account: AccountId },
    Deposit { account: AccountId, amount: Amount },
    Withdraw { account: AccountId, amount: Amount },
    TransferStart { src: AccountId, dst: AccountId },
    TransferCommit { src: AccountId, dst: AccountId },
    TransferCancel { src: AccountId, dst: AccountId },
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogRecord::Open { account } => write!(f, "OPEN {account}"),
            LogRecord::Deposit { account, amount } => write!(f, "DEPOSIT {account} {amount}"),
            LogRecord::Withdraw { account, amount } => write!(f, "WITHDRAW {account} {amount}"),
            LogRecord::TransferStart { src, dst } => write!(f, "TRANSFER START {src}-{dst}"),
            LogRecord::TransferCommit { src, dst } => write!(f, "TRANSFER COMMIT {src}-{dst}"),
            LogRecord::TransferCancel { src, dst } => write!(f, "TRANSFER CANCEL {src}-{dst}"),
        }
    }
}

/// One account's balance as recorded in a checkpoint file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CheckpointEntry {
    pub account: AccountId,
    pub balance: Amount,
}

/// A line number (1-based) attached to a grammar failure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub error: ParseError,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.error)
    }
}

impl core::error::Error for LineError {}

pub fn encode_log_line(branch: BranchId, record: &LogRecord) -> String {
    format!("BANK #{branch}:{record}")
}

pub fn parse_log_line(line: &str) -> Result<(BranchId, LogRecord), ParseError> {
    let (branch, body) = split_tag(line)?;
    let record = parse_log_body(body).ok_or_else(|| ParseError::Grammar {
        text: line.into(),
        expected: "OPEN, DEPOSIT, WITHDRAW or TRANSFER START|COMMIT|CANCEL record",
    })??;
    Ok((branch, record))
}

pub fn encode_checkpoint_line(branch: BranchId, entry: &CheckpointEntry) -> String {
    format!("BANK #{branch}:{} {}", entry.account, entry.balance)
}

pub fn parse_checkpoint_line(line: &str) -> Result<(BranchId, CheckpointEntry), ParseError> {
    let (branch, body) = split_tag(line)?;
    let grammar = || ParseError::Grammar {
        text: line.into(),
        expected: "<account> <balance>",
    };
    let (acct, bal) = body.split_once(' ').ok_or_else(grammar)?;
    if bal.contains(' ') {
        return Err(grammar());
    }
    Ok((
        branch,
        CheckpointEntry {
            account: acct.parse()?,
            balance: parse_amount(bal)?,
        },
    ))
}

/// Parses a whole message-log file for `branch`. Every line, including the
/// last, must be newline-terminated.
pub fn parse_log_text(branch: BranchId, text: &str) -> Result<Vec<LogRecord>, LineError> {
    parse_lines(branch, text, parse_log_line)
}

/// Parses a whole checkpoint file for `branch`.
pub fn parse_checkpoint_text(
    branch: BranchId,
    text: &str,
) -> Result<Vec<CheckpointEntry>, LineError> {
    parse_lines(branch, text, parse_checkpoint_line)
}

pub fn encode_log_text<'a>(
    branch: BranchId,
    records: impl IntoIterator<Item = &'a LogRecord>,
) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&encode_log_line(branch, r));
        out.push('\n');
    }
    out
}

pub fn encode_checkpoint_text<'a>(
    branch: BranchId,
    entries: impl IntoIterator<Item = &'a CheckpointEntry>,
) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&encode_checkpoint_line(branch, e));
        out.push('\n');
    }
    out
}

fn parse_lines<T>(
    branch: BranchId,
    text: &str,
    parse: impl Fn(&str) -> Result<(BranchId, T), ParseError>,
) -> Result<Vec<T>, LineError> {
    let mut out = Vec::new();
    if text.is_empty() {
        return Ok(out);
    }
    let body = text.strip_suffix('\n').ok_or(LineError {
        line: text.lines().count(),
        error: ParseError::Truncated,
    })?;
    for (i, line) in body.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        let (tag, value) = parse(line).map_err(|error| LineError { line: i + 1, error })?;
        if tag != branch {
            return Err(LineError {
                line: i + 1,
                error: ParseError::WrongBranch {
                    expected: branch,
                    found: tag,
                },
            });
        }
        out.push(value);
    }
    Ok(out)
}

fn split_tag(line: &str) -> Result<(BranchId, &str), ParseError> {
    let grammar = || ParseError::Grammar {
        text: line.into(),
        expected: "BANK #<branch>:<body>",
    };
    let rest = line.strip_prefix("BANK #").ok_or_else(grammar)?;
    let (branch, body) = rest.split_once(':').ok_or_else(grammar)?;
    Ok((branch.parse()?, body))
}

fn parse_log_body(body: &str) -> Option<Result<LogRecord, ParseError>> {
    let tokens: Vec<&str> = body.split(' ').collect();
    let rec = match tokens.as_slice() {
        ["OPEN", acct] => acct.parse().map(|account| LogRecord::Open { account }),
        ["DEPOSIT", acct, amt] => acct.parse().and_then(|account| {
            parse_amount(amt).map(|amount| LogRecord::Deposit { account, amount })
        }),
        ["WITHDRAW", acct, amt] => acct.parse().and_then(|account| {
            parse_amount(amt).map(|amount| LogRecord::Withdraw { account, amount })
        }),
        ["TRANSFER", kind, pair] => {
            let (src, dst) = match pair.split_once('-') {
                Some((s, d)) => match (s.parse(), d.parse()) {
                    (Ok(s), Ok(d)) => (s, d),
                    (Err(e), _) | (_, Err(e)) => return Some(Err(e)),
                },
                None => return None,
            };
            match *kind {
                "START" => Ok(LogRecord::TransferStart { src, dst }),
                "COMMIT" => Ok(LogRecord::TransferCommit { src, dst }),
                "CANCEL" => Ok(LogRecord::TransferCancel { src, dst }),
                _ => return None,
            }
        }
        _ => return None,
    };
    Some(rec)
}
