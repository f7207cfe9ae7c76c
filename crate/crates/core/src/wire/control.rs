//! Network frames exchanged between clients, branch servers, the recovery
//! coordinator and the monitor. One frame is one `\n`-terminated line of
//! space-separated tokens.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::{parse_amount, AccountId, Amount, BranchId, ParseError};

/// Requests a client sends to a branch server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClientRequest {
    Open,
    Deposit { account: AccountId, amount: Amount },
    Withdraw { account: AccountId, amount: Amount },
    Balance { account: AccountId },
    Transfer { src: AccountId, dst: AccountId, amount: Amount },
    Accounts,
}

/// A branch server's answer to a [`ClientRequest`]: `OK <payload>` or
/// `ERR <message>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClientReply {
    Ok(String),
    Err(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlMessage {
    /// `{BS#} TRANSFER {src} {dst} {amount}`, leader to receiving branch.
    Transfer {
        from: BranchId,
        src: AccountId,
        dst: AccountId,
        amount: Amount,
    },
    /// `{BS#} OK`. Sent by the receiving branch after its deposit, and echoed
    /// back by the leader once its commit record is durable.
    PeerOk { branch: BranchId },
    /// `{BS#} {error text}`.
    PeerErr { branch: BranchId, message: String },
    Dependency { a: BranchId, b: BranchId },
    CheckpointRequest { branch: BranchId },
    ReadyForCheckpoint,
    DoCheckpoint,
    CancelCheckpoint,
    CheckpointDone,
    Register { host: String, branch: BranchId },
    Heartbeat { branch: BranchId },
    Restart { branch: BranchId },
    Request(ClientRequest),
    Reply(ClientReply),
}

impl ControlMessage {
    /// The frame text including its terminating newline.
    pub fn to_frame(&self) -> String {
        let mut s = self.to_string();
        s.push('\n');
        s
    }

    /// Leading keyword, used for logging and dispatch statistics.
    pub fn keyword(&self) -> &'static str {
        use ControlMessage::*;
        match self {
            Transfer { .. } => "TRANSFER",
            PeerOk { .. } => "OK",
            PeerErr { .. } => "PEER_ERROR",
            Dependency { .. } => "DEPENDENCY",
            CheckpointRequest { .. } => "CHECKPOINT",
            ReadyForCheckpoint => "READY_FOR_CHECKPOINT",
            DoCheckpoint => "DO_CHECKPOINT",
            CancelCheckpoint => "CANCEL_CHECKPOINT",
            CheckpointDone => "CHECKPOINT_DONE",
            Register { .. } => "REGISTER_MSG",
            Heartbeat { .. } => "HEARTBEAT_MSG",
            Restart { .. } => "RESTART",
            Request(r) => match r {
                ClientRequest::Open => "OPEN",
                ClientRequest::Deposit { .. } => "DEPOSIT",
                ClientRequest::Withdraw { .. } => "WITHDRAW",
                ClientRequest::Balance { .. } => "BALANCE",
                ClientRequest::Transfer { .. } => "TRANSFER",
                ClientRequest::Accounts => "ACCOUNTS",
            },
            Reply(ClientReply::Ok(_)) => "OK",
            Reply(ClientReply::Err(_)) => "ERR",
        }
    }
}

// Frames are single lines; embedded line breaks in free text are flattened.
fn one_line(s: &str) -> impl fmt::Display + '_ {
    struct Flat<'a>(&'a str);
    impl fmt::Display for Flat<'_> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            for c in self.0.chars() {
                let c = if c == '\n' || c == '\r' { ' ' } else { c };
                fmt::Write::write_char(f, c)?;
            }
            Ok(())
        }
    }
    Flat(s)
}

impl fmt::Display for ControlMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ControlMessage::*;
        match self {
            Transfer {
                from,
                src,
                dst,
                amount,
            } => write!(f, "{from} TRANSFER {src} {dst} {amount}"),
            PeerOk { branch } => write!(f, "{branch} OK"),
            PeerErr { branch, message } => write!(f, "{branch} {}", one_line(message)),
            Dependency { a, b } => write!(f, "DEPENDENCY {a} {b}"),
            CheckpointRequest { branch } => write!(f, "CHECKPOINT {branch}"),
            ReadyForCheckpoint => f.write_str("READY_FOR_CHECKPOINT"),
            DoCheckpoint => f.write_str("DO_CHECKPOINT"),
            CancelCheckpoint => f.write_str("CANCEL_CHECKPOINT"),
            CheckpointDone => f.write_str("CHECKPOINT_DONE"),
            Register { host, branch } => write!(f, "REGISTER_MSG {} {branch}", one_line(host)),
            Heartbeat { branch } => write!(f, "HEARTBEAT_MSG {branch}"),
            Restart { branch } => write!(f, "RESTART {branch}"),
            Request(r) => match r {
                ClientRequest::Open => f.write_str("OPEN"),
                ClientRequest::Deposit { account, amount } => {
                    write!(f, "DEPOSIT {account} {amount}")
                }
                ClientRequest::Withdraw { account, amount } => {
                    write!(f, "WITHDRAW {account} {amount}")
                }
                ClientRequest::Balance { account } => write!(f, "BALANCE {account}"),
                ClientRequest::Transfer { src, dst, amount } => {
                    write!(f, "TRANSFER {src} {dst} {amount}")
                }
                ClientRequest::Accounts => f.write_str("ACCOUNTS"),
            },
            Reply(ClientReply::Ok(p)) if p.is_empty() => f.write_str("OK"),
            Reply(ClientReply::Ok(p)) => write!(f, "OK {}", one_line(p)),
            Reply(ClientReply::Err(m)) if m.is_empty() => f.write_str("ERR"),
            Reply(ClientReply::Err(m)) => write!(f, "ERR {}", one_line(m)),
        }
    }
}

pub fn encode_control(msg: &ControlMessage) -> String {
    msg.to_frame()
}

/// Parses one frame. A trailing `\n` or `\r\n` is ignored.
pub fn parse_control(frame: &str) -> Result<ControlMessage, ParseError> {
    use ControlMessage::*;
    let line = frame.strip_suffix('\n').unwrap_or(frame);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.is_empty() {
        return Err(ParseError::Empty);
    }
    if line.contains('\n') {
        return Err(ParseError::Grammar {
            text: line.into(),
            expected: "a single line",
        });
    }

    // Replies keep their payload verbatim.
    if line == "OK" {
        return Ok(Reply(ClientReply::Ok(String::new())));
    }
    if let Some(p) = line.strip_prefix("OK ") {
        return Ok(Reply(ClientReply::Ok(p.into())));
    }
    if line == "ERR" {
        return Ok(Reply(ClientReply::Err(String::new())));
    }
    if let Some(m) = line.strip_prefix("ERR ") {
        return Ok(Reply(ClientReply::Err(m.into())));
    }

    let (head, rest) = match line.split_once(' ') {
        Some((h, r)) => (h, Some(r)),
        None => (line, None),
    };

    // Branch-to-branch frames lead with the sender's branch number.
    if head.bytes().next().is_some_and(|b| b.is_ascii_digit()) {
        let branch: BranchId = head.parse()?;
        let rest = rest.filter(|r| !r.is_empty()).ok_or(ParseError::Arity {
            keyword: "{BS#}",
            expected: 2,
            found: 1,
        })?;
        if rest == "OK" {
            return Ok(PeerOk { branch });
        }
        if let Some(args) = rest.strip_prefix("TRANSFER ") {
            if let Ok([src, dst, amt]) = <[&str; 3]>::try_from(args.split(' ').collect::<Vec<_>>())
            {
                if let (Ok(src), Ok(dst), Ok(amount)) = (src.parse(), dst.parse(), parse_amount(amt))
                {
                    return Ok(Transfer {
                        from: branch,
                        src,
                        dst,
                        amount,
                    });
                }
            }
        }
        return Ok(PeerErr {
            branch,
            message: rest.into(),
        });
    }

    let args: Vec<&str> = match rest {
        Some(r) => r.split(' ').collect(),
        None => Vec::new(),
    };
    let arity = |keyword: &'static str, expected: usize| -> Result<(), ParseError> {
        if args.len() == expected {
            Ok(())
        } else {
            Err(ParseError::Arity {
                keyword,
                expected,
                found: args.len(),
            })
        }
    };

    let msg = match head {
        "DEPENDENCY" => {
            arity("DEPENDENCY", 2)?;
            Dependency {
                a: args[0].parse()?,
                b: args[1].parse()?,
            }
        }
        "CHECKPOINT" => {
            arity("CHECKPOINT", 1)?;
            CheckpointRequest {
                branch: args[0].parse()?,
            }
        }
        "READY_FOR_CHECKPOINT" => {
            arity("READY_FOR_CHECKPOINT", 0)?;
            ReadyForCheckpoint
        }
        "DO_CHECKPOINT" => {
            arity("DO_CHECKPOINT", 0)?;
            DoCheckpoint
        }
        "CANCEL_CHECKPOINT" => {
            arity("CANCEL_CHECKPOINT", 0)?;
            CancelCheckpoint
        }
        "CHECKPOINT_DONE" => {
            arity("CHECKPOINT_DONE", 0)?;
            CheckpointDone
        }
        "REGISTER_MSG" => {
            arity("REGISTER_MSG", 2)?;
            if args[0].is_empty() {
                return Err(ParseError::Token {
                    text: String::new(),
                    expected: "host address",
                });
            }
            Register {
                host: args[0].into(),
                branch: args[1].parse()?,
            }
        }
        "HEARTBEAT_MSG" => {
            arity("HEARTBEAT_MSG", 1)?;
            Heartbeat {
                branch: args[0].parse()?,
            }
        }
        "RESTART" => {
            arity("RESTART", 1)?;
            Restart {
                branch: args[0].parse()?,
            }
        }
        "OPEN" => {
            arity("OPEN", 0)?;
            Request(ClientRequest::Open)
        }
        "DEPOSIT" => {
            arity("DEPOSIT", 2)?;
            Request(ClientRequest::Deposit {
                account: args[0].parse()?,
                amount: parse_amount(args[1])?,
            })
        }
        "WITHDRAW" => {
            arity("WITHDRAW", 2)?;
            Request(ClientRequest::Withdraw {
                account: args[0].parse()?,
                amount: parse_amount(args[1])?,
            })
        }
        "BALANCE" => {
            arity("BALANCE", 1)?;
            Request(ClientRequest::Balance {
                account: args[0].parse()?,
            })
        }
        "TRANSFER" => {
            arity("TRANSFER", 3)?;
            Request(ClientRequest::Transfer {
                src: args[0].parse()?,
                dst: args[1].parse()?,
                amount: parse_amount(args[2])?,
            })
        }
        "ACCOUNTS" => {
            arity("ACCOUNTS", 0)?;
            Request(ClientRequest::Accounts)
        }
        other => return Err(ParseError::UnknownKeyword(other.into())),
    };
    Ok(msg)
}

impl FromStr for ControlMessage {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_control(s)
    }
}
