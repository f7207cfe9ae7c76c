//! Scenario file parser.
//!
//! One step per line; a free-standing `#` starts a comment. A step that
//! takes file content (`write`, `assert log`, `assert checkpoint`) is
//! followed by lines that start with `|`; the text after `| ` is one line
//! of the file.
//!
//! ```text
//! set peer-timeout 500ms
//! start rm
//! start server 1111 threshold=3
//! crashpoint 1112 before_ok_send
//! write checkpoint 1111
//! | BANK #1111:1111000 100.0
//! client 1111 transfer 1111000 1112000 10.0 => err
//! wait exit 1112
//! assert log 1112 absent
//! ```

use std::time::Duration;

use ftbank_core::wire::{parse_control, ClientRequest};
use ftbank_core::{AccountId, Amount, BranchId, ControlMessage, CrashPoint};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub steps: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    /// 1-based line number of the step keyword.
    pub line: usize,
    pub kind: StepKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setting {
    Heartbeat,
    MonitorTimeout,
    PeerTimeout,
    CheckpointTimeout,
    SessionTimeout,
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Log,
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expect {
    /// `ok` or `ok <payload>`.
    Ok(Option<String>),
    /// `err` or `err <message>`.
    Err(Option<String>),
    /// `none`: the connection failed or closed without a reply.
    NoReply,
    /// `any`: whatever happens.
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Wait {
    For(Duration),
    /// The branch's process has exited.
    Exit(BranchId),
    /// The branch answers requests.
    Up(BranchId),
    /// The recovery module launched a restart of the branch.
    Restart(BranchId),
    /// The monitor has seen at least this many registrations of the branch.
    Registered(BranchId, usize),
    /// The recovery module has finished at least this many sessions.
    Sessions(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionRef {
    Last,
    /// 1-based.
    Nth(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Assertion {
    Balance(AccountId, Amount),
    /// Sum over every branch started so far.
    Sum(Amount),
    /// `None` means the file must not exist.
    File(FileKind, BranchId, Option<String>),
    /// Every transfer block in the log is closed, except maybe the last.
    Shape(BranchId),
    /// Live state equals what the branch's files recover to.
    Recovered(BranchId),
    Frames(String, usize),
    Restarts(BranchId, usize),
    Sessions(usize),
    Session(SessionRef, String),
    Exited(BranchId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepKind {
    Set(Setting, Duration, usize),
    StartRm,
    StartMonitor,
    StartServer {
        branch: BranchId,
        threshold: Option<usize>,
    },
    Kill(BranchId),
    Pause(BranchId),
    Resume(BranchId),
    CrashPoint(BranchId, CrashPoint),
    Write(FileKind, BranchId, String),
    Client {
        branch: BranchId,
        request: ClientRequest,
        expect: Expect,
    },
    Wait(Wait),
    Assert(Assertion),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

struct Lines<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    /// Consumes the `|` block that follows the current step.
    fn block(&mut self) -> Option<String> {
        let mut out = String::new();
        let mut any = false;
        while let Some((_, l)) = self.lines.get(self.pos) {
            let Some(rest) = l.trim_start().strip_prefix('|') else {
                break;
            };
            out.push_str(rest.strip_prefix(' ').unwrap_or(rest));
            out.push('\n');
            any = true;
            self.pos += 1;
        }
        any.then_some(out)
    }
}

fn branch(tok: Option<&str>) -> Result<BranchId, String> {
    let tok = tok.ok_or("missing branch number")?;
    tok.parse().map_err(|e| format!("bad branch {tok:?}: {e}"))
}

fn count(tok: Option<&str>) -> Result<usize, String> {
    let tok = tok.ok_or("missing count")?;
    tok.parse().map_err(|_| format!("bad count {tok:?}"))
}

fn duration(tok: Option<&str>) -> Result<Duration, String> {
    let tok = tok.ok_or("missing duration")?;
    humantime::parse_duration(tok).map_err(|e| format!("bad duration {tok:?}: {e}"))
}

fn file_kind(tok: Option<&str>) -> Result<FileKind, String> {
    match tok {
        Some("log") => Ok(FileKind::Log),
        Some("checkpoint") => Ok(FileKind::Checkpoint),
        other => Err(format!("expected log or checkpoint, found {other:?}")),
    }
}

fn expect(text: &str) -> Result<Expect, String> {
    let text = text.trim();
    let (word, rest) = text.split_once(' ').unwrap_or((text, ""));
    let rest = (!rest.trim().is_empty()).then(|| rest.trim().to_owned());
    match word {
        "ok" => Ok(Expect::Ok(rest)),
        "err" => Ok(Expect::Err(rest)),
        "none" if rest.is_none() => Ok(Expect::NoReply),
        "any" if rest.is_none() => Ok(Expect::Any),
        _ => Err(format!("bad expectation {text:?}")),
    }
}

fn client_request(words: &[&str]) -> Result<ClientRequest, String> {
    let Some((op, args)) = words.split_first() else {
        return Err("missing operation".into());
    };
    let frame = std::iter::once(op.to_ascii_uppercase())
        .chain(args.iter().map(|s| s.to_string()))
        .collect::<Vec<_>>()
        .join(" ");
    match parse_control(&frame) {
        Ok(ControlMessage::Request(r)) => Ok(r),
        Ok(_) => Err(format!("{op} is not a client operation")),
        Err(e) => Err(format!("bad request {frame:?}: {e}")),
    }
}

fn parse_step(words: &[&str], lines: &mut Lines<'_>) -> Result<StepKind, String> {
    let mut it = words.iter().copied();
    let kw = it.next().expect("blank lines are skipped");
    let kind = match kw {
        "set" => {
            let setting = match it.next() {
                Some("heartbeat") => Setting::Heartbeat,
                Some("monitor-timeout") => Setting::MonitorTimeout,
                Some("peer-timeout") => Setting::PeerTimeout,
                Some("checkpoint-timeout") => Setting::CheckpointTimeout,
                Some("session-timeout") => Setting::SessionTimeout,
                Some("threshold") => Setting::Threshold,
                other => return Err(format!("unknown setting {other:?}")),
            };
            if setting == Setting::Threshold {
                StepKind::Set(setting, Duration::ZERO, count(it.next())?)
            } else {
                StepKind::Set(setting, duration(it.next())?, 0)
            }
        }
        "start" => match it.next() {
            Some("rm") => StepKind::StartRm,
            Some("monitor") => StepKind::StartMonitor,
            Some("server") => {
                let branch = branch(it.next())?;
                let mut threshold = None;
                for opt in it.by_ref() {
                    match opt.split_once('=') {
                        Some(("threshold", n)) => threshold = Some(count(Some(n))?),
                        _ => return Err(format!("unknown server option {opt:?}")),
                    }
                }
                StepKind::StartServer { branch, threshold }
            }
            other => return Err(format!("cannot start {other:?}")),
        },
        "kill" | "pause" | "resume" => {
            if it.next() != Some("server") {
                return Err(format!("{kw} applies to servers only"));
            }
            let b = branch(it.next())?;
            match kw {
                "kill" => StepKind::Kill(b),
                "pause" => StepKind::Pause(b),
                _ => StepKind::Resume(b),
            }
        }
        "crashpoint" => {
            let b = branch(it.next())?;
            let name = it.next().ok_or("missing crash point")?;
            let p = name.parse().map_err(|_| format!("unknown crash point {name:?}"))?;
            StepKind::CrashPoint(b, p)
        }
        "write" => {
            let kind = file_kind(it.next())?;
            let b = branch(it.next())?;
            StepKind::Write(kind, b, lines.block().unwrap_or_default())
        }
        "client" => {
            let b = branch(it.next())?;
            let rest: Vec<&str> = it.by_ref().collect();
            let arrow = rest.iter().position(|w| *w == "=>").ok_or("missing `=> expectation`")?;
            StepKind::Client {
                branch: b,
                request: client_request(&rest[..arrow])?,
                expect: expect(&rest[arrow + 1..].join(" "))?,
            }
        }
        "wait" => StepKind::Wait(match it.next() {
            Some("exit") => Wait::Exit(branch(it.next())?),
            Some("up") => Wait::Up(branch(it.next())?),
            Some("restart") => Wait::Restart(branch(it.next())?),
            Some("registered") => Wait::Registered(branch(it.next())?, count(it.next())?),
            Some("sessions") => Wait::Sessions(count(it.next())?),
            d => Wait::For(duration(d)?),
        }),
        "assert" => StepKind::Assert(match it.next() {
            Some("balance") => {
                let a = it.next().ok_or("missing account")?;
                let account = a.parse().map_err(|e| format!("bad account {a:?}: {e}"))?;
                let v = it.next().ok_or("missing amount")?;
                Assertion::Balance(account, v.parse().map_err(|e| format!("bad amount {v:?}: {e}"))?)
            }
            Some("sum") => {
                let v = it.next().ok_or("missing amount")?;
                Assertion::Sum(v.parse().map_err(|e| format!("bad amount {v:?}: {e}"))?)
            }
            Some(k @ ("log" | "checkpoint")) => {
                let kind = file_kind(Some(k))?;
                let b = branch(it.next())?;
                match it.next() {
                    Some("absent") => Assertion::File(kind, b, None),
                    None => Assertion::File(kind, b, Some(lines.block().unwrap_or_default())),
                    Some(x) => return Err(format!("unexpected {x:?}")),
                }
            }
            Some("shape") => Assertion::Shape(branch(it.next())?),
            Some("recovered") => Assertion::Recovered(branch(it.next())?),
            Some("frames") => {
                let kw = it.next().ok_or("missing keyword")?.to_owned();
                Assertion::Frames(kw, count(it.next())?)
            }
            Some("restarts") => Assertion::Restarts(branch(it.next())?, count(it.next())?),
            Some("sessions") => Assertion::Sessions(count(it.next())?),
            Some("session") => {
                let which = match it.next() {
                    Some("last") => SessionRef::Last,
                    n => SessionRef::Nth(count(n)?),
                };
                let outcome = it.next().ok_or("missing outcome")?;
                if !["committed", "canceled", "partial"].contains(&outcome) {
                    return Err(format!("unknown outcome {outcome:?}"));
                }
                Assertion::Session(which, outcome.to_owned())
            }
            Some("exited") => Assertion::Exited(branch(it.next())?),
            other => return Err(format!("unknown assertion {other:?}")),
        }),
        other => return Err(format!("unknown step {other:?}")),
    };
    if let Some(extra) = it.next() {
        return Err(format!("unexpected {extra:?}"));
    }
    Ok(kind)
}

/// A comment is a `#` at the start of a line or after whitespace, followed
/// by whitespace or the end of the line; `#1111` is not one.
fn strip_comment(line: &str) -> &str {
    let b = line.as_bytes();
    for (i, &c) in b.iter().enumerate() {
        let before = i == 0 || b[i - 1].is_ascii_whitespace();
        let after = b.get(i + 1).is_none_or(|c| c.is_ascii_whitespace());
        if c == b'#' && before && after {
            return &line[..i];
        }
    }
    line
}

pub fn parse_scenario(name: &str, text: &str) -> Result<Scenario, ScriptError> {
    let mut lines = Lines {
        lines: text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect(),
        pos: 0,
    };
    let mut steps = Vec::new();
    while let Some(&(line, raw)) = lines.lines.get(lines.pos) {
        lines.pos += 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('|') {
            return Err(ScriptError {
                line,
                message: "file content without a step".into(),
            });
        }
        let words: Vec<&str> = content.split_whitespace().collect();
        let kind = parse_step(&words, &mut lines).map_err(|message| ScriptError { line, message })?;
        steps.push(Step { line, kind });
    }
    Ok(Scenario {
        name: name.to_owned(),
        steps,
    })
}
