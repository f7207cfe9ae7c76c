//! Log replay on top of a checkpointed state.
//!
//! Records apply in file order. A `TRANSFER START` opens a block: the
//! deposits and withdrawals that follow are buffered and only applied once
//! the matching `COMMIT` or `CANCEL` arrives. A block still open at the end
//! of the log belongs to a transfer that never finished, and is dropped.

use alloc::vec::Vec;
use core::fmt;

use crate::ledger::{BranchState, LedgerError};
use crate::wire::{AccountId, LogRecord};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplayErrorKind {
    /// An operation that must have succeeded originally fails now.
    Ledger(LedgerError),
    NestedTransferStart { src: AccountId, dst: AccountId },
    UnmatchedClose { src: AccountId, dst: AccountId },
    MismatchedClose {
        open: (AccountId, AccountId),
        close: (AccountId, AccountId),
    },
    OpenInsideTransfer(AccountId),
}

/// Replay failure; `record` is the 1-based position of the offending record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayError {
    pub record: usize,
    pub kind: ReplayErrorKind,
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: ", self.record)?;
        match &self.kind {
            ReplayErrorKind::Ledger(e) => write!(f, "cannot re-apply: {e}"),
            ReplayErrorKind::NestedTransferStart { src, dst } => {
                write!(f, "TRANSFER START {src}-{dst} inside an open transfer")
            }
            ReplayErrorKind::UnmatchedClose { src, dst } => {
                write!(f, "transfer close {src}-{dst} without a start")
            }
            ReplayErrorKind::MismatchedClose { open, close } => write!(
                f,
                "transfer close {}-{} does not match open {}-{}",
                close.0, close.1, open.0, open.1
            ),
            ReplayErrorKind::OpenInsideTransfer(a) => {
                write!(f, "OPEN {a} inside an open transfer")
            }
        }
    }
}

impl core::error::Error for ReplayError {}

/// Buffered records of a transfer block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayBlock {
    pub src: AccountId,
    pub dst: AccountId,
    pub buffered: Vec<LogRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub records: usize,
    pub committed_blocks: usize,
    pub canceled_blocks: usize,
    /// The trailing unfinished transfer, if any. Its records were not applied.
    pub discarded: Option<ReplayBlock>,
}

/// Applies `records` to `state` and returns the resulting state.
pub fn replay(
    mut state: BranchState,
    records: impl IntoIterator<Item = LogRecord>,
) -> Result<(BranchState, ReplaySummary), ReplayError> {
    let mut summary = ReplaySummary::default();
    let mut block: Option<ReplayBlock> = None;

    for (i, rec) in records.into_iter().enumerate() {
        let pos = i + 1;
        let fail = |kind| ReplayError { record: pos, kind };
        summary.records += 1;
        match rec {
            LogRecord::TransferStart { src, dst } => {
                if block.is_some() {
                    return Err(fail(ReplayErrorKind::NestedTransferStart { src, dst }));
                }
                block = Some(ReplayBlock {
                    src,
                    dst,
                    buffered: Vec::new(),
                });
            }
            LogRecord::TransferCommit { src, dst } | LogRecord::TransferCancel { src, dst } => {
                let open = block
                    .take()
                    .ok_or_else(|| fail(ReplayErrorKind::UnmatchedClose { src, dst }))?;
                if (open.src, open.dst) != (src, dst) {
                    return Err(fail(ReplayErrorKind::MismatchedClose {
                        open: (open.src, open.dst),
                        close: (src, dst),
                    }));
                }
                for r in &open.buffered {
                    apply(&mut state, r).map_err(|e| fail(ReplayErrorKind::Ledger(e)))?;
                }
                if matches!(rec, LogRecord::TransferCommit { .. }) {
                    summary.committed_blocks += 1;
                } else {
                    summary.canceled_blocks += 1;
                }
            }
            LogRecord::Open { account } => {
                if block.is_some() {
                    return Err(fail(ReplayErrorKind::OpenInsideTransfer(account)));
                }
                apply(&mut state, &rec).map_err(|e| fail(ReplayErrorKind::Ledger(e)))?;
            }
            LogRecord::Deposit { .. } | LogRecord::Withdraw { .. } => match block.as_mut() {
                Some(b) => b.buffered.push(rec),
                None => apply(&mut state, &rec).map_err(|e| fail(ReplayErrorKind::Ledger(e)))?,
            },
        }
    }
    summary.discarded = block;
    Ok((state, summary))
}

fn apply(state: &mut BranchState, rec: &LogRecord) -> Result<(), LedgerError> {
    match *rec {
        LogRecord::Open { account } => state.restore_open(account),
        LogRecord::Deposit { account, amount } => state.deposit(account, amount).map(|_| ()),
        LogRecord::Withdraw { account, amount } => state.withdraw(account, amount).map(|_| ()),
        _ => Ok(()),
    }
}

/// Violation of the careful-logging shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeViolation {
    pub record: usize,
    pub reason: &'static str,
}

impl fmt::Display for ShapeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.record, self.reason)
    }
}

/// Checks that every `TRANSFER START` is closed by exactly one matching
/// `COMMIT`/`CANCEL` before the next start, that blocks contain only
/// deposits and withdrawals, and that no close appears outside a block.
/// Only the final block may be left open.
pub fn check_careful_logging(records: &[LogRecord]) -> Result<(), ShapeViolation> {
    let mut open: Option<(AccountId, AccountId)> = None;
    for (i, rec) in records.iter().enumerate() {
        let v = |reason| ShapeViolation {
            record: i + 1,
            reason,
        };
        match *rec {
            LogRecord::TransferStart { src, dst } => {
                if open.is_some() {
                    return Err(v("transfer started before the previous one closed"));
                }
                open = Some((src, dst));
            }
            LogRecord::TransferCommit { src, dst } | LogRecord::TransferCancel { src, dst } => {
                match open.take() {
                    Some(pair) if pair == (src, dst) => {}
                    Some(_) => return Err(v("close does not match the open transfer")),
                    None => return Err(v("close without a transfer start")),
                }
            }
            LogRecord::Open { .. } if open.is_some() => {
                return Err(v("account opened inside a transfer block"))
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{parse_checkpoint_text, parse_log_text, Amount, BranchId};

    const CHECKPOINT: &str = "BANK #1111:1111005 1030.0
BANK #1111:1111004 0.0
BANK #1111:1111003 1030.0
BANK #1111:1111002 120.0
BANK #1111:1111001 130.0
BANK #1111:1111000 1374.0
";

    const LOG: &str = "BANK #1111:OPEN 1111006
BANK #1111:DEPOSIT 1111006 1000.0
BANK #1111:WITHDRAW 1111006 100.0
BANK #1111:TRANSFER START 1111006-111200
BANK #1111:TRANSFER CANCEL 1111006-111200
BANK #1111:TRANSFER START 1111000-1112000
BANK #1111:WITHDRAW 1111000 10.0
BANK #1111:TRANSFER COMMIT 1111000-1112000
";

    fn b(n: u16) -> BranchId {
        BranchId::new(n).unwrap()
    }

    fn a(n: u32) -> AccountId {
        AccountId::from_raw(n)
    }

    fn sample_state() -> BranchState {
        BranchState::from_entries(b(1111), parse_checkpoint_text(b(1111), CHECKPOINT).unwrap())
            .unwrap()
    }

    #[test]
    fn sample_files() {
        let recs = parse_log_text(b(1111), LOG).unwrap();
        let (s, summary) = replay(sample_state(), recs).unwrap();
        // frozen from a line-by-line hand interpretation of the two files
        assert_eq!(s.balance(a(1111006)).unwrap(), Amount::from_cents(90_000));
        assert_eq!(s.balance(a(1111000)).unwrap(), Amount::from_cents(136_400));
        assert_eq!(s.balance(a(1111005)).unwrap(), Amount::from_cents(103_000));
        assert_eq!(s.balance(a(1111004)).unwrap(), Amount::ZERO);
        assert_eq!(s.next_seq(), 7);
        assert_eq!(summary.committed_blocks, 1);
        assert_eq!(summary.canceled_blocks, 1);
        assert!(summary.discarded.is_none());
    }

    #[test]
    fn empty_inputs() {
        let (s, _) = replay(BranchState::new(b(1111)), []).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.next_seq(), 0);
    }

    #[test]
    fn unclosed_block_is_discarded() {
        let state = BranchState::from_entries(
            b(1111),
            [crate::wire::CheckpointEntry {
                account: a(1111000),
                balance: Amount::ZERO,
            }],
        )
        .unwrap();
        let recs = parse_log_text(
            b(1111),
            "BANK #1111:TRANSFER START 1112000-1111000\nBANK #1111:DEPOSIT 1111000 10.0\n",
        )
        .unwrap();
        let (s, summary) = replay(state.clone(), recs).unwrap();
        assert_eq!(s, state);
        assert_eq!(summary.discarded.unwrap().buffered.len(), 1);
    }

    #[test]
    fn impossible_operation_is_corruption() {
        let recs = parse_log_text(b(1111), "BANK #1111:WITHDRAW 1111000 10.0\n").unwrap();
        let err = replay(BranchState::new(b(1111)), recs).unwrap_err();
        assert_eq!(err.record, 1);
        assert!(matches!(err.kind, ReplayErrorKind::Ledger(_)));
    }

    #[test]
    fn block_structure_errors() {
        let nested = [
            LogRecord::TransferStart { src: a(1), dst: a(2) },
            LogRecord::TransferStart { src: a(1), dst: a(2) },
        ];
        assert!(matches!(
            replay(BranchState::new(b(1111)), nested).unwrap_err().kind,
            ReplayErrorKind::NestedTransferStart { .. }
        ));
        let stray = [LogRecord::TransferCommit { src: a(1), dst: a(2) }];
        assert!(matches!(
            replay(BranchState::new(b(1111)), stray).unwrap_err().kind,
            ReplayErrorKind::UnmatchedClose { .. }
        ));
        let mismatched = [
            LogRecord::TransferStart { src: a(1), dst: a(2) },
            LogRecord::TransferCancel { src: a(1), dst: a(3) },
        ];
        assert!(matches!(
            replay(BranchState::new(b(1111)), mismatched).unwrap_err().kind,
            ReplayErrorKind::MismatchedClose { .. }
        ));
    }

    #[test]
    fn shape_checker() {
        let recs = parse_log_text(b(1111), LOG).unwrap();
        assert!(check_careful_logging(&recs).is_ok());
        let mut open_tail = recs.clone();
        open_tail.push(LogRecord::TransferStart { src: a(1), dst: a(2) });
        assert!(check_careful_logging(&open_tail).is_ok());
        let mut broken = recs;
        broken.insert(
            5,
            LogRecord::TransferStart {
                src: a(1111000),
                dst: a(1112000),
            },
        );
        assert!(check_careful_logging(&broken).is_err());
    }
}
