use core::fmt;
use core::str::FromStr;

/// Named hooks where a branch server can be made to die on purpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CrashPoint {
    /// Leader: `TRANSFER START` logged.
    AfterStartLog,
    /// Leader: source withdrawal logged.
    AfterWithdrawLog,
    /// Leader: about to contact the receiving branch.
    BeforePeerSend,
    /// Leader: `TRANSFER` frame sent, reply not read yet.
    AfterPeerSend,
    /// Receiver: deposit logged.
    AfterDepositLog,
    /// Receiver: about to send `OK`.
    BeforeOkSend,
    /// Receiver: `OK` sent, commit not logged.
    AfterOkSend,
    /// Leader: `OK` received, commit not logged.
    BeforeCommitLog,
    /// Checkpoint participant: `DO_CHECKPOINT` received, nothing written.
    BeforeCheckpointWrite,
    /// Checkpoint participant: new checkpoint staged, log not yet deleted.
    AfterCheckpointWrite,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 10] = [
        CrashPoint::AfterStartLog,
        CrashPoint::AfterWithdrawLog,
        CrashPoint::BeforePeerSend,
        CrashPoint::AfterPeerSend,
        CrashPoint::AfterDepositLog,
        CrashPoint::BeforeOkSend,
        CrashPoint::AfterOkSend,
        CrashPoint::BeforeCommitLog,
        CrashPoint::BeforeCheckpointWrite,
        CrashPoint::AfterCheckpointWrite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CrashPoint::AfterStartLog => "after_start_log",
            CrashPoint::AfterWithdrawLog => "after_withdraw_log",
            CrashPoint::BeforePeerSend => "before_peer_send",
            CrashPoint::AfterPeerSend => "after_peer_send",
            CrashPoint::AfterDepositLog => "after_deposit_log",
            CrashPoint::BeforeOkSend => "before_ok_send",
            CrashPoint::AfterOkSend => "after_ok_send",
            CrashPoint::BeforeCommitLog => "before_commit_log",
            CrashPoint::BeforeCheckpointWrite => "before_checkpoint_write",
            CrashPoint::AfterCheckpointWrite => "after_checkpoint_write",
        }
    }
}

impl fmt::Display for CrashPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownCrashPoint;

impl fmt::Display for UnknownCrashPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown crash point")
    }
}

impl core::error::Error for UnknownCrashPoint {}

impl FromStr for CrashPoint {
    type Err = UnknownCrashPoint;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CrashPoint::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or(UnknownCrashPoint)
    }
}
