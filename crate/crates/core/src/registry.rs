//! Heartbeat bookkeeping for the monitor.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use crate::wire::BranchId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub host: String,
    pub last_seen: Duration,
    /// A restart was requested and the branch has not re-registered since.
    pub flagged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeartbeatOutcome {
    Refreshed,
    /// Branch never registered; the heartbeat is dropped.
    Unregistered,
}

/// Timestamps are offsets from an arbitrary monotonic origin chosen by the
/// caller.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HeartbeatRegistry {
    entries: BTreeMap<BranchId, Entry>,
}

impl HeartbeatRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, b: BranchId) -> Option<&Entry> {
        self.entries.get(&b)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn register(&mut self, host: String, b: BranchId, now: Duration) {
        self.entries.insert(
            b,
            Entry {
                host,
                last_seen: now,
                flagged: false,
            },
        );
    }

    pub fn heartbeat(&mut self, b: BranchId, now: Duration) -> HeartbeatOutcome {
        match self.entries.get_mut(&b) {
            Some(e) => {
                e.last_seen = now;
                HeartbeatOutcome::Refreshed
            }
            None => HeartbeatOutcome::Unregistered,
        }
    }

    /// Unflagged branches silent for longer than `timeout`.
    pub fn stale(&self, now: Duration, timeout: Duration) -> Vec<BranchId> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.flagged && now.saturating_sub(e.last_seen) > timeout)
            .map(|(b, _)| *b)
            .collect()
    }

    /// Asks `restart` to restart every stale branch. Branches whose request
    /// went through are flagged; the others are retried on the next check.
    pub fn check(
        &mut self,
        now: Duration,
        timeout: Duration,
        mut restart: impl FnMut(BranchId) -> bool,
    ) -> Vec<BranchId> {
        let mut sent = Vec::new();
        for b in self.stale(now, timeout) {
            if restart(b) {
                if let Some(e) = self.entries.get_mut(&b) {
                    e.flagged = true;
                }
                sent.push(b);
            }
        }
        sent
    }
}
