//! Two-phase checkpoint decisions, independent of the transport.
//!
//! Phase one asks every member of the requester's dependency group whether
//! it is ready; a single failure cancels the whole checkpoint. Phase two
//! tells everybody to checkpoint and collects the confirmations.

use alloc::vec::Vec;

use crate::pool::{DependencyPool, Group};
use crate::wire::BranchId;

/// One member-facing exchange per call; implementations own the sessions.
pub trait CheckpointParticipants {
    /// Sends `READY_FOR_CHECKPOINT` and waits for the echo.
    fn prepare(&mut self, member: BranchId) -> bool;
    /// Sends `DO_CHECKPOINT` and waits for `CHECKPOINT_DONE`.
    fn commit(&mut self, member: BranchId) -> bool;
    /// Sends `CANCEL_CHECKPOINT` to a member that already answered ready.
    fn cancel(&mut self, member: BranchId);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Committed,
    /// `unready` failed phase one; `canceled` had already answered ready.
    Canceled {
        unready: BranchId,
        canceled: Vec<BranchId>,
    },
    /// Phase two did not hear back from `missing`.
    Partial {
        done: Vec<BranchId>,
        missing: Vec<BranchId>,
    },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Committed => "committed",
            Outcome::Canceled { .. } => "canceled",
            Outcome::Partial { .. } => "partial",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionPlan {
    pub requester: BranchId,
    pub group: Group,
    /// The requester had no group and a singleton was created for it.
    pub fresh: bool,
}

/// Picks the group to checkpoint, creating a singleton for an unpooled
/// requester.
pub fn plan_session(pool: &mut DependencyPool, requester: BranchId) -> SessionPlan {
    let fresh = pool.insert_singleton(requester);
    let group = pool
        .find_group(requester)
        .cloned()
        .unwrap_or_else(|| core::iter::once(requester).collect());
    SessionPlan {
        requester,
        group,
        fresh,
    }
}

/// Runs both phases over `group` in ascending branch order.
pub fn run_two_phase<P: CheckpointParticipants + ?Sized>(group: &Group, p: &mut P) -> Outcome {
    let mut ready = Vec::new();
    for &m in group {
        if p.prepare(m) {
            ready.push(m);
        } else {
            for &r in &ready {
                p.cancel(r);
            }
            return Outcome::Canceled {
                unready: m,
                canceled: ready,
            };
        }
    }
    let mut done = Vec::new();
    let mut missing = Vec::new();
    for &m in group {
        if p.commit(m) {
            done.push(m);
        } else {
            missing.push(m);
        }
    }
    if missing.is_empty() {
        Outcome::Committed
    } else {
        Outcome::Partial { done, missing }
    }
}

/// Updates the pool after a session: a committed group is released, a
/// canceled session leaves the pool as it was before planning, a partial
/// one keeps the group so a later request retries all of it.
pub fn conclude_session(pool: &mut DependencyPool, plan: &SessionPlan, outcome: &Outcome) {
    match outcome {
        Outcome::Committed => {
            pool.remove_group(&plan.group);
        }
        Outcome::Canceled { .. } if plan.fresh => {
            pool.remove_group(&plan.group);
        }
        Outcome::Canceled { .. } | Outcome::Partial { .. } => {}
    }
}

pub fn coordinate_checkpoint<P: CheckpointParticipants + ?Sized>(
    pool: &mut DependencyPool,
    requester: BranchId,
    participants: &mut P,
) -> Outcome {
    let plan = plan_session(pool, requester);
    let outcome = run_two_phase(&plan.group, participants);
    conclude_session(pool, &plan, &outcome);
    outcome
}
