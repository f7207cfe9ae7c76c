//! Allocation-only core of a fault-tolerant bank cluster.
//!
//! Everything here is a pure function or a plain state machine: the text
//! grammars of logs, checkpoints and frames ([`wire`]), a branch's account
//! table ([`ledger`]), log replay ([`replay`]), the dependency pool
//! ([`pool`]), the two-phase checkpoint decisions ([`coordinator`]) and the
//! heartbeat registry ([`registry`]). Files, sockets and processes live in
//! the `ftbank` crate.

#![no_std]

extern crate alloc;

pub mod coordinator;
pub mod crash;
pub mod ledger;
pub mod pool;
pub mod registry;
pub mod replay;
pub mod wire;

pub use crash::CrashPoint;
pub use ledger::{BranchState, LedgerError};
pub use pool::DependencyPool;
pub use wire::{AccountId, Amount, BranchId, ControlMessage, LogRecord};
