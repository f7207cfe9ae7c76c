//! In-memory account table of one branch and the account operations.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::wire::{AccountId, Amount, BranchId, CheckpointEntry};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LedgerError {
    UnknownAccount(AccountId),
    InsufficientFunds {
        account: AccountId,
        balance: Amount,
        requested: Amount,
    },
    NonPositiveAmount,
    CapacityExhausted(BranchId),
    ForeignAccount { account: AccountId, branch: BranchId },
    DuplicateAccount(AccountId),
    Overflow(AccountId),
}

impl fmt::Display for LedgerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LedgerError::UnknownAccount(a) => write!(f, "Account #{a} does not exists."),
            LedgerError::InsufficientFunds {
                account,
                balance,
                requested,
            } => write!(
                f,
                "Insufficient funds in account #{account}: balance {balance}, requested {requested}."
            ),
            LedgerError::NonPositiveAmount => f.write_str("Amount must be positive."),
            LedgerError::CapacityExhausted(b) => {
                write!(f, "Branch #{b} cannot open more than 1000 accounts.")
            }
            LedgerError::ForeignAccount { account, branch } => {
                write!(f, "Account #{account} does not belong to branch #{branch}.")
            }
            LedgerError::DuplicateAccount(a) => write!(f, "Account #{a} already exists."),
            LedgerError::Overflow(a) => write!(f, "Balance of account #{a} would overflow."),
        }
    }
}

impl core::error::Error for LedgerError {}

/// Live state of a branch: its accounts and the next account sequence.
///
/// `next_seq` is always one past the highest sequence in use (0 when there
/// are no accounts). Failed operations leave the state untouched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchState {
    branch: BranchId,
    accounts: BTreeMap<AccountId, Amount>,
    next_seq: u16,
}

impl BranchState {
    pub fn new(branch: BranchId) -> Self {
        BranchState {
            branch,
            accounts: BTreeMap::new(),
            next_seq: 0,
        }
    }

    /// Builds a state from checkpoint entries.
    pub fn from_entries(
        branch: BranchId,
        entries: impl IntoIterator<Item = CheckpointEntry>,
    ) -> Result<Self, LedgerError> {
        let mut s = BranchState::new(branch);
        for e in entries {
            s.insert_account(e.account, e.balance)?;
        }
        Ok(s)
    }

    pub fn branch(&self) -> BranchId {
        self.branch
    }

    pub fn next_seq(&self) -> u16 {
        self.next_seq
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    pub fn contains(&self, account: AccountId) -> bool {
        self.accounts.contains_key(&account)
    }

    /// Sum of all balances, in cents.
    pub fn total(&self) -> u128 {
        self.accounts.values().map(|a| a.cents() as u128).sum()
    }

    pub fn open_account(&mut self) -> Result<AccountId, LedgerError> {
        if self.next_seq >= AccountId::SEQ_CAPACITY {
            return Err(LedgerError::CapacityExhausted(self.branch));
        }
        let id = AccountId::new(self.branch, self.next_seq);
        self.accounts.insert(id, Amount::ZERO);
        self.next_seq += 1;
        Ok(id)
    }

    /// Re-creates an account under a known id, as recorded in a log.
    pub fn restore_open(&mut self, account: AccountId) -> Result<(), LedgerError> {
        self.insert_account(account, Amount::ZERO)
    }

    fn insert_account(&mut self, account: AccountId, balance: Amount) -> Result<(), LedgerError> {
        if !account.belongs_to(self.branch) {
            return Err(LedgerError::ForeignAccount {
                account,
                branch: self.branch,
            });
        }
        if self.accounts.contains_key(&account) {
            return Err(LedgerError::DuplicateAccount(account));
        }
        self.accounts.insert(account, balance);
        self.next_seq = self.next_seq.max(account.seq() + 1);
        Ok(())
    }

    pub fn deposit(&mut self, account: AccountId, amount: Amount) -> Result<Amount, LedgerError> {
        let bal = self.balance_mut(account)?;
        if amount.is_zero() {
            return Err(LedgerError::NonPositiveAmount);
        }
        *bal = bal
            .checked_add(amount)
            .ok_or(LedgerError::Overflow(account))?;
        Ok(*bal)
    }

    pub fn withdraw(&mut self, account: AccountId, amount: Amount) -> Result<Amount, LedgerError> {
        let bal = self.balance_mut(account)?;
        if amount.is_zero() {
            return Err(LedgerError::NonPositiveAmount);
        }
        *bal = bal
            .checked_sub(amount)
            .ok_or(LedgerError::InsufficientFunds {
                account,
                balance: *bal,
                requested: amount,
            })?;
        Ok(*bal)
    }

    /// Checks that `withdraw(account, amount)` would succeed, without
    /// changing anything.
    pub fn check_withdraw(&self, account: AccountId, amount: Amount) -> Result<(), LedgerError> {
        let bal = self.balance(account)?;
        if amount.is_zero() {
            return Err(LedgerError::NonPositiveAmount);
        }
        if bal < amount {
            return Err(LedgerError::InsufficientFunds {
                account,
                balance: bal,
                requested: amount,
            });
        }
        Ok(())
    }

    pub fn balance(&self, account: AccountId) -> Result<Amount, LedgerError> {
        self.accounts
            .get(&account)
            .copied()
            .ok_or(LedgerError::UnknownAccount(account))
    }

    fn balance_mut(&mut self, account: AccountId) -> Result<&mut Amount, LedgerError> {
        self.accounts
            .get_mut(&account)
            .ok_or(LedgerError::UnknownAccount(account))
    }

    /// All account ids, highest first.
    pub fn list_accounts(&self) -> Vec<AccountId> {
        self.accounts.keys().rev().copied().collect()
    }

    /// Checkpoint entries in file order (highest account first).
    pub fn checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        self.accounts
            .iter()
            .rev()
            .map(|(&account, &balance)| CheckpointEntry { account, balance })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (AccountId, Amount)> + '_ {
        self.accounts.iter().map(|(a, b)| (*a, *b))
    }
}
