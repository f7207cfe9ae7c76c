use core::fmt;
use core::str::FromStr;

use super::ParseError;

/// A branch number. It is also the TCP port the branch server listens on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BranchId(u16);

impl BranchId {
    pub const MIN: u16 = 1111;
    pub const MAX: u16 = 2111;

    pub fn new(id: u16) -> Result<Self, ParseError> {
        if (Self::MIN..=Self::MAX).contains(&id) {
            Ok(BranchId(id))
        } else {
            Err(ParseError::BranchOutOfRange(id as u64))
        }
    }

    pub const fn get(self) -> u16 {
        self.0
    }

    pub const fn port(self) -> u16 {
        self.0
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for BranchId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = parse_digits(s, "branch number")?;
        u16::try_from(v)
            .map_err(|_| ParseError::BranchOutOfRange(v))
            .and_then(BranchId::new)
    }
}

/// An account number, `branch * 1000 + seq`.
///
/// Parsing accepts any unsigned integer so that historical log lines with
/// malformed destinations still round-trip; [`AccountId::branch`] tells
/// whether the number actually routes to a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountId(u32);

impl AccountId {
    pub const SEQ_CAPACITY: u16 = 1000;

    pub const fn from_raw(id: u32) -> Self {
        AccountId(id)
    }

    /// Panics if `seq` is not below [`AccountId::SEQ_CAPACITY`].
    pub fn new(branch: BranchId, seq: u16) -> Self {
        assert!(seq < Self::SEQ_CAPACITY, "account sequence {seq} out of range");
        AccountId(branch.get() as u32 * 1000 + seq as u32)
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    pub fn branch(self) -> Option<BranchId> {
        u16::try_from(self.0 / 1000)
            .ok()
            .and_then(|b| BranchId::new(b).ok())
    }

    pub const fn seq(self) -> u16 {
        (self.0 % 1000) as u16
    }

    pub fn belongs_to(self, branch: BranchId) -> bool {
        self.branch() == Some(branch)
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for AccountId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v = parse_digits(s, "account number")?;
        u32::try_from(v)
            .map(AccountId)
            .map_err(|_| ParseError::Token {
                text: s.into(),
                expected: "account number",
            })
    }
}

/// Plain unsigned decimal, no sign, no leading zeros (so that encoding the
/// parsed value reproduces the input).
pub(crate) fn parse_digits(s: &str, expected: &'static str) -> Result<u64, ParseError> {
    let bad = || ParseError::Token {
        text: s.into(),
        expected,
    };
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0'))
    {
        return Err(bad());
    }
    s.parse().map_err(|_| bad())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_range() {
        assert!(BranchId::new(1110).is_err());
        assert!(BranchId::new(1111).is_ok());
        assert!(BranchId::new(2111).is_ok());
        assert!(BranchId::new(2112).is_err());
        assert!("1111".parse::<BranchId>().is_ok());
        assert!("+1111".parse::<BranchId>().is_err());
        assert!("01111".parse::<BranchId>().is_err());
        assert!("99999999".parse::<BranchId>().is_err());
    }

    #[test]
    fn account_routing() {
        let b = BranchId::new(1111).unwrap();
        let a = AccountId::new(b, 6);
        assert_eq!(a.get(), 1_111_006);
        assert_eq!(a.branch(), Some(b));
        assert_eq!(a.seq(), 6);
        // six-digit destination from a historical log: parses, routes nowhere
        let odd: AccountId = "111200".parse().unwrap();
        assert_eq!(odd.branch(), None);
    }
}
