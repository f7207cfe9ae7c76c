use core::fmt;
use core::str::FromStr;

use super::ParseError;

/// Fixed-point money value in integer cents.
///
/// Rendered with the minimal number of fraction digits but never fewer than
/// one: `100000` cents is `1000.0`, `1055` cents is `10.55`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn from_cents(cents: u64) -> Self {
        Amount(cents)
    }

    pub const fn cents(self) -> u64 {
        self.0
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Amount) -> Option<Amount> {
        self.0.checked_add(other.0).map(Amount)
    }

    pub fn checked_sub(self, other: Amount) -> Option<Amount> {
        self.0.checked_sub(other.0).map(Amount)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / 100;
        let frac = self.0 % 100;
        if frac.is_multiple_of(10) {
            write!(f, "{}.{}", whole, frac / 10)
        } else {
            write!(f, "{}.{:02}", whole, frac)
        }
    }
}

impl FromStr for Amount {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_amount(s)
    }
}

/// Renders an amount in its log/wire text form.
pub fn format_amount(amount: Amount) -> alloc::string::String {
    alloc::format!("{amount}")
}

/// Parses `123`, `123.4` or `123.45`. Finer precision, signs and anything
/// else are rejected rather than rounded.
pub fn parse_amount(s: &str) -> Result<Amount, ParseError> {
    let bad = |reason| ParseError::Amount {
        text: s.into(),
        reason,
    };
    let (whole, frac) = match s.split_once('.') {
        Some((w, f)) => (w, Some(f)),
        None => (s, None),
    };
    if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad("expected decimal digits"));
    }
    let whole: u64 = whole.parse().map_err(|_| bad("value too large"))?;
    let frac_cents = match frac {
        None => 0,
        Some(f) if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) => {
            return Err(bad("expected fraction digits after '.'"))
        }
        Some(f) if f.len() > 2 => return Err(bad("more than two fraction digits")),
        Some(f) => {
            let v: u64 = f.parse().map_err(|_| bad("bad fraction"))?;
            if f.len() == 1 {
                v * 10
            } else {
                v
            }
        }
    };
    whole
        .checked_mul(100)
        .and_then(|c| c.checked_add(frac_cents))
        .map(Amount)
        .ok_or_else(|| bad("value too large"))
}
