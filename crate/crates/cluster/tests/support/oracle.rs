//! A plain interpreter of checkpoint and message-log text, written from the
//! file format alone. It shares no code with the library's parser or replay
//! and serves as the reference they are checked against.

use std::collections::BTreeMap;

use ftbank_core::BranchState;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Book {
    /// Account number to balance in cents.
    pub balances: BTreeMap<u32, i64>,
    pub next_account: u32,
}

impl Book {
    pub fn of(state: &BranchState) -> Book {
        let branch = u32::from(state.branch().get());
        Book {
            balances: state
                .iter()
                .map(|(a, v)| (a.get(), v.cents() as i64))
                .collect(),
            next_account: branch * 1000 + u32::from(state.next_seq()),
        }
    }

    pub fn total(&self) -> i64 {
        self.balances.values().sum()
    }
}

fn cents(s: &str) -> Result<i64, String> {
    let (whole, frac) = s.split_once('.').ok_or(format!("no decimal point in {s:?}"))?;
    let whole: i64 = whole.parse().map_err(|_| format!("bad amount {s:?}"))?;
    let frac: i64 = match frac.len() {
        1 => frac.parse::<i64>().map_err(|_| format!("bad amount {s:?}"))? * 10,
        2 => frac.parse().map_err(|_| format!("bad amount {s:?}"))?,
        _ => return Err(format!("bad amount {s:?}")),
    };
    Ok(whole * 100 + frac)
}

fn apply(balances: &mut BTreeMap<u32, i64>, account: u32, delta: i64) -> Result<(), String> {
    let bal = balances
        .get_mut(&account)
        .ok_or(format!("operation on unknown account {account}"))?;
    if *bal + delta < 0 {
        return Err(format!("account {account} would go negative"));
    }
    *bal += delta;
    Ok(())
}

/// Replays `log` over `checkpoint` for `branch`. Account operations inside
/// a transfer block take effect only when the block is closed; a block
/// still open at the end is dropped.
pub fn interpret(branch: u16, checkpoint: &str, log: &str) -> Result<Book, String> {
    let prefix = format!("BANK #{branch}:");
    let mut balances = BTreeMap::new();
    for line in checkpoint.lines() {
        let rest = line.strip_prefix(&prefix).ok_or(format!("foreign line {line:?}"))?;
        let (account, amount) = rest.split_once(' ').ok_or(format!("bad line {line:?}"))?;
        let account: u32 = account.parse().map_err(|_| format!("bad line {line:?}"))?;
        if balances.insert(account, cents(amount)?).is_some() {
            return Err(format!("account {account} listed twice"));
        }
    }
    let mut pending: Option<Vec<(u32, i64)>> = None;
    for line in log.lines() {
        let rest = line.strip_prefix(&prefix).ok_or(format!("foreign line {line:?}"))?;
        let words: Vec<&str> = rest.split(' ').collect();
        let num = |s: &str| s.parse::<u32>().map_err(|_| format!("bad line {line:?}"));
        match words.as_slice() {
            ["OPEN", a] => {
                if balances.insert(num(a)?, 0).is_some() {
                    return Err(format!("account {a} opened twice"));
                }
            }
            [op @ ("DEPOSIT" | "WITHDRAW"), a, v] => {
                let delta = if *op == "DEPOSIT" { cents(v)? } else { -cents(v)? };
                match pending.as_mut() {
                    Some(ops) => ops.push((num(a)?, delta)),
                    None => apply(&mut balances, num(a)?, delta)?,
                }
            }
            ["TRANSFER", "START", _] => {
                if pending.replace(Vec::new()).is_some() {
                    return Err(format!("nested transfer at {line:?}"));
                }
            }
            ["TRANSFER", "COMMIT" | "CANCEL", _] => {
                let ops = pending.take().ok_or(format!("close without start at {line:?}"))?;
                for (a, d) in ops {
                    apply(&mut balances, a, d)?;
                }
            }
            _ => return Err(format!("unknown record {line:?}")),
        }
    }
    let base = u32::from(branch) * 1000;
    let next_account = balances.keys().map(|a| a - base + 1).max().unwrap_or(0) + base;
    Ok(Book {
        balances,
        next_account,
    })
}
