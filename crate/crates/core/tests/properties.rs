use std::collections::BTreeSet;

use ftbank_core::ledger::BranchState;
use ftbank_core::pool::DependencyPool;
use ftbank_core::replay::{check_careful_logging, replay};
use ftbank_core::wire::*;
use proptest::prelude::*;

fn branch() -> impl Strategy<Value = BranchId> {
    (BranchId::MIN..=BranchId::MAX).prop_map(|b| BranchId::new(b).unwrap())
}

fn account() -> impl Strategy<Value = AccountId> {
    prop_oneof![
        (branch(), 0u16..1000).prop_map(|(b, s)| AccountId::new(b, s)),
        (1u32..u32::MAX).prop_map(AccountId::from_raw),
    ]
}

fn amount() -> impl Strategy<Value = Amount> {
    (0u64..u64::MAX / 200).prop_map(Amount::from_cents)
}

fn record() -> impl Strategy<Value = LogRecord> {
    prop_oneof![
        account().prop_map(|account| LogRecord::Open { account }),
        (account(), amount()).prop_map(|(account, amount)| LogRecord::Deposit { account, amount }),
        (account(), amount()).prop_map(|(account, amount)| LogRecord::Withdraw { account, amount }),
        (account(), account()).prop_map(|(src, dst)| LogRecord::TransferStart { src, dst }),
        (account(), account()).prop_map(|(src, dst)| LogRecord::TransferCommit { src, dst }),
        (account(), account()).prop_map(|(src, dst)| LogRecord::TransferCancel { src, dst }),
    ]
}

// Free text as it shows up in error descriptions: printable, single line,
// not starting with a keyword the peer frame parser reserves.
fn message() -> impl Strategy<Value = String> {
    "[A-Za-z#][A-Za-z0-9 #.,:]{0,40}".prop_filter("reserved", |s| {
        s != "OK" && !s.starts_with("TRANSFER ")
    })
}

fn control() -> impl Strategy<Value = ControlMessage> {
    use ControlMessage::*;
    prop_oneof![
        (branch(), account(), account(), amount()).prop_map(|(from, src, dst, amount)| Transfer {
            from,
            src,
            dst,
            amount
        }),
        branch().prop_map(|branch| PeerOk { branch }),
        (branch(), message()).prop_map(|(branch, message)| PeerErr { branch, message }),
        (branch(), branch()).prop_map(|(a, b)| Dependency { a, b }),
        branch().prop_map(|branch| CheckpointRequest { branch }),
        Just(ReadyForCheckpoint),
        Just(DoCheckpoint),
        Just(CancelCheckpoint),
        Just(CheckpointDone),
        ("[a-z0-9.:-]{1,20}", branch()).prop_map(|(host, branch)| Register { host, branch }),
        branch().prop_map(|branch| Heartbeat { branch }),
        branch().prop_map(|branch| Restart { branch }),
        Just(Request(ClientRequest::Open)),
        Just(Request(ClientRequest::Accounts)),
        (account(), amount())
            .prop_map(|(account, amount)| Request(ClientRequest::Deposit { account, amount })),
        (account(), amount())
            .prop_map(|(account, amount)| Request(ClientRequest::Withdraw { account, amount })),
        account().prop_map(|account| Request(ClientRequest::Balance { account })),
        (account(), account(), amount())
            .prop_map(|(src, dst, amount)| Request(ClientRequest::Transfer { src, dst, amount })),
        "[ -~]{0,40}".prop_map(|p| Reply(ClientReply::Ok(p))),
        "[ -~]{0,40}".prop_map(|m| Reply(ClientReply::Err(m))),
    ]
}

proptest! {
    #[test]
    fn amount_round_trip(a in amount()) {
        let text = format_amount(a);
        prop_assert_eq!(parse_amount(&text).unwrap(), a);
        let (_, frac) = text.split_once('.').unwrap();
        prop_assert!(frac.len() == 1 || (frac.len() == 2 && !frac.ends_with('0')));
    }

    #[test]
    fn log_line_round_trip(b in branch(), r in record()) {
        let line = encode_log_line(b, &r);
        prop_assert_eq!(parse_log_line(&line).unwrap(), (b, r));
    }

    #[test]
    fn checkpoint_line_round_trip(b in branch(), account in account(), balance in amount()) {
        let e = CheckpointEntry { account, balance };
        let line = encode_checkpoint_line(b, &e);
        prop_assert_eq!(parse_checkpoint_line(&line).unwrap(), (b, e));
    }

    #[test]
    fn control_round_trip(m in control()) {
        let frame = encode_control(&m);
        prop_assert!(frame.ends_with('\n'));
        prop_assert_eq!(frame.matches('\n').count(), 1);
        prop_assert_eq!(parse_control(&frame).unwrap(), m);
    }
}

#[derive(Clone, Debug)]
enum Op {
    Open,
    Deposit(usize, u64),
    Withdraw(usize, u64),
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            1 => Just(Op::Open),
            3 => (0usize..50, 0u64..5_000).prop_map(|(i, c)| Op::Deposit(i, c)),
            3 => (0usize..50, 0u64..5_000).prop_map(|(i, c)| Op::Withdraw(i, c)),
        ],
        0..200,
    )
}

fn pick(state: &BranchState, i: usize) -> AccountId {
    let ids = state.list_accounts();
    if ids.is_empty() {
        AccountId::new(state.branch(), 0)
    } else {
        ids[i % ids.len()]
    }
}

proptest! {
    #[test]
    fn ledger_invariants_hold(ops in ops()) {
        let b = BranchId::new(1111).unwrap();
        let mut s = BranchState::new(b);
        for op in ops {
            let before = s.clone();
            let res = match op {
                Op::Open => s.open_account().map(|_| ()),
                Op::Deposit(i, c) => s.deposit(pick(&s, i), Amount::from_cents(c)).map(|_| ()),
                Op::Withdraw(i, c) => s.withdraw(pick(&s, i), Amount::from_cents(c)).map(|_| ()),
            };
            if res.is_err() {
                prop_assert_eq!(&s, &before);
            }
            let max_seq = s.list_accounts().iter().map(|a| a.seq() + 1).max().unwrap_or(0);
            prop_assert_eq!(s.next_seq(), max_seq);
            prop_assert!(s.list_accounts().iter().all(|a| a.belongs_to(b)));
        }
    }

    #[test]
    fn deposit_then_withdraw_restores(c in 1u64..1_000_000, start in 0u64..1_000_000) {
        let b = BranchId::new(1500).unwrap();
        let mut s = BranchState::new(b);
        let a = s.open_account().unwrap();
        if start > 0 {
            s.deposit(a, Amount::from_cents(start)).unwrap();
        }
        let before = s.clone();
        s.deposit(a, Amount::from_cents(c)).unwrap();
        s.withdraw(a, Amount::from_cents(c)).unwrap();
        prop_assert_eq!(&s, &before);
        if start >= c {
            s.withdraw(a, Amount::from_cents(c)).unwrap();
            s.deposit(a, Amount::from_cents(c)).unwrap();
            prop_assert_eq!(&s, &before);
        }
    }

    /// Logging every successful operation and replaying the log over the
    /// last checkpoint reproduces the live state.
    #[test]
    fn checkpoint_plus_replay_reproduces_live_state(
        ops in ops(),
        cut in prop::option::of(0usize..200),
    ) {
        let b = BranchId::new(1111).unwrap();
        let mut live = BranchState::new(b);
        let mut checkpoint = BranchState::new(b);
        let mut log = Vec::new();
        for (n, op) in ops.into_iter().enumerate() {
            if Some(n) == cut {
                checkpoint = live.clone();
                log.clear();
            }
            let rec = match op {
                Op::Open => live.open_account().map(|account| LogRecord::Open { account }),
                Op::Deposit(i, c) => {
                    let (account, amount) = (pick(&live, i), Amount::from_cents(c));
                    live.deposit(account, amount).map(|_| LogRecord::Deposit { account, amount })
                }
                Op::Withdraw(i, c) => {
                    let (account, amount) = (pick(&live, i), Amount::from_cents(c));
                    live.withdraw(account, amount).map(|_| LogRecord::Withdraw { account, amount })
                }
            };
            if let Ok(r) = rec {
                log.push(r);
            }
        }
        // the round trip through text is part of the recovery path
        let cp_text = encode_checkpoint_text(b, &checkpoint.checkpoint_entries());
        let log_text = encode_log_text(b, &log);
        let loaded = BranchState::from_entries(b, parse_checkpoint_text(b, &cp_text).unwrap()).unwrap();
        let (recovered, _) = replay(loaded.clone(), parse_log_text(b, &log_text).unwrap()).unwrap();
        prop_assert_eq!(&recovered, &live);
        let (again, _) = replay(loaded, log).unwrap();
        prop_assert_eq!(again, recovered);
    }

    /// A trailing unclosed transfer block never changes state.
    #[test]
    fn unclosed_block_contributes_nothing(deposits in prop::collection::vec(1u64..10_000, 0..5)) {
        let b = BranchId::new(1111).unwrap();
        let mut s = BranchState::new(b);
        let a = s.open_account().unwrap();
        let mut log = vec![LogRecord::TransferStart { src: AccountId::from_raw(1112000), dst: a }];
        log.extend(deposits.iter().map(|&c| LogRecord::Deposit { account: a, amount: Amount::from_cents(c) }));
        prop_assert!(check_careful_logging(&log).is_ok());
        let (after, summary) = replay(s.clone(), log).unwrap();
        prop_assert_eq!(after, s);
        prop_assert!(summary.discarded.is_some());
    }
}

/// Brute-force partition: add every pair as a set, then merge overlapping
/// sets until nothing changes.
fn brute_force_partition(pairs: &[(BranchId, BranchId)]) -> BTreeSet<BTreeSet<BranchId>> {
    let mut sets: Vec<BTreeSet<BranchId>> = pairs
        .iter()
        .filter(|(a, b)| a != b)
        .map(|&(a, b)| [a, b].into_iter().collect())
        .collect();
    loop {
        let mut merged = false;
        'outer: for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if !sets[i].is_disjoint(&sets[j]) {
                    let s = sets.remove(j);
                    sets[i].extend(s);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    sets.into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pool_matches_brute_force_partition(
        pairs in prop::collection::vec((0u16..6, 0u16..6), 0..20)
    ) {
        let pairs: Vec<_> = pairs
            .into_iter()
            .map(|(a, b)| (BranchId::new(1111 + a).unwrap(), BranchId::new(1111 + b).unwrap()))
            .collect();
        let mut pool = DependencyPool::new();
        for (k, &(a, b)) in pairs.iter().enumerate() {
            pool.record_dependency(a, b);
            prop_assert!(pool.is_partition());
            prop_assert_eq!(pool.canonical(), brute_force_partition(&pairs[..=k]));
        }
    }
}
