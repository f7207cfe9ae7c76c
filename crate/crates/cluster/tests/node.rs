mod support;

use std::fs;
use std::net::TcpListener;
use std::time::Duration;

use ftbank::client::{self, ClientError};
use ftbank::config::ServerConfig;
use ftbank::durability;
use ftbank::node::BootError;
use ftbank::Server;
use ftbank_core::wire::ClientRequest;
use ftbank_core::{AccountId, Amount};
use support::oracle::{interpret, Book};
use support::*;

const T: Duration = Duration::from_secs(5);

fn acct(n: u32) -> AccountId {
    AccountId::from_raw(n)
}

fn amt(s: &str) -> Amount {
    s.parse().unwrap()
}

fn ok(server: &Server, req: ClientRequest) -> String {
    client::call_ok(server.addr(), req, T).unwrap()
}

fn rejected(server: &Server, req: ClientRequest) -> String {
    match client::call_ok(server.addr(), req, T) {
        Err(ClientError::Rejected(m)) => m,
        other => panic!("expected a refusal, got {other:?}"),
    }
}

#[test]
fn client_operations_are_logged_and_survive_a_reboot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = server_config(dir.path(), 1401, dead_port());
    let server = Server::boot(cfg.clone()).unwrap();
    assert_eq!(ok(&server, ClientRequest::Open), "1401000");
    assert_eq!(ok(&server, ClientRequest::Open), "1401001");
    let a = acct(1401000);
    assert_eq!(ok(&server, ClientRequest::Deposit { account: a, amount: amt("100.0") }), "100.0");
    assert_eq!(ok(&server, ClientRequest::Withdraw { account: a, amount: amt("30.5") }), "69.5");
    rejected(&server, ClientRequest::Withdraw { account: a, amount: amt("1000.0") });
    rejected(&server, ClientRequest::Balance { account: acct(1401077) });
    rejected(&server, ClientRequest::Deposit { account: acct(1401077), amount: amt("1.0") });
    assert_eq!(ok(&server, ClientRequest::Balance { account: a }), "69.5");
    assert_eq!(ok(&server, ClientRequest::Accounts), "1401001 1401000");

    let log = fs::read_to_string(durability::log_path(dir.path(), b(1401))).unwrap();
    assert_eq!(
        log,
        "BANK #1401:OPEN 1401000\nBANK #1401:OPEN 1401001\n\
         BANK #1401:DEPOSIT 1401000 100.0\nBANK #1401:WITHDRAW 1401000 30.5\n"
    );
    assert_eq!(server.record_count(), 4);
    let before = server.state();
    server.shutdown();

    let server = Server::boot(cfg).unwrap();
    assert_eq!(server.state(), before);
    assert_eq!(
        Book::of(&server.state()),
        interpret(1401, "", &log).unwrap()
    );
    assert_eq!(ok(&server, ClientRequest::Open), "1401002");
}

#[test]
fn local_transfer_moves_money_within_the_branch() {
    let dir = tempfile::tempdir().unwrap();
    let rm = start_rm();
    let server = Server::boot(server_config(dir.path(), 1402, rm.addr().port())).unwrap();
    ok(&server, ClientRequest::Open);
    ok(&server, ClientRequest::Open);
    let (x, y) = (acct(1402000), acct(1402001));
    ok(&server, ClientRequest::Deposit { account: x, amount: amt("50.0") });
    assert_eq!(ok(&server, ClientRequest::Transfer { src: x, dst: y, amount: amt("20.0") }), "30.0");
    assert_eq!(ok(&server, ClientRequest::Balance { account: y }), "20.0");
    rejected(&server, ClientRequest::Transfer { src: x, dst: x, amount: amt("1.0") });
    rejected(&server, ClientRequest::Transfer { src: x, dst: y, amount: amt("31.0") });
    rejected(&server, ClientRequest::Transfer { src: x, dst: acct(1402009), amount: amt("1.0") });
    rejected(&server, ClientRequest::Transfer { src: acct(1403000), dst: y, amount: amt("1.0") });

    let snap = server.quiescent_snapshot();
    let log = snap.log.unwrap();
    assert!(log.ends_with(
        "BANK #1402:TRANSFER START 1402000-1402001\n\
         BANK #1402:WITHDRAW 1402000 20.0\n\
         BANK #1402:DEPOSIT 1402001 20.0\n\
         BANK #1402:TRANSFER COMMIT 1402000-1402001\n"
    ));
    assert_eq!(Book::of(&snap.state), interpret(1402, "", &log).unwrap());
    std::thread::sleep(Duration::from_millis(100));
    assert!(rm.frames().iter().all(|f| f.keyword != "DEPENDENCY"));
}

#[test]
fn remote_transfer_reports_one_dependency() {
    let dir = tempfile::tempdir().unwrap();
    let rm = start_rm();
    let port = rm.addr().port();
    let s1 = Server::boot(server_config(dir.path(), 1403, port)).unwrap();
    let s2 = Server::boot(server_config(dir.path(), 1404, port)).unwrap();
    ok(&s1, ClientRequest::Open);
    ok(&s2, ClientRequest::Open);
    let (x, y) = (acct(1403000), acct(1404000));
    ok(&s1, ClientRequest::Deposit { account: x, amount: amt("10.0") });
    assert_eq!(ok(&s1, ClientRequest::Transfer { src: x, dst: y, amount: amt("2.5") }), "7.5");
    assert_eq!(ok(&s2, ClientRequest::Balance { account: y }), "2.5");
    // to an account the receiver does not hold
    rejected(&s1, ClientRequest::Transfer { src: x, dst: acct(1404005), amount: amt("1.0") });
    assert_eq!(ok(&s1, ClientRequest::Balance { account: x }), "7.5");

    assert!(wait_for(T, || rm.frames().iter().any(|f| f.keyword == "DEPENDENCY")));
    let deps: Vec<_> = rm.frames().into_iter().filter(|f| f.keyword == "DEPENDENCY").collect();
    assert_eq!(deps.len(), 1);
    assert_eq!(deps[0].frame, "DEPENDENCY 1403 1404");
    assert_eq!(rm.pool().find_group(b(1403)), rm.pool().find_group(b(1404)));
    assert_eq!(s1.stats().transfers_committed, 1);
    assert_eq!(s1.stats().transfers_canceled, 1);
    for s in [&s1, &s2] {
        let snap = s.quiescent_snapshot();
        let text = snap.log.unwrap_or_default();
        let records = ftbank_core::wire::parse_log_text(s.branch(), &text).unwrap();
        ftbank_core::replay::check_careful_logging(&records).unwrap();
    }
}

#[test]
fn unreachable_peer_rolls_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = server_config(dir.path(), 1405, dead_port());
    cfg.peer_reply_timeout = Duration::from_millis(200);
    let server = Server::boot(cfg).unwrap();
    ok(&server, ClientRequest::Open);
    let x = acct(1405000);
    ok(&server, ClientRequest::Deposit { account: x, amount: amt("5.0") });
    let msg = rejected(&server, ClientRequest::Transfer { src: x, dst: acct(1406000), amount: amt("5.0") });
    assert!(msg.contains("1406"), "{msg}");
    assert_eq!(ok(&server, ClientRequest::Balance { account: x }), "5.0");
    let log = server.quiescent_snapshot().log.unwrap();
    assert!(log.ends_with(
        "BANK #1405:TRANSFER START 1405000-1406000\n\
         BANK #1405:WITHDRAW 1405000 5.0\n\
         BANK #1405:DEPOSIT 1405000 5.0\n\
         BANK #1405:TRANSFER CANCEL 1405000-1406000\n"
    ));
}

#[test]
fn reaching_the_threshold_checkpoints_and_resets_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let rm = start_rm();
    let mut cfg = server_config(dir.path(), 1407, rm.addr().port());
    cfg.checkpoint_threshold = 3;
    let server = Server::boot(cfg).unwrap();
    ok(&server, ClientRequest::Open);
    ok(&server, ClientRequest::Deposit { account: acct(1407000), amount: amt("8.0") });
    assert_eq!(server.stats().checkpoint_requests, 0);
    ok(&server, ClientRequest::Open);
    assert!(wait_for(T, || server.stats().checkpoints == 1));
    assert!(wait_for(T, || rm.sessions().len() == 1));
    assert_eq!(rm.sessions()[0].outcome, "committed");
    assert_eq!(rm.sessions()[0].group, vec![1407]);
    let snap = server.quiescent_snapshot();
    assert_eq!(snap.log, None);
    assert_eq!(
        snap.checkpoint.as_deref(),
        Some("BANK #1407:1407001 0.0\nBANK #1407:1407000 8.0\n")
    );
    assert_eq!(server.record_count(), 0);
}

#[test]
fn boot_without_a_branch_takes_the_first_free_port() {
    let dir = tempfile::tempdir().unwrap();
    let _taken = TcpListener::bind("127.0.0.1:1410").unwrap();
    let cfg = ServerConfig {
        branch: None,
        port_range: (1410, 1411),
        ..server_config(dir.path(), 1410, dead_port())
    };
    let server = Server::boot(cfg.clone()).unwrap();
    assert_eq!(server.branch(), b(1411));
    match Server::boot(cfg) {
        Err(BootError::NoFreePort(1410, 1411)) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(s) => panic!("booted a second server on {}", s.branch()),
    }
}

#[test]
fn corrupt_files_stop_the_boot() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(durability::log_path(dir.path(), b(1412)), "BANK #1412:DEPOSIT 1412000 1.0\n").unwrap();
    let cfg = server_config(dir.path(), 1412, dead_port());
    assert!(matches!(Server::boot(cfg), Err(BootError::Recovery(_))));
}

#[test]
fn oracle_reads_the_sample_files() {
    let checkpoint = "BANK #1111:1111005 1030.0\nBANK #1111:1111000 1374.0\n";
    let log = "BANK #1111:OPEN 1111006\nBANK #1111:DEPOSIT 1111006 1000.0\n\
               BANK #1111:TRANSFER START 1111000-1112000\nBANK #1111:WITHDRAW 1111000 10.0\n";
    let book = interpret(1111, checkpoint, log).unwrap();
    assert_eq!(book.balances[&1111006], 100000);
    assert_eq!(book.balances[&1111000], 137400);
    assert_eq!(book.next_account, 1111007);
    assert_eq!(book.total(), 100000 + 103000 + 137400);
    assert!(interpret(1111, "", "BANK #1111:WITHDRAW 1111000 1.0\n").is_err());
    assert!(interpret(1111, "", "BANK #1112:OPEN 1112000\n").is_err());
}
