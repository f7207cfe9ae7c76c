mod support;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use ftbank::monitor::{self, MonitorConfig};
use ftbank::net;
use ftbank::rm::{self, Restarter, RmConfig};
use ftbank_core::{BranchId, ControlMessage};
use parking_lot::Mutex;
use support::*;

const T: Duration = Duration::from_secs(5);

#[derive(Clone, Default)]
struct Recorder(Arc<Mutex<Vec<BranchId>>>);

impl Restarter for Recorder {
    fn restart(&mut self, branch: BranchId) -> Result<(), String> {
        self.0.lock().push(branch);
        Ok(())
    }
}

fn send(addr: SocketAddr, msg: ControlMessage) {
    net::send_oneway(addr, &msg, T).unwrap();
}

#[test]
fn repeated_restart_requests_within_the_grace_period_launch_once() {
    let rec = Recorder::default();
    let cfg = RmConfig {
        listen_host: "127.0.0.1".into(),
        port: 0,
        restart_grace: Duration::from_secs(30),
        ..RmConfig::default()
    };
    let rm = rm::spawn(cfg, Box::new(rec.clone())).unwrap();
    send(rm.addr(), ControlMessage::Restart { branch: b(1430) });
    send(rm.addr(), ControlMessage::Restart { branch: b(1430) });
    send(rm.addr(), ControlMessage::Restart { branch: b(1431) });
    assert!(wait_for(T, || rm.restarts().len() == 3));
    let results: Vec<_> = rm.restarts().into_iter().map(|r| (r.branch, r.result)).collect();
    assert_eq!(
        results,
        [
            (1430, "launched".to_string()),
            (1430, "suppressed".to_string()),
            (1431, "launched".to_string())
        ]
    );
    assert_eq!(*rec.0.lock(), [b(1430), b(1431)]);
}

#[test]
fn dependencies_merge_groups_in_the_pool() {
    let rm = start_rm();
    send(rm.addr(), ControlMessage::Dependency { a: b(1432), b: b(1433) });
    send(rm.addr(), ControlMessage::Dependency { a: b(1434), b: b(1435) });
    send(rm.addr(), ControlMessage::Dependency { a: b(1433), b: b(1434) });
    assert!(wait_for(T, || rm.pool().groups().len() == 1));
    let pool = rm.pool();
    assert!(pool.is_partition());
    let g = pool.find_group(b(1435)).unwrap();
    assert_eq!(pool.find_group(b(1432)), Some(g));
}

#[test]
fn checkpoint_for_a_dead_branch_is_canceled_and_leaves_the_pool_alone() {
    let rm = start_rm();
    send(rm.addr(), ControlMessage::Dependency { a: b(1436), b: b(1437) });
    send(rm.addr(), ControlMessage::CheckpointRequest { branch: b(1436) });
    assert!(wait_for(T, || rm.sessions().len() == 1));
    let s = &rm.sessions()[0];
    assert_eq!(s.outcome, "canceled");
    assert_eq!(s.group, vec![1436, 1437]);
    assert!(rm.pool().find_group(b(1437)).is_some());

    // A requester outside every group checkpoints alone and, failing, is
    // not left behind as a singleton.
    send(rm.addr(), ControlMessage::CheckpointRequest { branch: b(1438) });
    assert!(wait_for(T, || rm.sessions().len() == 2));
    assert_eq!(rm.sessions()[1].group, vec![1438]);
    assert_eq!(rm.pool().find_group(b(1438)), None);
}

#[test]
fn monitor_reports_a_silent_branch_once() {
    let rec = Recorder::default();
    let rm = rm::spawn(
        RmConfig {
            listen_host: "127.0.0.1".into(),
            port: 0,
            ..RmConfig::default()
        },
        Box::new(rec.clone()),
    )
    .unwrap();
    let mon = monitor::spawn(MonitorConfig {
        listen_host: "127.0.0.1".into(),
        port: 0,
        rm_host: "127.0.0.1".into(),
        rm_port: rm.addr().port(),
        timeout: Duration::from_millis(300),
        check_period: None,
    })
    .unwrap();
    send(
        mon.addr(),
        ControlMessage::Register { host: "127.0.0.1".into(), branch: b(1439) },
    );
    // heartbeats keep it alive
    for _ in 0..8 {
        std::thread::sleep(Duration::from_millis(100));
        send(mon.addr(), ControlMessage::Heartbeat { branch: b(1439) });
    }
    assert!(rec.0.lock().is_empty());
    assert!(wait_for(T, || !rec.0.lock().is_empty()));
    std::thread::sleep(Duration::from_millis(800));
    assert_eq!(*rec.0.lock(), [b(1439)]);
    assert_eq!(mon.restarts().len(), 1);
    assert_eq!(mon.registrations().len(), 1);
    let frames: Vec<_> = rm.frames().into_iter().filter(|f| f.keyword == "RESTART").collect();
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].frame, "RESTART 1439");
}
