#![allow(dead_code)]

pub mod oracle;

use std::net::TcpListener;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use ftbank::config::ServerConfig;
use ftbank::rm::{self, NoRestarter, RmConfig, RmHandle};
use ftbank_core::BranchId;

pub fn b(n: u16) -> BranchId {
    BranchId::new(n).unwrap()
}

/// A loopback port with nobody listening on it.
pub fn dead_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

pub fn server_config(dir: &Path, branch: u16, rm_port: u16) -> ServerConfig {
    ServerConfig {
        branch: Some(b(branch)),
        data_dir: dir.to_owned(),
        listen_host: "127.0.0.1".into(),
        rm_port,
        monitor_port: dead_port(),
        heartbeat_interval: Duration::from_millis(100),
        peer_reply_timeout: Duration::from_millis(500),
        checkpoint_msg_timeout: Duration::from_secs(1),
        checkpoint_threshold: 1000,
        ..ServerConfig::default()
    }
}

pub fn start_rm() -> RmHandle {
    let cfg = RmConfig {
        listen_host: "127.0.0.1".into(),
        port: 0,
        session_timeout: Duration::from_millis(500),
        done_timeout: Duration::from_secs(2),
        ..RmConfig::default()
    };
    rm::spawn(cfg, Box::new(NoRestarter)).unwrap()
}

/// Polls `cond` every 10 ms until it holds or `limit` passes.
pub fn wait_for(limit: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + limit;
    while Instant::now() < end {
        if cond() {
            return true;
        }
        thread::sleep(Duration::from_millis(10));
    }
    cond()
}
