//! The heartbeat monitor: branches register, then heartbeat; a branch that
//! stays silent longer than the timeout is reported to the recovery module
//! for a restart.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use ftbank_core::registry::{HeartbeatOutcome, HeartbeatRegistry};
use ftbank_core::{BranchId, ControlMessage};
use parking_lot::Mutex;

use crate::net::{self, Conn, NetError};

#[derive(Clone, Debug)]
pub struct MonitorConfig {
    pub listen_host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub rm_host: String,
    pub rm_port: u16,
    pub timeout: Duration,
    /// Defaults to a third of `timeout`.
    pub check_period: Option<Duration>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            listen_host: "0.0.0.0".into(),
            port: 3100,
            rm_host: "127.0.0.1".into(),
            rm_port: 3000,
            timeout: Duration::from_secs(30),
            check_period: None,
        }
    }
}

impl MonitorConfig {
    pub fn period(&self) -> Duration {
        self.check_period.unwrap_or(self.timeout / 3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Notice {
    pub at: Duration,
    pub branch: BranchId,
}

#[derive(Default)]
struct Log {
    registrations: Vec<Notice>,
    restarts: Vec<Notice>,
}

struct Shared {
    cfg: MonitorConfig,
    epoch: Instant,
    registry: Mutex<HeartbeatRegistry>,
    log: Mutex<Log>,
    shutdown: AtomicBool,
}

impl Shared {
    fn handle(&self, stream: TcpStream) {
        let mut conn = Conn::new(stream);
        let _ = conn.set_timeout(Some(Duration::from_secs(5)));
        loop {
            let msg = match conn.recv() {
                Ok(m) => m,
                Err(NetError::Closed) => return,
                Err(e) => {
                    log::warn!("monitor: dropping frame: {e}");
                    return;
                }
            };
            let now = self.epoch.elapsed();
            match msg {
                ControlMessage::Register { host, branch } => {
                    log::info!("monitor: branch {branch} registered from {host}");
                    self.registry.lock().register(host, branch, now);
                    self.log.lock().registrations.push(Notice { at: now, branch });
                }
                ControlMessage::Heartbeat { branch } => {
                    if self.registry.lock().heartbeat(branch, now) == HeartbeatOutcome::Unregistered {
                        log::warn!("monitor: heartbeat from unregistered branch {branch}");
                    }
                }
                other => log::warn!("monitor: dropping unexpected {} frame", other.keyword()),
            }
        }
    }

    fn check(&self) {
        let now = self.epoch.elapsed();
        let sent = self.registry.lock().check(now, self.cfg.timeout, |branch| {
            let msg = ControlMessage::Restart { branch };
            let res = net::resolve(&self.cfg.rm_host, self.cfg.rm_port)
                .and_then(|a| net::send_oneway(a, &msg, Duration::from_secs(1)));
            match res {
                Ok(()) => {
                    log::warn!("monitor: branch {branch} silent, restart requested");
                    true
                }
                Err(e) => {
                    log::error!("monitor: cannot ask for a restart of {branch}: {e}");
                    false
                }
            }
        });
        if !sent.is_empty() {
            let mut log = self.log.lock();
            log.restarts
                .extend(sent.into_iter().map(|branch| Notice { at: now, branch }));
        }
    }
}

pub struct MonitorHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    listener: Arc<TcpListener>,
    threads: Vec<JoinHandle<()>>,
}

pub fn spawn(cfg: MonitorConfig) -> io::Result<MonitorHandle> {
    let listener = Arc::new(TcpListener::bind((cfg.listen_host.as_str(), cfg.port))?);
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        cfg,
        epoch: Instant::now(),
        registry: Mutex::new(HeartbeatRegistry::new()),
        log: Mutex::new(Log::default()),
        shutdown: AtomicBool::new(false),
    });
    let checker = {
        let shared = shared.clone();
        thread::Builder::new().name("monitor-check".into()).spawn(move || {
            let period = shared.cfg.period();
            while !shared.shutdown.load(Ordering::SeqCst) {
                thread::sleep(period);
                shared.check();
            }
        })?
    };
    let accept = {
        let shared = shared.clone();
        let listener = listener.clone();
        thread::Builder::new().name("monitor-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let shared = shared.clone();
                let _ = thread::Builder::new()
                    .name("monitor-conn".into())
                    .spawn(move || shared.handle(stream));
            }
        })?
    };
    log::info!("monitor listening on {addr}");
    Ok(MonitorHandle {
        addr,
        shared,
        listener,
        threads: vec![accept, checker],
    })
}

impl MonitorHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn registry(&self) -> HeartbeatRegistry {
        self.shared.registry.lock().clone()
    }

    pub fn registrations(&self) -> Vec<Notice> {
        self.shared.log.lock().registrations.clone()
    }

    pub fn restarts(&self) -> Vec<Notice> {
        self.shared.log.lock().restarts.clone()
    }

    pub fn run(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for MonitorHandle {
    fn drop(&mut self) {
        if self.threads.is_empty() {
            return;
        }
        self.shared.shutdown.store(true, Ordering::SeqCst);
        net::poke(&self.listener);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}
