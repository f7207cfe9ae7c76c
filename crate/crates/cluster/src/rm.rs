//! The recovery module: keeps the dependency pool, runs two-phase
//! checkpoints one at a time in arrival order, and restarts crashed
//! branches.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use ftbank_core::coordinator::{conclude_session, plan_session, run_two_phase, CheckpointParticipants, Outcome};
use ftbank_core::{BranchId, ControlMessage, DependencyPool};
use parking_lot::Mutex;
use serde::Serialize;

use crate::net::{self, Conn, NetError};

/// How long a silent connection may hold up intake.
const FIRST_FRAME_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Clone, Debug)]
pub struct RmConfig {
    pub listen_host: String,
    /// 0 picks a free port.
    pub port: u16,
    /// Reserved; sessions travel over connections to the branch ports.
    pub checkpoint_port: u16,
    pub peer_host: String,
    /// How long a member may take to answer `READY_FOR_CHECKPOINT`.
    pub session_timeout: Duration,
    /// How long a member may take to write its checkpoint.
    pub done_timeout: Duration,
    /// A second `RESTART` for the same branch within this window is ignored.
    pub restart_grace: Duration,
    /// Append every received frame and session to this JSON-lines file.
    pub event_log: Option<PathBuf>,
}

impl Default for RmConfig {
    fn default() -> Self {
        RmConfig {
            listen_host: "0.0.0.0".into(),
            port: 3000,
            checkpoint_port: 3001,
            peer_host: "127.0.0.1".into(),
            session_timeout: Duration::from_secs(1),
            done_timeout: Duration::from_secs(5),
            restart_grace: Duration::from_secs(10),
            event_log: None,
        }
    }
}

/// Relaunches a crashed branch server.
pub trait Restarter: Send {
    fn restart(&mut self, branch: BranchId) -> Result<(), String>;
}

/// Runs a shell command with `{branch}` replaced by the branch number.
pub struct CommandRestarter {
    pub template: String,
}

impl CommandRestarter {
    pub fn command_line(&self, branch: BranchId) -> String {
        self.template.replace("{branch}", &branch.to_string())
    }
}

impl Restarter for CommandRestarter {
    fn restart(&mut self, branch: BranchId) -> Result<(), String> {
        let line = self.command_line(branch);
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&line)
            .spawn()
            .map_err(|e| format!("cannot run `{line}`: {e}"))?;
        log::info!("restarting branch {branch}: `{line}` (pid {})", child.id());
        thread::spawn(move || {
            let _ = child.wait();
        });
        Ok(())
    }
}

/// Used when no restart command is configured.
pub struct NoRestarter;

impl Restarter for NoRestarter {
    fn restart(&mut self, _: BranchId) -> Result<(), String> {
        Err("no restart command configured".into())
    }
}

/// A frame received on the listening port.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct FrameEvent {
    /// Microseconds since the module started.
    pub at_us: u64,
    pub keyword: String,
    pub frame: String,
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct SessionRecord {
    pub requester: u16,
    pub group: Vec<u16>,
    pub outcome: String,
    /// Before the first frame of the session was sent.
    pub start_us: u64,
    /// After the last frame of the session was exchanged.
    pub end_us: u64,
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct RestartRecord {
    pub at_us: u64,
    pub branch: u16,
    /// `launched`, `suppressed` or `failed: ...`.
    pub result: String,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum JournalLine<'a> {
    Frame(&'a FrameEvent),
    Session(&'a SessionRecord),
    Restart(&'a RestartRecord),
}

#[derive(Default)]
struct PoolState {
    pool: DependencyPool,
    in_session: bool,
    /// Dependencies that arrived during a session, applied once it ends.
    deferred: Vec<(BranchId, BranchId)>,
}

#[derive(Default)]
struct Journal {
    frames: Vec<FrameEvent>,
    sessions: Vec<SessionRecord>,
    restarts: Vec<RestartRecord>,
    file: Option<File>,
}

impl Journal {
    fn write(&mut self, line: JournalLine<'_>) {
        if let Some(f) = &mut self.file {
            let text = serde_json::to_string(&line).expect("journal lines serialize");
            if let Err(e) = writeln!(f, "{text}") {
                log::warn!("event log write failed: {e}");
            }
        }
    }
}

struct Shared {
    cfg: RmConfig,
    epoch: Instant,
    pool: Mutex<PoolState>,
    journal: Mutex<Journal>,
    restarter: Mutex<Box<dyn Restarter>>,
    last_restart: Mutex<HashMap<BranchId, Instant>>,
    shutdown: AtomicBool,
}

impl Shared {
    fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    fn record_frame(&self, msg: &ControlMessage) {
        let ev = FrameEvent {
            at_us: self.now_us(),
            keyword: msg.keyword().to_owned(),
            frame: msg.to_frame().trim_end().to_owned(),
        };
        let mut j = self.journal.lock();
        j.write(JournalLine::Frame(&ev));
        j.frames.push(ev);
    }

    fn record_dependency(&self, a: BranchId, b: BranchId) {
        if a == b {
            log::warn!("ignoring dependency of branch {a} on itself");
            return;
        }
        let mut p = self.pool.lock();
        if p.in_session {
            p.deferred.push((a, b));
        } else {
            let change = p.pool.record_dependency(a, b);
            log::debug!("dependency {a}-{b}: {change:?}");
        }
    }

    fn restart(&self, branch: BranchId) {
        let result = {
            let mut last = self.last_restart.lock();
            match last.get(&branch) {
                Some(t) if t.elapsed() < self.cfg.restart_grace => "suppressed".to_owned(),
                _ => {
                    last.insert(branch, Instant::now());
                    drop(last);
                    match self.restarter.lock().restart(branch) {
                        Ok(()) => "launched".to_owned(),
                        Err(e) => {
                            log::error!("cannot restart branch {branch}: {e}");
                            format!("failed: {e}")
                        }
                    }
                }
            }
        };
        let rec = RestartRecord {
            at_us: self.now_us(),
            branch: branch.get(),
            result,
        };
        let mut j = self.journal.lock();
        j.write(JournalLine::Restart(&rec));
        j.restarts.push(rec);
    }

    fn recv(&self, conn: &mut Conn) -> Option<ControlMessage> {
        match conn.recv() {
            Ok(m) => Some(m),
            Err(NetError::Closed) => None,
            Err(e) => {
                log::warn!("dropping frame: {e}");
                None
            }
        }
    }

    fn dispatch(&self, msg: ControlMessage, queue: &mpsc::Sender<BranchId>) {
        self.record_frame(&msg);
        match msg {
            ControlMessage::Dependency { a, b } => self.record_dependency(a, b),
            ControlMessage::CheckpointRequest { branch } => {
                let _ = queue.send(branch);
            }
            ControlMessage::Restart { branch } => self.restart(branch),
            other => log::warn!("dropping unexpected {} frame", other.keyword()),
        }
    }

    /// Reads the first frame on the accepting thread, so frames sent one
    /// per connection (a branch's DEPENDENCY, then its CHECKPOINT) are
    /// handled in the order they were sent. Anything further on the same
    /// connection is read on its own thread.
    fn accept(self: &Arc<Self>, stream: TcpStream, queue: &mpsc::Sender<BranchId>) {
        let mut conn = Conn::new(stream);
        let _ = conn.set_timeout(Some(FIRST_FRAME_TIMEOUT));
        let Some(first) = self.recv(&mut conn) else { return };
        self.dispatch(first, queue);
        let _ = conn.set_timeout(Some(Duration::from_secs(5)));
        let shared = self.clone();
        let queue = queue.clone();
        let _ = thread::Builder::new().name("rm-conn".into()).spawn(move || {
            while let Some(msg) = shared.recv(&mut conn) {
                shared.dispatch(msg, &queue);
            }
        });
    }

    fn session(&self, requester: BranchId) {
        let plan = {
            let mut p = self.pool.lock();
            p.in_session = true;
            plan_session(&mut p.pool, requester)
        };
        let start_us = self.now_us();
        let outcome = {
            let mut members = TcpParticipants {
                cfg: &self.cfg,
                conns: BTreeMap::new(),
            };
            run_two_phase(&plan.group, &mut members)
        };
        let end_us = self.now_us();
        {
            let mut p = self.pool.lock();
            conclude_session(&mut p.pool, &plan, &outcome);
            p.in_session = false;
            let deferred = std::mem::take(&mut p.deferred);
            for (a, b) in deferred {
                p.pool.record_dependency(a, b);
            }
        }
        match &outcome {
            Outcome::Committed => log::info!("checkpoint of {:?} committed", plan.group),
            Outcome::Canceled { unready, canceled } => {
                log::warn!("checkpoint of {:?} canceled: {unready} not ready, canceled {canceled:?}", plan.group)
            }
            Outcome::Partial { done, missing } => {
                log::error!("checkpoint of {:?} partial: done {done:?}, missing {missing:?}", plan.group)
            }
        }
        let rec = SessionRecord {
            requester: requester.get(),
            group: plan.group.iter().map(|b| b.get()).collect(),
            outcome: outcome.label().to_owned(),
            start_us,
            end_us,
        };
        let mut j = self.journal.lock();
        j.write(JournalLine::Session(&rec));
        j.sessions.push(rec);
    }
}

/// One connection per member, opened in phase one and reused in phase two.
struct TcpParticipants<'a> {
    cfg: &'a RmConfig,
    conns: BTreeMap<BranchId, Conn>,
}

impl TcpParticipants<'_> {
    fn open(&self, member: BranchId) -> Result<Conn, NetError> {
        let addr = net::resolve(&self.cfg.peer_host, member.port())?;
        let mut c = Conn::connect(addr, self.cfg.session_timeout)?;
        c.send(&ControlMessage::ReadyForCheckpoint)?;
        match c.recv()? {
            ControlMessage::ReadyForCheckpoint => Ok(c),
            other => Err(NetError::Unexpected(other.keyword())),
        }
    }
}

impl CheckpointParticipants for TcpParticipants<'_> {
    fn prepare(&mut self, member: BranchId) -> bool {
        match self.open(member) {
            Ok(c) => {
                self.conns.insert(member, c);
                true
            }
            Err(e) => {
                log::warn!("branch {member} not ready for checkpoint: {e}");
                false
            }
        }
    }

    fn commit(&mut self, member: BranchId) -> bool {
        let Some(c) = self.conns.get_mut(&member) else {
            return false;
        };
        let res = c
            .set_timeout(Some(self.cfg.done_timeout))
            .map_err(NetError::from)
            .and_then(|_| c.send(&ControlMessage::DoCheckpoint).map_err(NetError::from))
            .and_then(|_| c.recv());
        match res {
            Ok(ControlMessage::CheckpointDone) => true,
            Ok(other) => {
                log::error!("branch {member} answered DO_CHECKPOINT with {}", other.keyword());
                false
            }
            Err(e) => {
                log::error!("branch {member} did not confirm its checkpoint: {e}");
                false
            }
        }
    }

    fn cancel(&mut self, member: BranchId) {
        if let Some(mut c) = self.conns.remove(&member) {
            if let Err(e) = c.send(&ControlMessage::CancelCheckpoint) {
                log::warn!("CANCEL_CHECKPOINT to {member} lost: {e}");
            }
        }
    }
}

pub struct RmHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    listener: Arc<TcpListener>,
    threads: Vec<JoinHandle<()>>,
}

/// Starts the module on its own threads.
pub fn spawn(cfg: RmConfig, restarter: Box<dyn Restarter>) -> io::Result<RmHandle> {
    let listener = Arc::new(TcpListener::bind((cfg.listen_host.as_str(), cfg.port))?);
    let addr = listener.local_addr()?;
    let file = match &cfg.event_log {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let shared = Arc::new(Shared {
        cfg,
        epoch: Instant::now(),
        pool: Mutex::new(PoolState::default()),
        journal: Mutex::new(Journal {
            file,
            ..Default::default()
        }),
        restarter: Mutex::new(restarter),
        last_restart: Mutex::new(HashMap::new()),
        shutdown: AtomicBool::new(false),
    });
    let (tx, rx) = mpsc::channel::<BranchId>();
    let worker = {
        let shared = shared.clone();
        thread::Builder::new().name("rm-checkpoint".into()).spawn(move || {
            while !shared.shutdown.load(Ordering::SeqCst) {
                match rx.recv_timeout(Duration::from_millis(100)) {
                    Ok(b) => shared.session(b),
                    Err(mpsc::RecvTimeoutError::Timeout) => {}
                    Err(mpsc::RecvTimeoutError::Disconnected) => break,
                }
            }
        })?
    };
    let accept = {
        let shared = shared.clone();
        let listener = listener.clone();
        thread::Builder::new().name("rm-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                shared.accept(stream, &tx);
            }
        })?
    };
    log::info!("recovery module listening on {addr}");
    Ok(RmHandle {
        addr,
        shared,
        listener,
        threads: vec![accept, worker],
    })
}

impl RmHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn frames(&self) -> Vec<FrameEvent> {
        self.shared.journal.lock().frames.clone()
    }

    pub fn sessions(&self) -> Vec<SessionRecord> {
        self.shared.journal.lock().sessions.clone()
    }

    pub fn restarts(&self) -> Vec<RestartRecord> {
        self.shared.journal.lock().restarts.clone()
    }

    pub fn pool(&self) -> DependencyPool {
        self.shared.pool.lock().pool.clone()
    }

    /// Blocks until the module is shut down from another thread.
    pub fn run(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for RmHandle {
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
