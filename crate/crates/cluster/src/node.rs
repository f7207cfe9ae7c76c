//! The branch server: recovery at boot, client service, both sides of an
//! inter-branch transfer, the checkpoint participant and the heartbeat.
//!
//! Every mutation holds `gate` for its whole duration, a transfer included
//! (network waits too), so log records of different operations never
//! interleave. Reads take only the ledger lock.

use std::fs;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use ftbank_core::wire::{ClientReply, ClientRequest};
use ftbank_core::{
    AccountId, Amount, BranchId, BranchState, ControlMessage, CrashPoint, LedgerError, LogRecord,
};
use parking_lot::{Mutex, RwLock};

use crate::config::{ConfigError, ServerConfig};
use crate::durability::{self, LogStore, StoreError};
use crate::net::{self, Conn, NetError};

/// Exit status used when a crash point fires.
pub const CRASH_EXIT_CODE: i32 = 86;
/// Exit status after a failed log append.
pub const FATAL_EXIT_CODE: i32 = 70;

const CLIENT_IDLE: Duration = Duration::from_secs(30);

#[derive(Debug, thiserror::Error)]
pub enum BootError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no free port in {0}..={1}")]
    NoFreePort(u16, u16),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot create {}: {source}", path.display())]
    DataDir {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("recovery failed: {0}")]
    Recovery(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub checkpoint_requests: u64,
    pub checkpoints: u64,
    /// Sessions ended by an explicit `CANCEL_CHECKPOINT`.
    pub checkpoint_cancels: u64,
    /// Sessions that ended in silence or a hang-up before `DO_CHECKPOINT`.
    pub checkpoint_aborts: u64,
    pub transfers_committed: u64,
    pub transfers_canceled: u64,
}

#[derive(Default)]
struct Counters {
    checkpoint_requests: AtomicU64,
    checkpoints: AtomicU64,
    checkpoint_cancels: AtomicU64,
    checkpoint_aborts: AtomicU64,
    transfers_committed: AtomicU64,
    transfers_canceled: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

/// Live state together with the file contents it should be recoverable
/// from, taken while no mutation or checkpoint is in progress.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub state: BranchState,
    pub checkpoint: Option<String>,
    pub log: Option<String>,
}

struct Node {
    cfg: ServerConfig,
    branch: BranchId,
    gate: Mutex<()>,
    ledger: RwLock<BranchState>,
    store: Mutex<LogStore>,
    in_transfer: AtomicBool,
    checkpoint_requested: Mutex<Option<Instant>>,
    shutdown: AtomicBool,
    counters: Counters,
}

struct TransferFlag<'a>(&'a AtomicBool);

impl<'a> TransferFlag<'a> {
    fn raise(flag: &'a AtomicBool) -> Self {
        flag.store(true, Ordering::SeqCst);
        TransferFlag(flag)
    }
}

impl Drop for TransferFlag<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

pub struct Server {
    node: Arc<Node>,
    addr: SocketAddr,
    listener: Arc<TcpListener>,
    accept: Option<JoinHandle<()>>,
    heartbeat: Option<JoinHandle<()>>,
    stop_heartbeat: Option<mpsc::Sender<()>>,
}

fn bind(cfg: &ServerConfig) -> Result<(TcpListener, BranchId), BootError> {
    if let Some(b) = cfg.branch {
        return TcpListener::bind((cfg.listen_host.as_str(), b.port()))
            .map(|l| (l, b))
            .map_err(|source| BootError::Bind {
                addr: format!("{}:{}", cfg.listen_host, b.port()),
                source,
            });
    }
    let (lo, hi) = cfg.port_range;
    for port in lo..=hi {
        if let Ok(l) = TcpListener::bind((cfg.listen_host.as_str(), port)) {
            let b = BranchId::new(port).expect("range validated");
            return Ok((l, b));
        }
    }
    Err(BootError::NoFreePort(lo, hi))
}

impl Server {
    /// Binds the branch port, recovers from the files and starts serving.
    /// Connections that arrive during recovery wait in the backlog.
    pub fn boot(cfg: ServerConfig) -> Result<Server, BootError> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.data_dir).map_err(|source| BootError::DataDir {
            path: cfg.data_dir.clone(),
            source,
        })?;
        let (listener, branch) = bind(&cfg)?;
        let rec = durability::recover(&cfg.data_dir, branch)?;
        log::info!(
            "branch {branch}: recovered {} accounts, {} log records",
            rec.state.len(),
            rec.store.record_count()
        );
        let addr = listener.local_addr().map_err(|source| BootError::Bind {
            addr: cfg.listen_host.clone(),
            source,
        })?;
        let node = Arc::new(Node {
            cfg,
            branch,
            gate: Mutex::new(()),
            ledger: RwLock::new(rec.state),
            store: Mutex::new(rec.store),
            in_transfer: AtomicBool::new(false),
            checkpoint_requested: Mutex::new(None),
            shutdown: AtomicBool::new(false),
            counters: Counters::default(),
        });
        let listener = Arc::new(listener);
        let accept = {
            let node = node.clone();
            let listener = listener.clone();
            thread::Builder::new()
                .name(format!("bank-{branch}-accept"))
                .spawn(move || node.accept_loop(&listener))
                .expect("spawn accept thread")
        };
        let (stop_tx, stop_rx) = mpsc::channel();
        let heartbeat = {
            let node = node.clone();
            thread::Builder::new()
                .name(format!("bank-{branch}-heartbeat"))
                .spawn(move || node.heartbeat_loop(stop_rx))
                .expect("spawn heartbeat thread")
        };
        Ok(Server {
            node,
            addr,
            listener,
            accept: Some(accept),
            heartbeat: Some(heartbeat),
            stop_heartbeat: Some(stop_tx),
        })
    }

    pub fn branch(&self) -> BranchId {
        self.node.branch
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn state(&self) -> BranchState {
        self.node.ledger.read().clone()
    }

    pub fn record_count(&self) -> usize {
        self.node.store.lock().record_count()
    }

    pub fn stats(&self) -> ServerStats {
        let c = &self.node.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        ServerStats {
            checkpoint_requests: get(&c.checkpoint_requests),
            checkpoints: get(&c.checkpoints),
            checkpoint_cancels: get(&c.checkpoint_cancels),
            checkpoint_aborts: get(&c.checkpoint_aborts),
            transfers_committed: get(&c.transfers_committed),
            transfers_canceled: get(&c.transfers_canceled),
        }
    }

    pub fn quiescent_snapshot(&self) -> Snapshot {
        let _g = self.node.gate.lock();
        let state = self.node.ledger.read().clone();
        let dir = &self.node.cfg.data_dir;
        let read = |p: PathBuf| fs::read_to_string(p).ok();
        Snapshot {
            state,
            checkpoint: read(durability::checkpoint_path(dir, self.node.branch)),
            log: read(durability::log_path(dir, self.node.branch)),
        }
    }

    /// Serves until the process ends.
    pub fn run(mut self) {
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.node.shutdown.store(true, Ordering::SeqCst);
        self.stop_heartbeat.take();
        net::poke(&self.listener);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        if let Some(t) = self.heartbeat.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

impl Node {
    fn crash_at(&self, p: CrashPoint) {
        if self.cfg.crash_point == Some(p) {
            log::error!("branch {}: crash point {p} reached", self.branch);
            // SAFETY: _exit only terminates the process.
            unsafe { libc::_exit(CRASH_EXIT_CODE) }
        }
    }

    fn rm_addr(&self) -> io::Result<SocketAddr> {
        net::resolve(&self.cfg.rm_host, self.cfg.rm_port)
    }

    fn append(&self, record: &LogRecord) {
        let res = self.store.lock().append(record);
        if let Err(e) = res {
            log::error!("branch {}: cannot log {record}: {e}", self.branch);
            std::process::exit(FATAL_EXIT_CODE);
        }
    }

    /// Logs a record that has no effect on balances.
    fn log(&self, record: LogRecord) {
        self.append(&record);
        self.maybe_request_checkpoint();
    }

    /// Applies an account operation and logs it before anybody can read the
    /// result.
    fn mutate<T>(
        &self,
        op: impl FnOnce(&mut BranchState) -> Result<(T, LogRecord), LedgerError>,
    ) -> Result<T, LedgerError> {
        let mut ledger = self.ledger.write();
        let (out, record) = op(&mut ledger)?;
        self.append(&record);
        drop(ledger);
        self.maybe_request_checkpoint();
        Ok(out)
    }

    fn deposit(&self, account: AccountId, amount: Amount) -> Result<Amount, LedgerError> {
        self.mutate(|s| Ok((s.deposit(account, amount)?, LogRecord::Deposit { account, amount })))
    }

    fn withdraw(&self, account: AccountId, amount: Amount) -> Result<Amount, LedgerError> {
        self.mutate(|s| Ok((s.withdraw(account, amount)?, LogRecord::Withdraw { account, amount })))
    }

    fn maybe_request_checkpoint(&self) {
        if self.in_transfer.load(Ordering::SeqCst) {
            return;
        }
        if self.store.lock().record_count() < self.cfg.checkpoint_threshold {
            return;
        }
        let mut requested = self.checkpoint_requested.lock();
        if let Some(at) = *requested {
            if at.elapsed() < self.cfg.checkpoint_msg_timeout * 4 {
                return;
            }
        }
        let msg = ControlMessage::CheckpointRequest {
            branch: self.branch,
        };
        match self
            .rm_addr()
            .and_then(|a| net::send_oneway(a, &msg, self.cfg.peer_reply_timeout))
        {
            Ok(()) => {
                *requested = Some(Instant::now());
                bump(&self.counters.checkpoint_requests);
                log::debug!("branch {}: checkpoint requested", self.branch);
            }
            Err(e) => log::warn!("branch {}: cannot request checkpoint: {e}", self.branch),
        }
    }

    fn accept_loop(self: &Arc<Self>, listener: &TcpListener) {
        for stream in listener.incoming() {
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(s) => {
                    let node = self.clone();
                    let spawned = thread::Builder::new()
                        .name(format!("bank-{}-conn", self.branch))
                        .spawn(move || node.handle(s));
                    if let Err(e) = spawned {
                        log::error!("branch {}: cannot spawn handler: {e}", self.branch);
                    }
                }
                Err(e) => log::warn!("branch {}: accept failed: {e}", self.branch),
            }
        }
    }

    fn handle(&self, stream: TcpStream) {
        let mut conn = Conn::new(stream);
        let _ = conn.set_timeout(Some(CLIENT_IDLE));
        let msg = match conn.recv() {
            Ok(m) => m,
            Err(NetError::Closed) => return,
            Err(e) => {
                log::warn!("branch {}: {e}", self.branch);
                let _ = conn.send(&ControlMessage::Reply(ClientReply::Err(e.to_string())));
                return;
            }
        };
        match msg {
            ControlMessage::Request(req) => {
                let reply = self.serve_client(req);
                if let Err(e) = conn.send(&ControlMessage::Reply(reply)) {
                    log::debug!("branch {}: reply lost: {e}", self.branch);
                }
            }
            ControlMessage::Transfer {
                from,
                src,
                dst,
                amount,
            } => self.transfer_receiving(conn, from, src, dst, amount),
            ControlMessage::ReadyForCheckpoint => self.checkpoint_follower(conn),
            other => {
                log::warn!("branch {}: unexpected {}", self.branch, other.keyword());
                let msg = format!("unexpected {} frame", other.keyword());
                let _ = conn.send(&ControlMessage::Reply(ClientReply::Err(msg)));
            }
        }
    }

    fn serve_client(&self, req: ClientRequest) -> ClientReply {
        let res: Result<String, String> = match req {
            ClientRequest::Balance { account } => self
                .ledger
                .read()
                .balance(account)
                .map(|b| b.to_string())
                .map_err(|e| e.to_string()),
            ClientRequest::Accounts => {
                let ids = self.ledger.read().list_accounts();
                Ok(ids.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" "))
            }
            ClientRequest::Open => {
                let _g = self.gate.lock();
                self.mutate(|s| {
                    let account = s.open_account()?;
                    Ok((account, LogRecord::Open { account }))
                })
                .map(|a| a.to_string())
                .map_err(|e| e.to_string())
            }
            ClientRequest::Deposit { account, amount } => {
                let _g = self.gate.lock();
                self.deposit(account, amount)
                    .map(|b| b.to_string())
                    .map_err(|e| e.to_string())
            }
            ClientRequest::Withdraw { account, amount } => {
                let _g = self.gate.lock();
                self.withdraw(account, amount)
                    .map(|b| b.to_string())
                    .map_err(|e| e.to_string())
            }
            ClientRequest::Transfer { src, dst, amount } => self
                .transfer_leading(src, dst, amount)
                .map(|b| b.to_string()),
        };
        match res {
            Ok(p) => ClientReply::Ok(p),
            Err(m) => ClientReply::Err(m),
        }
    }

    /// Checks a transfer this branch leads. `Ok(Some(b))` means the
    /// destination lives on branch `b`.
    fn validate_leading(
        &self,
        src: AccountId,
        dst: AccountId,
        amount: Amount,
    ) -> Result<Option<BranchId>, String> {
        if amount.is_zero() {
            return Err(LedgerError::NonPositiveAmount.to_string());
        }
        if !src.belongs_to(self.branch) {
            return Err(LedgerError::UnknownAccount(src).to_string());
        }
        if src == dst {
            return Err("Source and destination accounts are the same.".into());
        }
        let ledger = self.ledger.read();
        ledger.check_withdraw(src, amount).map_err(|e| e.to_string())?;
        match dst.branch() {
            Some(b) if b == self.branch => {
                if ledger.contains(dst) {
                    Ok(None)
                } else {
                    Err(LedgerError::UnknownAccount(dst).to_string())
                }
            }
            Some(b) => Ok(Some(b)),
            None => Err(LedgerError::UnknownAccount(dst).to_string()),
        }
    }

    fn transfer_leading(&self, src: AccountId, dst: AccountId, amount: Amount) -> Result<Amount, String> {
        let _g = self.gate.lock();
        let peer = self.validate_leading(src, dst, amount)?;
        let res = {
            let _flag = TransferFlag::raise(&self.in_transfer);
            self.log(LogRecord::TransferStart { src, dst });
            self.crash_at(CrashPoint::AfterStartLog);
            let balance = self
                .withdraw(src, amount)
                .expect("funds were checked under the gate");
            self.crash_at(CrashPoint::AfterWithdrawLog);
            match peer {
                None => {
                    self.deposit(dst, amount)
                        .expect("destination was checked under the gate");
                    self.log(LogRecord::TransferCommit { src, dst });
                    Ok(balance)
                }
                Some(peer) => match self.call_peer(peer, src, dst, amount) {
                    Ok(mut conn) => {
                        self.crash_at(CrashPoint::BeforeCommitLog);
                        self.log(LogRecord::TransferCommit { src, dst });
                        // The receiver commits only after hearing this.
                        if let Err(e) = conn.send(&ControlMessage::PeerOk {
                            branch: self.branch,
                        }) {
                            log::warn!("branch {}: commit confirmation to {peer} lost: {e}", self.branch);
                        }
                        self.report_dependency(peer);
                        Ok(balance)
                    }
                    Err(reason) => {
                        log::warn!("branch {}: transfer {src}-{dst} rolled back: {reason}", self.branch);
                        self.deposit(src, amount)
                            .expect("rollback restores what was withdrawn");
                        self.log(LogRecord::TransferCancel { src, dst });
                        Err(reason)
                    }
                },
            }
        };
        match &res {
            Ok(_) => bump(&self.counters.transfers_committed),
            Err(_) => bump(&self.counters.transfers_canceled),
        }
        self.maybe_request_checkpoint();
        res
    }

    /// Hands the deposit to the receiving branch and waits for its `OK`.
    fn call_peer(&self, peer: BranchId, src: AccountId, dst: AccountId, amount: Amount) -> Result<Conn, String> {
        let timeout = self.cfg.peer_reply_timeout;
        let unreachable = |e: &dyn std::fmt::Display| format!("Bank Server #{peer} is unreachable: {e}");
        self.crash_at(CrashPoint::BeforePeerSend);
        let addr = net::resolve(&self.cfg.peer_host, peer.port()).map_err(|e| unreachable(&e))?;
        let mut conn = Conn::connect(addr, timeout).map_err(|e| unreachable(&e))?;
        conn.send(&ControlMessage::Transfer {
            from: self.branch,
            src,
            dst,
            amount,
        })
        .map_err(|e| unreachable(&e))?;
        self.crash_at(CrashPoint::AfterPeerSend);
        match conn.recv() {
            Ok(ControlMessage::PeerOk { branch }) if branch == peer => Ok(conn),
            Ok(ControlMessage::PeerErr { message, .. }) => Err(message),
            Ok(other) => Err(format!(
                "Bank Server #{peer} sent an unexpected {} frame.",
                other.keyword()
            )),
            Err(e) if e.is_timeout() => Err(format!("Bank Server #{peer} did not answer in time.")),
            Err(e) => Err(format!("Bank Server #{peer} failed: {e}")),
        }
    }

    fn report_dependency(&self, peer: BranchId) {
        let msg = ControlMessage::Dependency {
            a: self.branch,
            b: peer,
        };
        if let Err(e) = self
            .rm_addr()
            .and_then(|a| net::send_oneway(a, &msg, self.cfg.peer_reply_timeout))
        {
            log::warn!("branch {}: cannot report dependency on {peer}: {e}", self.branch);
        }
    }

    fn validate_receiving(&self, from: BranchId, dst: AccountId, amount: Amount) -> Result<(), String> {
        if from == self.branch {
            return Err("Transfer frame names this branch as its leader.".into());
        }
        if amount.is_zero() {
            return Err(LedgerError::NonPositiveAmount.to_string());
        }
        if !dst.belongs_to(self.branch) || !self.ledger.read().contains(dst) {
            return Err(LedgerError::UnknownAccount(dst).to_string());
        }
        Ok(())
    }

    fn transfer_receiving(&self, mut conn: Conn, from: BranchId, src: AccountId, dst: AccountId, amount: Amount) {
        let refuse = |conn: &mut Conn, message: String| {
            let _ = conn.send(&ControlMessage::PeerErr {
                branch: self.branch,
                message,
            });
        };
        let Some(_g) = self.gate.try_lock_for(self.cfg.peer_reply_timeout / 2) else {
            refuse(&mut conn, format!("Bank Server #{} is busy.", self.branch));
            return;
        };
        if let Err(m) = self.validate_receiving(from, dst, amount) {
            refuse(&mut conn, m);
            return;
        }
        let committed = {
            let _flag = TransferFlag::raise(&self.in_transfer);
            self.log(LogRecord::TransferStart { src, dst });
            self.deposit(dst, amount).expect("destination was checked under the gate");
            self.crash_at(CrashPoint::AfterDepositLog);
            self.crash_at(CrashPoint::BeforeOkSend);
            let sent = conn.send(&ControlMessage::PeerOk {
                branch: self.branch,
            });
            let confirmed = match sent {
                Ok(()) => {
                    self.crash_at(CrashPoint::AfterOkSend);
                    let _ = conn.set_timeout(Some(self.cfg.peer_reply_timeout));
                    match conn.recv() {
                        Ok(ControlMessage::PeerOk { branch }) if branch == from => true,
                        Ok(other) => {
                            log::warn!("branch {}: leader {from} sent {}", self.branch, other.keyword());
                            false
                        }
                        Err(e) => {
                            log::warn!("branch {}: no commit from leader {from}: {e}", self.branch);
                            false
                        }
                    }
                }
                Err(e) => {
                    log::warn!("branch {}: cannot send OK to {from}: {e}", self.branch);
                    false
                }
            };
            if confirmed {
                self.log(LogRecord::TransferCommit { src, dst });
            } else {
                self.withdraw(dst, amount)
                    .expect("rollback takes back what was deposited");
                self.log(LogRecord::TransferCancel { src, dst });
            }
            confirmed
        };
        if committed {
            bump(&self.counters.transfers_committed);
        } else {
            bump(&self.counters.transfers_canceled);
        }
        self.maybe_request_checkpoint();
    }

    fn checkpoint_follower(&self, mut conn: Conn) {
        let timeout = self.cfg.checkpoint_msg_timeout;
        let Some(_g) = self.gate.try_lock_for(timeout / 4) else {
            log::info!("branch {}: busy, not ready for checkpoint", self.branch);
            bump(&self.counters.checkpoint_aborts);
            return;
        };
        if let Err(e) = conn.send(&ControlMessage::ReadyForCheckpoint) {
            log::warn!("branch {}: READY_FOR_CHECKPOINT lost: {e}", self.branch);
            bump(&self.counters.checkpoint_aborts);
            return;
        }
        let _ = conn.set_timeout(Some(timeout));
        match conn.recv() {
            Ok(ControlMessage::DoCheckpoint) => {
                self.crash_at(CrashPoint::BeforeCheckpointWrite);
                let state = self.ledger.read().clone();
                let res = {
                    let mut store = self.store.lock();
                    durability::commit_checkpoint(&self.cfg.data_dir, &state, &mut store, |p| {
                        self.crash_at(p)
                    })
                };
                match res {
                    Ok(()) => {
                        *self.checkpoint_requested.lock() = None;
                        bump(&self.counters.checkpoints);
                        log::info!("branch {}: checkpoint of {} accounts", self.branch, state.len());
                        if let Err(e) = conn.send(&ControlMessage::CheckpointDone) {
                            log::warn!("branch {}: CHECKPOINT_DONE lost: {e}", self.branch);
                        }
                    }
                    Err(e) => log::error!("branch {}: checkpoint failed: {e}", self.branch),
                }
            }
            Ok(ControlMessage::CancelCheckpoint) => {
                *self.checkpoint_requested.lock() = None;
                bump(&self.counters.checkpoint_cancels);
                log::info!("branch {}: checkpoint canceled", self.branch);
            }
            other => {
                *self.checkpoint_requested.lock() = None;
                bump(&self.counters.checkpoint_aborts);
                log::warn!("branch {}: checkpoint session ended: {other:?}", self.branch);
            }
        }
    }

    fn heartbeat_loop(&self, stop: mpsc::Receiver<()>) {
        let interval = self.cfg.heartbeat_interval;
        let timeout = interval.min(Duration::from_secs(2));
        let send = |msg: &ControlMessage| {
            net::resolve(&self.cfg.monitor_host, self.cfg.monitor_port)
                .and_then(|a| net::send_oneway(a, msg, timeout))
        };
        let stopped = || !matches!(stop.recv_timeout(interval), Err(mpsc::RecvTimeoutError::Timeout));
        let register = ControlMessage::Register {
            host: self.cfg.advertise_host.clone(),
            branch: self.branch,
        };
        loop {
            match send(&register) {
                Ok(()) => break,
                Err(e) => log::warn!("branch {}: cannot register with monitor: {e}", self.branch),
            }
            if stopped() {
                return;
            }
        }
        let beat = ControlMessage::Heartbeat {
            branch: self.branch,
        };
        while !stopped() {
            if let Err(e) = send(&beat) {
                log::warn!("branch {}: heartbeat lost: {e}", self.branch);
            }
        }
    }
}
