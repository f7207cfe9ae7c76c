//! Scenario harness: starts a recovery module and a monitor in-process,
//! branch servers as child processes, then drives clients, crashes and
//! restarts, and checks files, balances and coordinator behaviour.

pub mod script;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use ftbank_core::replay::check_careful_logging;
use ftbank_core::wire::{parse_log_text, ClientReply, ClientRequest};
use ftbank_core::{BranchId, CrashPoint};
use parking_lot::Mutex;
use serde::Serialize;

use crate::client::{self, ClientError};
use crate::durability;
use crate::monitor::{self, MonitorConfig, MonitorHandle};
use crate::rm::{self, Restarter, RmConfig, RmHandle};

pub use script::{parse_scenario, Scenario, ScriptError};
use script::{Assertion, Expect, FileKind, SessionRef, Setting, StepKind, Wait};

/// Timing used for launched components. The defaults are scaled down so a
/// scenario runs in seconds.
#[derive(Clone, Debug)]
pub struct Timings {
    pub heartbeat: Duration,
    pub monitor_timeout: Duration,
    pub peer_timeout: Duration,
    pub checkpoint_timeout: Duration,
    pub session_timeout: Duration,
    pub threshold: usize,
}

impl Default for Timings {
    fn default() -> Self {
        Timings {
            heartbeat: Duration::from_millis(100),
            monitor_timeout: Duration::from_millis(350),
            peer_timeout: Duration::from_millis(500),
            checkpoint_timeout: Duration::from_secs(1),
            session_timeout: Duration::from_millis(500),
            threshold: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabOptions {
    pub server_bin: PathBuf,
    /// Keep files here instead of a temporary directory.
    pub data_dir: Option<PathBuf>,
    /// Upper bound for `wait` conditions and server start-up.
    pub wait_limit: Duration,
}

impl LabOptions {
    pub fn new(server_bin: impl Into<PathBuf>) -> LabOptions {
        LabOptions {
            server_bin: server_bin.into(),
            data_dir: None,
            wait_limit: Duration::from_secs(10),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    /// An assertion or expectation did not hold.
    Fail,
    /// The environment got in the way (port in use, spawn failure...).
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: String,
    pub verdict: Verdict,
    /// 1-based index of the failing step.
    pub step: Option<usize>,
    pub line: Option<usize>,
    pub message: Option<String>,
    pub steps_run: usize,
    pub elapsed_ms: u64,
    /// Where the files were left, when they were kept.
    pub data_dir: Option<PathBuf>,
}

enum StepError {
    Fail(String),
    Env(String),
}

fn fail<T>(msg: impl Into<String>) -> Result<T, StepError> {
    Err(StepError::Fail(msg.into()))
}

fn env_err(e: impl std::fmt::Display) -> StepError {
    StepError::Env(e.to_string())
}

fn free_port() -> io::Result<u16> {
    Ok(TcpListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

fn addr(b: BranchId) -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], b.port()))
}

/// Launches branch servers; shared with the recovery module's restarter.
struct Spawner {
    bin: PathBuf,
    dir: PathBuf,
    rm_port: u16,
    monitor_port: u16,
    timings: Mutex<Timings>,
    thresholds: Mutex<BTreeMap<BranchId, usize>>,
    procs: Mutex<BTreeMap<BranchId, Child>>,
}

impl Spawner {
    fn start(&self, b: BranchId, crash: Option<CrashPoint>) -> io::Result<()> {
        let t = self.timings.lock().clone();
        let threshold = self.thresholds.lock().get(&b).copied().unwrap_or(t.threshold);
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(format!("server_{b}.out")))?;
        let fmt = |d: Duration| humantime::format_duration(d).to_string();
        let mut cmd = Command::new(&self.bin);
        cmd.arg("--branch")
            .arg(b.to_string())
            .arg("--data-dir")
            .arg(&self.dir)
            .args(["--listen-host", "127.0.0.1", "--peer-host", "127.0.0.1"])
            .args(["--rm-host", "127.0.0.1", "--monitor-host", "127.0.0.1"])
            .args(["--rm-port", &self.rm_port.to_string()])
            .args(["--monitor-port", &self.monitor_port.to_string()])
            .args(["--heartbeat-interval", &fmt(t.heartbeat)])
            .args(["--peer-reply-timeout", &fmt(t.peer_timeout)])
            .args(["--checkpoint-msg-timeout", &fmt(t.checkpoint_timeout)])
            .args(["--checkpoint-threshold", &threshold.to_string()])
            .env_remove("BANK_CRASH_POINT")
            .env_remove("BANK_BRANCH")
            .env_remove("BANK_DATA_DIR")
            .stdin(Stdio::null())
            .stdout(out.try_clone()?)
            .stderr(out);
        if std::env::var_os("RUST_LOG").is_none() {
            cmd.env("RUST_LOG", "info");
        }
        if let Some(p) = crash {
            cmd.args(["--crash-point", p.name()]);
        }
        let child = cmd.spawn()?;
        log::info!("faultlab: started branch {b} (pid {})", child.id());
        if let Some(mut old) = self.procs.lock().insert(b, child) {
            let _ = old.kill();
            let _ = old.wait();
        }
        Ok(())
    }

    /// `Some(status)` once the branch's current process has ended.
    fn exited(&self, b: BranchId) -> Option<bool> {
        let mut procs = self.procs.lock();
        let child = procs.get_mut(&b)?;
        Some(matches!(child.try_wait(), Ok(Some(_))))
    }

    fn signal(&self, b: BranchId, sig: libc::c_int) -> io::Result<()> {
        let procs = self.procs.lock();
        let child = procs
            .get(&b)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("branch {b} never started")))?;
        // SAFETY: kill(2) with a pid we spawned and a valid signal number.
        if unsafe { libc::kill(child.id() as libc::pid_t, sig) } != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(())
    }

    fn kill(&self, b: BranchId) -> io::Result<()> {
        let mut procs = self.procs.lock();
        let child = procs
            .get_mut(&b)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("branch {b} never started")))?;
        let _ = child.kill();
        child.wait().map(|_| ())
    }

    fn kill_all(&self) {
        for (_, mut c) in std::mem::take(&mut *self.procs.lock()) {
            // A paused process has to be resumed to die promptly.
            // SAFETY: as in `signal`.
            unsafe { libc::kill(c.id() as libc::pid_t, libc::SIGCONT) };
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

struct LabRestarter(Arc<Spawner>);

impl Restarter for LabRestarter {
    fn restart(&mut self, branch: BranchId) -> Result<(), String> {
        self.0.start(branch, None).map_err(|e| e.to_string())
    }
}

struct Lab {
    opts: LabOptions,
    spawner: Arc<Spawner>,
    rm: Option<RmHandle>,
    monitor: Option<MonitorHandle>,
    crash: BTreeMap<BranchId, CrashPoint>,
    started: BTreeSet<BranchId>,
}

impl Drop for Lab {
    fn drop(&mut self) {
        self.spawner.kill_all();
    }
}

impl Lab {
    fn client_timeout(&self) -> Duration {
        let t = self.spawner.timings.lock();
        t.peer_timeout * 4 + t.checkpoint_timeout + Duration::from_secs(2)
    }

    fn rm(&self) -> Result<&RmHandle, StepError> {
        self.rm.as_ref().ok_or_else(|| StepError::Env("the recovery module was not started".into()))
    }

    fn monitor(&self) -> Result<&MonitorHandle, StepError> {
        self.monitor.as_ref().ok_or_else(|| StepError::Env("the monitor was not started".into()))
    }

    fn wait_until(&self, what: &str, mut cond: impl FnMut() -> Result<bool, StepError>) -> Result<(), StepError> {
        let deadline = Instant::now() + self.opts.wait_limit;
        loop {
            if cond()? {
                return Ok(());
            }
            if Instant::now() >= deadline {
                return fail(format!("timed out waiting for {what}"));
            }
            thread::sleep(Duration::from_millis(20));
        }
    }

    fn is_up(&self, b: BranchId) -> bool {
        client::call(addr(b), ClientRequest::Accounts, Duration::from_millis(500))
            .is_ok_and(|r| matches!(r, ClientReply::Ok(_)))
    }

    fn path(&self, kind: FileKind, b: BranchId) -> PathBuf {
        match kind {
            FileKind::Log => durability::log_path(&self.spawner.dir, b),
            FileKind::Checkpoint => durability::checkpoint_path(&self.spawner.dir, b),
        }
    }

    fn step(&mut self, kind: &StepKind) -> Result<(), StepError> {
        match kind {
            StepKind::Set(setting, d, n) => {
                let mut t = self.spawner.timings.lock();
                match setting {
                    Setting::Heartbeat => t.heartbeat = *d,
                    Setting::MonitorTimeout => t.monitor_timeout = *d,
                    Setting::PeerTimeout => t.peer_timeout = *d,
                    Setting::CheckpointTimeout => t.checkpoint_timeout = *d,
                    Setting::SessionTimeout => t.session_timeout = *d,
                    Setting::Threshold => t.threshold = *n,
                }
            }
            StepKind::StartRm => {
                let t = self.spawner.timings.lock().clone();
                let cfg = RmConfig {
                    listen_host: "127.0.0.1".into(),
                    port: self.spawner.rm_port,
                    peer_host: "127.0.0.1".into(),
                    session_timeout: t.session_timeout,
                    done_timeout: t.checkpoint_timeout * 2,
                    restart_grace: Duration::from_secs(5),
                    event_log: Some(self.spawner.dir.join("rm_events.jsonl")),
                    ..RmConfig::default()
                };
                let restarter = Box::new(LabRestarter(self.spawner.clone()));
                self.rm = Some(rm::spawn(cfg, restarter).map_err(env_err)?);
            }
            StepKind::StartMonitor => {
                let t = self.spawner.timings.lock().clone();
                let cfg = MonitorConfig {
                    listen_host: "127.0.0.1".into(),
                    port: self.spawner.monitor_port,
                    rm_host: "127.0.0.1".into(),
                    rm_port: self.spawner.rm_port,
                    timeout: t.monitor_timeout,
                    check_period: None,
                };
                self.monitor = Some(monitor::spawn(cfg).map_err(env_err)?);
            }
            StepKind::StartServer { branch, threshold } => {
                if let Some(n) = threshold {
                    self.spawner.thresholds.lock().insert(*branch, *n);
                }
                let crash = self.crash.remove(branch);
                self.spawner.start(*branch, crash).map_err(env_err)?;
                self.started.insert(*branch);
                let b = *branch;
                self.wait_until(&format!("branch {b} to come up"), || {
                    if self.spawner.exited(b) == Some(true) {
                        return Err(StepError::Env(format!("branch {b} exited during start-up")));
                    }
                    Ok(self.is_up(b))
                })
                .map_err(|e| match e {
                    StepError::Fail(m) => StepError::Env(m),
                    e => e,
                })?;
            }
            StepKind::Kill(b) => self.spawner.kill(*b).map_err(env_err)?,
            StepKind::Pause(b) => self.spawner.signal(*b, libc::SIGSTOP).map_err(env_err)?,
            StepKind::Resume(b) => self.spawner.signal(*b, libc::SIGCONT).map_err(env_err)?,
            StepKind::CrashPoint(b, p) => {
                self.crash.insert(*b, *p);
            }
            StepKind::Write(kind, b, text) => fs::write(self.path(*kind, *b), text).map_err(env_err)?,
            StepKind::Client {
                branch,
                request,
                expect,
            } => self.client(*branch, request, expect)?,
            StepKind::Wait(w) => self.wait(w)?,
            StepKind::Assert(a) => self.assert(a)?,
        }
        Ok(())
    }

    fn client(&self, b: BranchId, req: &ClientRequest, expect: &Expect) -> Result<(), StepError> {
        let got = client::call(addr(b), req.clone(), self.client_timeout());
        let ok = match (&got, expect) {
            (_, Expect::Any) => true,
            (Ok(ClientReply::Ok(_)), Expect::Ok(None)) => true,
            (Ok(ClientReply::Ok(p)), Expect::Ok(Some(want))) => p == want,
            (Ok(ClientReply::Err(_)), Expect::Err(None)) => true,
            (Ok(ClientReply::Err(m)), Expect::Err(Some(want))) => m == want,
            (Err(ClientError::Unreachable { .. } | ClientError::NoReply { .. }), Expect::NoReply) => true,
            _ => false,
        };
        if ok {
            return Ok(());
        }
        let got = match got {
            Ok(ClientReply::Ok(p)) => format!("OK {p}"),
            Ok(ClientReply::Err(m)) => format!("ERR {m}"),
            Err(e) => format!("no reply ({e})"),
        };
        fail(format!("expected {expect:?}, got {got}"))
    }

    fn wait(&self, w: &Wait) -> Result<(), StepError> {
        match w {
            Wait::For(d) => {
                thread::sleep(*d);
                Ok(())
            }
            Wait::Exit(b) => self.wait_until(&format!("branch {b} to exit"), || {
                self.spawner
                    .exited(*b)
                    .ok_or_else(|| StepError::Env(format!("branch {b} never started")))
            }),
            Wait::Up(b) => self.wait_until(&format!("branch {b} to answer"), || Ok(self.is_up(*b))),
            Wait::Restart(b) => {
                let rm = self.rm()?;
                self.wait_until(&format!("a restart of branch {b}"), || {
                    Ok(rm
                        .restarts()
                        .iter()
                        .any(|r| r.branch == b.get() && r.result == "launched"))
                })
            }
            Wait::Registered(b, n) => {
                let m = self.monitor()?;
                self.wait_until(&format!("{n} registrations of branch {b}"), || {
                    Ok(m.registrations().iter().filter(|r| r.branch == *b).count() >= *n)
                })
            }
            Wait::Sessions(n) => {
                let rm = self.rm()?;
                self.wait_until(&format!("{n} checkpoint sessions"), || Ok(rm.sessions().len() >= *n))
            }
        }
    }

    fn assert(&self, a: &Assertion) -> Result<(), StepError> {
        let timeout = self.client_timeout();
        match a {
            Assertion::Balance(account, want) => {
                let b = account
                    .branch()
                    .ok_or_else(|| StepError::Fail(format!("account {account} has no branch")))?;
                let got = client::call_ok(addr(b), ClientRequest::Balance { account: *account }, timeout)
                    .map_err(|e| StepError::Fail(e.to_string()))?;
                if got != want.to_string() {
                    return fail(format!("balance of {account} is {got}, expected {want}"));
                }
            }
            Assertion::Sum(want) => {
                let addrs: Vec<_> = self.started.iter().map(|b| addr(*b)).collect();
                let got = client::global_sum(&addrs, timeout).map_err(|e| StepError::Fail(e.to_string()))?;
                if got != u128::from(want.cents()) {
                    return fail(format!("global sum is {got} cents, expected {}", want.cents()));
                }
            }
            Assertion::File(kind, b, want) => {
                let path = self.path(*kind, *b);
                let got = match fs::read_to_string(&path) {
                    Ok(t) => Some(t),
                    Err(e) if e.kind() == io::ErrorKind::NotFound => None,
                    Err(e) => return Err(env_err(e)),
                };
                if got != *want {
                    return fail(format!(
                        "{} is {}, expected {}",
                        path.display(),
                        got.map_or("absent".into(), |t| format!("{t:?}")),
                        want.as_ref().map_or("absent".into(), |t| format!("{t:?}")),
                    ));
                }
            }
            Assertion::Shape(b) => {
                let text = fs::read_to_string(self.path(FileKind::Log, *b)).unwrap_or_default();
                let records = parse_log_text(*b, &text).map_err(|e| StepError::Fail(e.to_string()))?;
                if let Err(v) = check_careful_logging(&records) {
                    return fail(format!("log of branch {b}: {v}"));
                }
            }
            Assertion::Recovered(b) => {
                let live = client::balances(addr(*b), timeout).map_err(|e| StepError::Fail(e.to_string()))?;
                let recovered = recover_copy(&self.spawner.dir, *b).map_err(env_err)?;
                let mut live: Vec<_> = live;
                live.sort();
                let mut files: Vec<_> = recovered.iter().collect();
                files.sort();
                if live != files {
                    return fail(format!("live state {live:?} differs from recovered {files:?}"));
                }
            }
            Assertion::Frames(kw, n) => {
                let got = self.rm()?.frames().iter().filter(|f| f.keyword == *kw).count();
                if got != *n {
                    return fail(format!("{got} {kw} frames at the recovery module, expected {n}"));
                }
            }
            Assertion::Restarts(b, n) => {
                let frame = format!("RESTART {b}");
                let got = self.rm()?.frames().iter().filter(|f| f.frame == frame).count();
                if got != *n {
                    return fail(format!("{got} restarts of branch {b} requested, expected {n}"));
                }
            }
            Assertion::Sessions(n) => {
                let got = self.rm()?.sessions().len();
                if got != *n {
                    return fail(format!("{got} checkpoint sessions, expected {n}"));
                }
            }
            Assertion::Session(which, outcome) => {
                let sessions = self.rm()?.sessions();
                let s = match which {
                    SessionRef::Last => sessions.last(),
                    SessionRef::Nth(i) => i.checked_sub(1).and_then(|i| sessions.get(i)),
                };
                match s {
                    Some(s) if s.outcome == *outcome => {}
                    Some(s) => return fail(format!("session {which:?} was {}, expected {outcome}", s.outcome)),
                    None => return fail(format!("no session {which:?}")),
                }
            }
            Assertion::Exited(b) => {
                if self.spawner.exited(*b) != Some(true) {
                    return fail(format!("branch {b} is still running"));
                }
            }
        }
        Ok(())
    }
}

/// Recovers a branch from copies of its files, leaving the originals alone.
fn recover_copy(dir: &Path, b: BranchId) -> Result<ftbank_core::BranchState, Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let names = [
        durability::checkpoint_path(Path::new(""), b),
        durability::log_path(Path::new(""), b),
    ];
    for name in names {
        let from = dir.join(&name);
        for suffix in ["", ".pending", ".tmp"] {
            let mut f = from.clone().into_os_string();
            f.push(suffix);
            let mut t = tmp.path().join(&name).into_os_string();
            t.push(suffix);
            if Path::new(&f).exists() {
                fs::copy(&f, &t)?;
            }
        }
    }
    Ok(durability::recover(tmp.path(), b)?.state)
}

/// Runs every step of `scenario` in order and reports the first failure.
pub fn run_scenario(scenario: &Scenario, opts: &LabOptions) -> Report {
    let start = Instant::now();
    let mut report = Report {
        scenario: scenario.name.clone(),
        verdict: Verdict::Pass,
        step: None,
        line: None,
        message: None,
        steps_run: 0,
        elapsed_ms: 0,
        data_dir: None,
    };
    let setup = || -> io::Result<(Option<tempfile::TempDir>, PathBuf, u16, u16)> {
        let (tmp, dir) = match &opts.data_dir {
            Some(d) => {
                fs::create_dir_all(d)?;
                (None, d.clone())
            }
            None => {
                let t = tempfile::Builder::new().prefix("faultlab-").tempdir()?;
                let p = t.path().to_owned();
                (Some(t), p)
            }
        };
        Ok((tmp, dir, free_port()?, free_port()?))
    };
    let (tmp, dir, rm_port, monitor_port) = match setup() {
        Ok(x) => x,
        Err(e) => {
            report.verdict = Verdict::Error;
            report.message = Some(format!("cannot prepare the lab: {e}"));
            return report;
        }
    };
    let mut lab = Lab {
        opts: opts.clone(),
        spawner: Arc::new(Spawner {
            bin: opts.server_bin.clone(),
            dir: dir.clone(),
            rm_port,
            monitor_port,
            timings: Mutex::new(Timings::default()),
            thresholds: Mutex::new(BTreeMap::new()),
            procs: Mutex::new(BTreeMap::new()),
        }),
        rm: None,
        monitor: None,
        crash: BTreeMap::new(),
        started: BTreeSet::new(),
    };
    for (i, step) in scenario.steps.iter().enumerate() {
        log::debug!("faultlab: line {}: {:?}", step.line, step.kind);
        match lab.step(&step.kind) {
            Ok(()) => report.steps_run += 1,
            Err(e) => {
                let (verdict, msg) = match e {
                    StepError::Fail(m) => (Verdict::Fail, m),
                    StepError::Env(m) => (Verdict::Error, m),
                };
                report.verdict = verdict;
                report.step = Some(i + 1);
                report.line = Some(step.line);
                report.message = Some(msg);
                break;
            }
        }
    }
    drop(lab);
    if report.verdict != Verdict::Pass {
        // Keep the evidence.
        report.data_dir = Some(match tmp {
            Some(t) => t.keep(),
            None => dir,
        });
    } else if opts.data_dir.is_some() {
        report.data_dir = Some(dir);
    }
    report.elapsed_ms = start.elapsed().as_millis() as u64;
    report
}
