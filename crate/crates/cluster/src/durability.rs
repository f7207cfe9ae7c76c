//! Stable storage of a branch: the append-only message log, the checkpoint
//! file, and recovery from both.
//!
//! A checkpoint is committed in three renames so that a crash at any point
//! leaves either the old checkpoint with its log, or the new checkpoint
//! without one:
//!
//! 1. the state goes to `checkpoint_<b>.log.tmp`, is synced, and is renamed
//!    to `checkpoint_<b>.log.pending`;
//! 2. the message log is deleted;
//! 3. the pending file is renamed over `checkpoint_<b>.log`.
//!
//! On recovery a pending file next to a surviving log is stale and dropped;
//! a pending file without a log is promoted.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ftbank_core::replay::{replay, ReplayError, ReplaySummary};
use ftbank_core::wire::{
    encode_checkpoint_text, encode_log_line, parse_checkpoint_text, parse_log_text, LineError,
};
use ftbank_core::{BranchId, BranchState, CrashPoint, LedgerError, LogRecord};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{} is corrupt: {source}", path.display())]
    Corrupt {
        path: PathBuf,
        #[source]
        source: LineError,
    },
    #[error("{} is not valid UTF-8", path.display())]
    Encoding { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: LedgerError,
    },
    #[error("{}: replay failed at {source}", path.display())]
    Replay {
        path: PathBuf,
        #[source]
        source: ReplayError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn log_path(dir: &Path, branch: BranchId) -> PathBuf {
    dir.join(format!("msglog_{branch}.log"))
}

pub fn checkpoint_path(dir: &Path, branch: BranchId) -> PathBuf {
    dir.join(format!("checkpoint_{branch}.log"))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn pending_path(dir: &Path, branch: BranchId) -> PathBuf {
    with_suffix(&checkpoint_path(dir, branch), ".pending")
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

fn read_text(path: &Path) -> Result<Option<String>, StoreError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => f.read_to_end(&mut bytes).map_err(io_err(path))?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(path)(e)),
    };
    String::from_utf8(bytes)
        .map(Some)
        .map_err(|_| StoreError::Encoding {
            path: path.to_owned(),
        })
}

/// Append-only message log of one branch.
#[derive(Debug)]
pub struct LogStore {
    path: PathBuf,
    branch: BranchId,
    file: Option<File>,
    /// Bytes known to be durable; a failed append is cut back to this.
    len: u64,
    record_count: usize,
}

impl LogStore {
    /// Opens the log, creating nothing yet. A torn last line (no newline,
    /// left by a crash in the middle of a write) is cut off.
    pub fn open(dir: &Path, branch: BranchId) -> Result<(LogStore, Vec<LogRecord>), StoreError> {
        let path = log_path(dir, branch);
        let mut text = read_text(&path)?.unwrap_or_default();
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            log::warn!(
                "{}: dropping torn final line {:?}",
                path.display(),
                &text[keep..]
            );
            text.truncate(keep);
            let f = OpenOptions::new()
                .write(true)
                .open(&path)
                .map_err(io_err(&path))?;
            f.set_len(keep as u64).map_err(io_err(&path))?;
            f.sync_all().map_err(io_err(&path))?;
        }
        let records = parse_log_text(branch, &text).map_err(|source| StoreError::Corrupt {
            path: path.clone(),
            source,
        })?;
        let store = LogStore {
            path,
            branch,
            file: None,
            len: text.len() as u64,
            record_count: records.len(),
        };
        Ok((store, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record_count(&self) -> usize {
        self.record_count
    }

    fn file(&mut self) -> io::Result<&mut File> {
        if self.file.is_none() {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)?;
            self.len = f.metadata()?.len();
            self.file = Some(f);
        }
        Ok(self.file.as_mut().expect("opened above"))
    }

    /// Appends one record and syncs it to disk before returning the new
    /// record count.
    pub fn append(&mut self, record: &LogRecord) -> io::Result<usize> {
        let mut line = encode_log_line(self.branch, record);
        line.push('\n');
        let len = self.len;
        let f = self.file()?;
        let res = f.write_all(line.as_bytes()).and_then(|_| f.sync_data());
        if let Err(e) = res {
            // Best effort: do not leave half a line for the next append.
            let _ = f.set_len(len);
            self.file = None;
            return Err(e);
        }
        self.len += line.len() as u64;
        self.record_count += 1;
        Ok(self.record_count)
    }

    /// Removes the log file. Absent files are fine.
    pub fn delete(&mut self) -> io::Result<()> {
        self.file = None;
        match fs::remove_file(&self.path) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        self.len = 0;
        self.record_count = 0;
        Ok(())
    }
}

/// Writes `state` to `path` through a synced temporary file and a rename.
pub fn write_checkpoint(path: &Path, state: &BranchState) -> io::Result<()> {
    let tmp = with_suffix(path, ".tmp");
    stage(&tmp, state)?;
    fs::rename(&tmp, path)?;
    sync_dir(path.parent().unwrap_or(Path::new(".")))
}

fn stage(tmp: &Path, state: &BranchState) -> io::Result<()> {
    let text = encode_checkpoint_text(state.branch(), &state.checkpoint_entries());
    let mut f = File::create(tmp)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()
}

/// Loads a checkpoint file. A missing file is an empty branch.
pub fn load_checkpoint(path: &Path, branch: BranchId) -> Result<BranchState, StoreError> {
    let Some(text) = read_text(path)? else {
        return Ok(BranchState::new(branch));
    };
    let entries = parse_checkpoint_text(branch, &text).map_err(|source| StoreError::Corrupt {
        path: path.to_owned(),
        source,
    })?;
    BranchState::from_entries(branch, entries).map_err(|source| StoreError::Checkpoint {
        path: path.to_owned(),
        source,
    })
}

/// Makes `state` the branch's checkpoint and empties its log. `hook` is
/// called at the crash points inside the protocol.
pub fn commit_checkpoint(
    dir: &Path,
    state: &BranchState,
    store: &mut LogStore,
    mut hook: impl FnMut(CrashPoint),
) -> io::Result<()> {
    let branch = state.branch();
    let target = checkpoint_path(dir, branch);
    let pending = pending_path(dir, branch);
    stage(&with_suffix(&target, ".tmp"), state)?;
    fs::rename(with_suffix(&target, ".tmp"), &pending)?;
    sync_dir(dir)?;
    hook(CrashPoint::AfterCheckpointWrite);
    if let Err(e) = store.delete() {
        let _ = fs::remove_file(&pending);
        return Err(e);
    }
    sync_dir(dir)?;
    fs::rename(&pending, &target)?;
    sync_dir(dir)
}

/// Settles a checkpoint commit that was interrupted by a crash.
fn settle_pending(dir: &Path, branch: BranchId) -> Result<(), StoreError> {
    let target = checkpoint_path(dir, branch);
    let tmp = with_suffix(&target, ".tmp");
    if tmp.exists() {
        fs::remove_file(&tmp).map_err(io_err(&tmp))?;
    }
    let pending = pending_path(dir, branch);
    if !pending.exists() {
        return Ok(());
    }
    if log_path(dir, branch).exists() {
        log::warn!("{}: log survived, discarding staged checkpoint", pending.display());
        fs::remove_file(&pending).map_err(io_err(&pending))?;
    } else {
        log::warn!("{}: log already gone, promoting staged checkpoint", pending.display());
        fs::rename(&pending, &target).map_err(io_err(&pending))?;
    }
    sync_dir(dir).map_err(io_err(dir))
}

#[derive(Debug)]
pub struct Recovered {
    pub state: BranchState,
    pub store: LogStore,
    pub summary: ReplaySummary,
}

/// Rebuilds a branch from its files: last checkpoint, then the log.
pub fn recover(dir: &Path, branch: BranchId) -> Result<Recovered, StoreError> {
    settle_pending(dir, branch)?;
    let state = load_checkpoint(&checkpoint_path(dir, branch), branch)?;
    let (store, records) = LogStore::open(dir, branch)?;
    let (state, summary) = replay(state, records).map_err(|source| StoreError::Replay {
        path: store.path().to_owned(),
        source,
    })?;
    if let Some(block) = &summary.discarded {
        log::warn!(
            "branch {branch}: unfinished transfer {}-{} discarded ({} buffered records)",
            block.src,
            block.dst,
            block.buffered.len()
        );
    }
    Ok(Recovered {
        state,
        store,
        summary,
    })
}
