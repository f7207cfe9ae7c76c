//! Branch server configuration: defaults, TOML file, command line.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use ftbank_core::{BranchId, CrashPoint};
use serde::Deserialize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerConfig {
    /// `None` means: claim the first free port in `port_range`.
    pub branch: Option<BranchId>,
    pub data_dir: PathBuf,
    pub listen_host: String,
    /// Address announced to the monitor in `REGISTER_MSG`.
    pub advertise_host: String,
    /// Where the other branches and the recovery module's peers are reached.
    pub peer_host: String,
    pub rm_host: String,
    pub rm_port: u16,
    /// Kept for reference; checkpoint sessions arrive on the branch port.
    pub rm_checkpoint_port: u16,
    pub monitor_host: String,
    pub monitor_port: u16,
    pub heartbeat_interval: Duration,
    pub checkpoint_threshold: usize,
    pub peer_reply_timeout: Duration,
    pub checkpoint_msg_timeout: Duration,
    pub crash_point: Option<CrashPoint>,
    pub port_range: (u16, u16),
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            branch: None,
            data_dir: PathBuf::from("."),
            listen_host: "0.0.0.0".into(),
            advertise_host: "127.0.0.1".into(),
            peer_host: "127.0.0.1".into(),
            rm_host: "127.0.0.1".into(),
            rm_port: 3000,
            rm_checkpoint_port: 3001,
            monitor_host: "127.0.0.1".into(),
            monitor_port: 3100,
            heartbeat_interval: Duration::from_secs(30),
            checkpoint_threshold: 10,
            peer_reply_timeout: Duration::from_secs(5),
            checkpoint_msg_timeout: Duration::from_secs(5),
            crash_point: None,
            port_range: (BranchId::MIN, BranchId::MAX),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every setting, all optional. Used for both the TOML file and the
/// command line; the command line wins.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerOptions {
    /// Branch number, which is also the listening port.
    #[arg(long, env = "BANK_BRANCH")]
    #[serde(deserialize_with = "branch")]
    pub branch: Option<BranchId>,
    #[arg(long, env = "BANK_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub listen_host: Option<String>,
    #[arg(long)]
    pub advertise_host: Option<String>,
    #[arg(long)]
    pub peer_host: Option<String>,
    #[arg(long)]
    pub rm_host: Option<String>,
    #[arg(long)]
    pub rm_port: Option<u16>,
    #[arg(long)]
    pub rm_checkpoint_port: Option<u16>,
    #[arg(long)]
    pub monitor_host: Option<String>,
    #[arg(long)]
    pub monitor_port: Option<u16>,
    #[arg(long, value_parser = humantime::parse_duration)]
    #[serde(deserialize_with = "duration::deserialize")]
    pub heartbeat_interval: Option<Duration>,
    #[arg(long)]
    pub checkpoint_threshold: Option<usize>,
    #[arg(long, value_parser = humantime::parse_duration)]
    #[serde(deserialize_with = "duration::deserialize")]
    pub peer_reply_timeout: Option<Duration>,
    #[arg(long, value_parser = humantime::parse_duration)]
    #[serde(deserialize_with = "duration::deserialize")]
    pub checkpoint_msg_timeout: Option<Duration>,
    /// Die on purpose when this hook is reached (fault injection).
    #[arg(long, env = "BANK_CRASH_POINT")]
    #[serde(skip)]
    pub crash_point: Option<CrashPoint>,
    #[arg(long)]
    pub port_min: Option<u16>,
    #[arg(long)]
    pub port_max: Option<u16>,
}

mod duration {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        let s = String::deserialize(d)?;
        humantime::parse_duration(&s)
            .map(Some)
            .map_err(serde::de::Error::custom)
    }
}

fn branch<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<BranchId>, D::Error> {
    let n = u16::deserialize(d)?;
    BranchId::new(n).map(Some).map_err(serde::de::Error::custom)
}

impl ServerOptions {
    pub fn from_file(path: &Path) -> Result<ServerOptions, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    /// Fills every unset field from `fallback`.
    pub fn or(self, fallback: ServerOptions) -> ServerOptions {
        ServerOptions {
            branch: self.branch.or(fallback.branch),
            data_dir: self.data_dir.or(fallback.data_dir),
            listen_host: self.listen_host.or(fallback.listen_host),
            advertise_host: self.advertise_host.or(fallback.advertise_host),
            peer_host: self.peer_host.or(fallback.peer_host),
            rm_host: self.rm_host.or(fallback.rm_host),
            rm_port: self.rm_port.or(fallback.rm_port),
            rm_checkpoint_port: self.rm_checkpoint_port.or(fallback.rm_checkpoint_port),
            monitor_host: self.monitor_host.or(fallback.monitor_host),
            monitor_port: self.monitor_port.or(fallback.monitor_port),
            heartbeat_interval: self.heartbeat_interval.or(fallback.heartbeat_interval),
            checkpoint_threshold: self.checkpoint_threshold.or(fallback.checkpoint_threshold),
            peer_reply_timeout: self.peer_reply_timeout.or(fallback.peer_reply_timeout),
            checkpoint_msg_timeout: self
                .checkpoint_msg_timeout
                .or(fallback.checkpoint_msg_timeout),
            crash_point: self.crash_point.or(fallback.crash_point),
            port_min: self.port_min.or(fallback.port_min),
            port_max: self.port_max.or(fallback.port_max),
        }
    }

    pub fn resolve(self) -> Result<ServerConfig, ConfigError> {
        let d = ServerConfig::default();
        let cfg = ServerConfig {
            branch: self.branch,
            data_dir: self.data_dir.unwrap_or(d.data_dir),
            listen_host: self.listen_host.unwrap_or(d.listen_host),
            advertise_host: self.advertise_host.unwrap_or(d.advertise_host),
            peer_host: self.peer_host.unwrap_or(d.peer_host),
            rm_host: self.rm_host.unwrap_or(d.rm_host),
            rm_port: self.rm_port.unwrap_or(d.rm_port),
            rm_checkpoint_port: self.rm_checkpoint_port.unwrap_or(d.rm_checkpoint_port),
            monitor_host: self.monitor_host.unwrap_or(d.monitor_host),
            monitor_port: self.monitor_port.unwrap_or(d.monitor_port),
            heartbeat_interval: self.heartbeat_interval.unwrap_or(d.heartbeat_interval),
            checkpoint_threshold: self.checkpoint_threshold.unwrap_or(d.checkpoint_threshold),
            peer_reply_timeout: self.peer_reply_timeout.unwrap_or(d.peer_reply_timeout),
            checkpoint_msg_timeout: self
                .checkpoint_msg_timeout
                .unwrap_or(d.checkpoint_msg_timeout),
            crash_point: self.crash_point,
            port_range: (
                self.port_min.unwrap_or(d.port_range.0),
                self.port_max.unwrap_or(d.port_range.1),
            ),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.heartbeat_interval.is_zero()
            || self.peer_reply_timeout.is_zero()
            || self.checkpoint_msg_timeout.is_zero()
        {
            return bad("intervals and timeouts must be positive");
        }
        if self.checkpoint_threshold == 0 {
            return bad("checkpoint threshold must be at least 1");
        }
        let (lo, hi) = self.port_range;
        if lo > hi || BranchId::new(lo).is_err() || BranchId::new(hi).is_err() {
            return bad("port range must lie within 1111..=2111");
        }
        Ok(())
    }
}
