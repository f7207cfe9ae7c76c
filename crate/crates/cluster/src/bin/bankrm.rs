//! The recovery module: dependency tracking, checkpoint coordination and
//! restarts.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use ftbank::rm::{self, CommandRestarter, NoRestarter, Restarter, RmConfig};

#[derive(Parser)]
#[command(version, about = "Recovery module for the bank cluster")]
struct Cli {
    #[arg(long, default_value = "0.0.0.0")]
    listen_host: String,
    #[arg(long, default_value_t = 3000)]
    port: u16,
    #[arg(long, default_value_t = 3001)]
    checkpoint_port: u16,
    /// Host where branch servers listen.
    #[arg(long, default_value = "127.0.0.1")]
    peer_host: String,
    #[arg(long, default_value = "1s", value_parser = humantime::parse_duration)]
    session_timeout: Duration,
    #[arg(long, default_value = "5s", value_parser = humantime::parse_duration)]
    done_timeout: Duration,
    #[arg(long, default_value = "10s", value_parser = humantime::parse_duration)]
    restart_grace: Duration,
    /// Shell command run on RESTART; `{branch}` is replaced by the number.
    #[arg(long)]
    restart_cmd: Option<String>,
    /// Append received frames and sessions to this JSON-lines file.
    #[arg(long)]
    event_log: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = RmConfig {
        listen_host: cli.listen_host,
        port: cli.port,
        checkpoint_port: cli.checkpoint_port,
        peer_host: cli.peer_host,
        session_timeout: cli.session_timeout,
        done_timeout: cli.done_timeout,
        restart_grace: cli.restart_grace,
        event_log: cli.event_log,
    };
    let restarter: Box<dyn Restarter> = match cli.restart_cmd {
        Some(template) => Box::new(CommandRestarter { template }),
        None => Box::new(NoRestarter),
    };
    match rm::spawn(cfg, restarter) {
        Ok(handle) => {
            handle.run();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bankrm: {e}");
            ExitCode::FAILURE
        }
    }
}
