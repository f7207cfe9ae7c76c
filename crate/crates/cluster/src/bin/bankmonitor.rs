//! The heartbeat monitor.

use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use ftbank::monitor::{self, MonitorConfig};

#[derive(Parser)]
#[command(version, about = "Heartbeat monitor for the bank cluster")]
struct Cli {
    #[arg(long, default_value = "0.0.0.0")]
    listen_host: String,
    #[arg(long, default_value_t = 3100)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    rm_host: String,
    #[arg(long, default_value_t = 3000)]
    rm_port: u16,
    /// Silence after which a branch is reported.
    #[arg(long, default_value = "30s", value_parser = humantime::parse_duration)]
    timeout: Duration,
    /// How often to look for silent branches (default: a third of the timeout).
    #[arg(long, value_parser = humantime::parse_duration)]
    check_period: Option<Duration>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = MonitorConfig {
        listen_host: cli.listen_host,
        port: cli.port,
        rm_host: cli.rm_host,
        rm_port: cli.rm_port,
        timeout: cli.timeout,
        check_period: cli.check_period,
    };
    match monitor::spawn(cfg) {
        Ok(handle) => {
            handle.run();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bankmonitor: {e}");
            ExitCode::FAILURE
        }
    }
}
