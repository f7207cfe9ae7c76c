//! Runs fault-injection scenarios against real server processes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ftbank::faultlab::{parse_scenario, run_scenario, LabOptions, Verdict};

#[derive(Parser)]
#[command(version, about = "Fault-injection scenario runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and print a JSON report.
    Run {
        file: PathBuf,
        /// Server binary; defaults to `bankserver` next to this program.
        #[arg(long)]
        server_bin: Option<PathBuf>,
        /// Keep all files here instead of a temporary directory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Limit for each wait and server start-up.
        #[arg(long, value_parser = humantime::parse_duration)]
        wait_limit: Option<std::time::Duration>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Cmd::Run {
        file,
        server_bin,
        data_dir,
        wait_limit,
    } = Cli::parse().cmd;
    let text = match std::fs::read_to_string(&file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("faultlab: cannot read {}: {e}", file.display());
            return ExitCode::from(2);
        }
    };
    let name = file
        .file_stem()
        .map_or_else(|| file.display().to_string(), |s| s.to_string_lossy().into_owned());
    let scenario = match parse_scenario(&name, &text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("faultlab: {}: {e}", file.display());
            return ExitCode::from(2);
        }
    };
    let server_bin = server_bin.unwrap_or_else(|| {
        std::env::current_exe()
            .ok()
            .and_then(|p| p.parent().map(|d| d.join("bankserver")))
            .unwrap_or_else(|| PathBuf::from("bankserver"))
    });
    let mut opts = LabOptions::new(server_bin);
    opts.data_dir = data_dir;
    if let Some(w) = wait_limit {
        opts.wait_limit = w;
    }
    let report = run_scenario(&scenario, &opts);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    match report.verdict {
        Verdict::Pass => ExitCode::SUCCESS,
        Verdict::Fail => ExitCode::from(1),
        Verdict::Error => ExitCode::from(2),
    }
}
