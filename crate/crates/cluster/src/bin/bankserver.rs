//! A bank branch server.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ftbank::config::ServerOptions;
use ftbank::Server;

#[derive(Parser)]
#[command(version, about = "Bank branch server with logging and checkpoint recovery")]
struct Cli {
    /// TOML file with defaults; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: ServerOptions,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let opts = match &cli.config {
        Some(path) => match ServerOptions::from_file(path) {
            Ok(file) => cli.opts.or(file),
            Err(e) => {
                eprintln!("bankserver: {e}");
                return ExitCode::from(2);
            }
        },
        None => cli.opts,
    };
    let cfg = match opts.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("bankserver: {e}");
            return ExitCode::from(2);
        }
    };
    match Server::boot(cfg) {
        Ok(server) => {
            server.run();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bankserver: {e}");
            ExitCode::FAILURE
        }
    }
}
