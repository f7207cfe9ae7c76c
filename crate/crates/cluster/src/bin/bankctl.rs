//! Command-line bank client.
//!
//! Exit status: 0 on success, 1 when the server refused the request, 2 on
//! bad usage, 3 when the server could not be reached or did not answer,
//! 4 on an unintelligible reply.

use std::net::SocketAddr;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use ftbank::client::{self, ClientError, DEFAULT_TIMEOUT};
use ftbank::net;
use ftbank_core::wire::{ClientReply, ClientRequest};
use ftbank_core::{AccountId, Amount};

#[derive(Parser)]
#[command(version, about = "Talk to a bank branch server")]
struct Cli {
    /// Branch server address as HOST:PORT.
    #[arg(long, short, env = "BANK_SERVER", default_value = "127.0.0.1:1111")]
    server: String,
    #[arg(long, default_value = "15s", value_parser = humantime::parse_duration)]
    timeout: Duration,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Open a new account with a zero balance.
    Open,
    Deposit { account: AccountId, amount: Amount },
    Withdraw { account: AccountId, amount: Amount },
    Balance { account: AccountId },
    /// Move money to an account on this branch or another one.
    Transfer { from: AccountId, to: AccountId, amount: Amount },
    /// List the accounts held by the branch.
    Accounts,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let req = match cli.cmd {
        Cmd::Open => ClientRequest::Open,
        Cmd::Deposit { account, amount } => ClientRequest::Deposit { account, amount },
        Cmd::Withdraw { account, amount } => ClientRequest::Withdraw { account, amount },
        Cmd::Balance { account } => ClientRequest::Balance { account },
        Cmd::Transfer { from, to, amount } => ClientRequest::Transfer { src: from, dst: to, amount },
        Cmd::Accounts => ClientRequest::Accounts,
    };
    let addr = match resolve(&cli.server) {
        Some(a) => a,
        None => {
            eprintln!("bankctl: cannot resolve {}", cli.server);
            return ExitCode::from(2);
        }
    };
    let timeout = if cli.timeout.is_zero() { DEFAULT_TIMEOUT } else { cli.timeout };
    match client::call(addr, req, timeout) {
        Ok(ClientReply::Ok(payload)) => {
            if !payload.is_empty() {
                println!("{payload}");
            }
            ExitCode::SUCCESS
        }
        Ok(ClientReply::Err(msg)) => {
            eprintln!("{}", ClientError::Rejected(msg));
            ExitCode::from(1)
        }
        Err(e @ ClientError::Malformed { .. }) => {
            eprintln!("bankctl: {e}");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("bankctl: {e}");
            ExitCode::from(3)
        }
    }
}

fn resolve(s: &str) -> Option<SocketAddr> {
    let (host, port) = s.rsplit_once(':')?;
    net::resolve(host, port.parse().ok()?).ok()
}
