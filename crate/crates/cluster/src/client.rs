//! Client side of the account protocol.

use std::io;
use std::net::SocketAddr;
use std::time::Duration;

use ftbank_core::wire::{ClientReply, ClientRequest};
use ftbank_core::{AccountId, Amount, ControlMessage};

use crate::net::{Conn, NetError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(15);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach {addr}: {source}")]
    Unreachable {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("no reply from {addr}: {source}")]
    NoReply {
        addr: SocketAddr,
        #[source]
        source: NetError,
    },
    #[error("unexpected reply from {addr}: {reply}")]
    Malformed { addr: SocketAddr, reply: String },
    #[error("Bank Server error: {0}")]
    Rejected(String),
}

/// Sends one request and returns the server's answer.
pub fn call(addr: SocketAddr, req: ClientRequest, timeout: Duration) -> Result<ClientReply, ClientError> {
    let mut conn = Conn::connect(addr, timeout).map_err(|source| ClientError::Unreachable { addr, source })?;
    conn.send(&ControlMessage::Request(req))
        .map_err(|source| ClientError::Unreachable { addr, source })?;
    match conn.recv() {
        Ok(ControlMessage::Reply(r)) => Ok(r),
        Ok(other) => Err(ClientError::Malformed {
            addr,
            reply: other.to_frame().trim_end().to_owned(),
        }),
        Err(NetError::Malformed { frame, .. }) => Err(ClientError::Malformed { addr, reply: frame }),
        Err(source) => Err(ClientError::NoReply { addr, source }),
    }
}

/// Like [`call`], with `ERR` turned into [`ClientError::Rejected`].
pub fn call_ok(addr: SocketAddr, req: ClientRequest, timeout: Duration) -> Result<String, ClientError> {
    match call(addr, req, timeout)? {
        ClientReply::Ok(p) => Ok(p),
        ClientReply::Err(m) => Err(ClientError::Rejected(m)),
    }
}

/// Every account of a branch with its balance, in the server's order.
pub fn balances(addr: SocketAddr, timeout: Duration) -> Result<Vec<(AccountId, Amount)>, ClientError> {
    let list = call_ok(addr, ClientRequest::Accounts, timeout)?;
    let mut out = Vec::new();
    for tok in list.split_whitespace() {
        let account: AccountId = tok.parse().map_err(|_| ClientError::Malformed {
            addr,
            reply: list.clone(),
        })?;
        let text = call_ok(addr, ClientRequest::Balance { account }, timeout)?;
        let amount: Amount = text
            .parse()
            .map_err(|_| ClientError::Malformed { addr, reply: text })?;
        out.push((account, amount));
    }
    Ok(out)
}

/// Sum of all balances over the given branches, in cents.
pub fn global_sum(addrs: &[SocketAddr], timeout: Duration) -> Result<u128, ClientError> {
    let mut sum = 0u128;
    for &a in addrs {
        for (_, amount) in balances(a, timeout)? {
            sum += u128::from(amount.cents());
        }
    }
    Ok(sum)
}
