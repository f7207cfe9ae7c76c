//! Newline-framed exchanges over TCP.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use ftbank_core::wire::{parse_control, ParseError};
use ftbank_core::ControlMessage;

/// Longest frame accepted from a peer, newline included.
pub const MAX_FRAME: u64 = 64 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("connection closed before a reply")]
    Closed,
    #[error("unexpected {0} frame")]
    Unexpected(&'static str),
    #[error("frame is not UTF-8")]
    NotUtf8,
    #[error("malformed frame {frame:?}: {source}")]
    Malformed {
        frame: String,
        #[source]
        source: ParseError,
    },
}

impl NetError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, NetError::Io(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
    }
}

pub fn resolve(host: &str, port: u16) -> io::Result<SocketAddr> {
    (host, port)
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("cannot resolve {host}")))
}

/// One framed connection.
pub struct Conn {
    reader: BufReader<TcpStream>,
}

impl Conn {
    pub fn new(stream: TcpStream) -> Conn {
        let _ = stream.set_nodelay(true);
        Conn {
            reader: BufReader::new(stream),
        }
    }

    pub fn connect(addr: SocketAddr, timeout: Duration) -> io::Result<Conn> {
        let s = TcpStream::connect_timeout(&addr, timeout)?;
        s.set_write_timeout(Some(timeout))?;
        s.set_read_timeout(Some(timeout))?;
        Ok(Conn::new(s))
    }

    pub fn stream(&self) -> &TcpStream {
        self.reader.get_ref()
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.stream().set_read_timeout(timeout)
    }

    pub fn send(&mut self, msg: &ControlMessage) -> io::Result<()> {
        let s = self.reader.get_mut();
        s.write_all(msg.to_frame().as_bytes())?;
        s.flush()
    }

    /// Next raw line without its terminator, or `None` at end of stream.
    pub fn read_line(&mut self) -> Result<Option<String>, NetError> {
        let mut buf = Vec::new();
        let n = (&mut self.reader).take(MAX_FRAME).read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(None);
        }
        if buf.last() != Some(&b'\n') {
            return Err(NetError::Closed);
        }
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        String::from_utf8(buf).map(Some).map_err(|_| NetError::NotUtf8)
    }

    /// Next frame; end of stream is [`NetError::Closed`].
    pub fn recv(&mut self) -> Result<ControlMessage, NetError> {
        let line = self.read_line()?.ok_or(NetError::Closed)?;
        parse_control(&line).map_err(|source| NetError::Malformed {
            frame: line,
            source,
        })
    }
}

/// Connects, sends one frame and hangs up.
pub fn send_oneway(addr: SocketAddr, msg: &ControlMessage, timeout: Duration) -> io::Result<()> {
    let mut c = Conn::connect(addr, timeout)?;
    c.send(msg)?;
    let _ = c.stream().shutdown(std::net::Shutdown::Write);
    Ok(())
}

/// Connects, sends one frame and waits for one reply.
pub fn request(
    addr: SocketAddr,
    msg: &ControlMessage,
    timeout: Duration,
) -> Result<ControlMessage, NetError> {
    let mut c = Conn::connect(addr, timeout)?;
    c.send(msg)?;
    c.recv()
}

/// Wakes a thread blocked in `accept` on `listener` so it can notice a
/// shutdown flag.
pub fn poke(listener: &TcpListener) {
    if let Ok(mut addr) = listener.local_addr() {
        if addr.ip().is_unspecified() {
            addr.set_ip([127, 0, 0, 1].into());
        }
        let _ = TcpStream::connect_timeout(&addr, Duration::from_millis(200));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn request_reply_over_loopback() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        let t = thread::spawn(move || {
            let (s, _) = l.accept().unwrap();
            let mut c = Conn::new(s);
            let m = c.recv().unwrap();
            assert_eq!(m, ControlMessage::DoCheckpoint);
            c.send(&ControlMessage::CheckpointDone).unwrap();
        });
        let reply = request(addr, &ControlMessage::DoCheckpoint, Duration::from_secs(2)).unwrap();
        assert_eq!(reply, ControlMessage::CheckpointDone);
        t.join().unwrap();
    }

    #[test]
    fn silent_peer_times_out() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        let err = request(addr, &ControlMessage::DoCheckpoint, Duration::from_millis(100))
            .unwrap_err();
        assert!(err.is_timeout(), "{err}");
        drop(l);
    }

    #[test]
    fn hangup_is_closed() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        let t = thread::spawn(move || drop(l.accept().unwrap()));
        let err = request(addr, &ControlMessage::DoCheckpoint, Duration::from_secs(2)).unwrap_err();
        assert!(matches!(err, NetError::Closed | NetError::Io(_)), "{err}");
        t.join().unwrap();
    }
}
