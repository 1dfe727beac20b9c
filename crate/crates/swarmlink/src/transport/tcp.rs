//! TCP frame link.
//!
//! Nagle's algorithm is disabled on both ends: the lock-step exchange
//! sends one small frame per tick and waits for the reply, the worst
//! pattern for delayed-ACK/Nagle interaction.

use super::{
    duration_from_secs, EndpointConfig, FrameReceiver, FrameSender, Link, LinkStats, Role,
    SharedStats, TransportError,
};
use crate::protocol::FrameSplitter;
use socket2::{Domain, Socket, Type};
use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

fn resolve(cfg: &EndpointConfig) -> Result<SocketAddr, TransportError> {
    let addr = &cfg.address;
    addr.to_socket_addrs()
        .map_err(|e| TransportError::InvalidConfig(format!("cannot resolve {addr}: {e}")))?
        .next()
        .ok_or_else(|| TransportError::InvalidConfig(format!("{addr} resolves to no address")))
}

fn listen(addr: SocketAddr) -> Result<std::net::TcpListener, TransportError> {
    let bind_err = |source| TransportError::BindFailed {
        addr: addr.to_string(),
        source,
    };
    let domain = Domain::for_address(addr);
    let socket = Socket::new(domain, Type::STREAM, None).map_err(bind_err)?;
    // Allows back-to-back sessions on the same port without waiting out
    // TIME_WAIT from the previous run.
    socket.set_reuse_address(true).map_err(bind_err)?;
    socket.bind(&addr.into()).map_err(bind_err)?;
    socket.listen(1).map_err(bind_err)?;
    Ok(socket.into())
}

fn accept_within(
    listener: &std::net::TcpListener,
    addr: SocketAddr,
    window: f64,
) -> Result<TcpStream, TransportError> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + duration_from_secs(window);
    loop {
        match listener.accept() {
            Ok((stream, _peer)) => {
                stream.set_nonblocking(false)?;
                return Ok(stream);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(TransportError::AcceptTimeout {
                        addr: addr.to_string(),
                        secs: window,
                    });
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn connect_within(addr: SocketAddr, window: f64) -> Result<TcpStream, TransportError> {
    let deadline = Instant::now() + duration_from_secs(window);
    let mut refused = false;
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            return Err(if refused {
                TransportError::ConnectionRefused {
                    addr: addr.to_string(),
                }
            } else {
                TransportError::ConnectTimeout {
                    addr: addr.to_string(),
                    secs: window,
                }
            });
        }
        let attempt = remaining.min(Duration::from_millis(250));
        match TcpStream::connect_timeout(&addr, attempt) {
            Ok(stream) => return Ok(stream),
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => {
                // Peer not listening yet; retry until the window closes so
                // that two processes may start in either order.
                refused = true;
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) if e.kind() == ErrorKind::TimedOut || e.kind() == ErrorKind::WouldBlock => {}
            Err(e) => return Err(e.into()),
        }
    }
}

/// Establishes one side of a TCP link per `cfg` and returns the connected
/// endpoint.
pub fn open_link(cfg: &EndpointConfig) -> Result<Link, TransportError> {
    cfg.validate()?;
    let addr = resolve(cfg)?;
    let stream = match cfg.role {
        Role::Server => {
            let listener = listen(addr)?;
            accept_within(&listener, addr, cfg.connect_timeout)?
        }
        Role::Client => connect_within(addr, cfg.connect_timeout)?,
    };
    stream.set_nodelay(true)?;
    let stats: SharedStats = Arc::new(Mutex::new(LinkStats::default()));
    let sender = TcpFrameSender {
        stream: stream.try_clone()?,
        stats: Arc::clone(&stats),
        closed: false,
    };
    let receiver = TcpFrameReceiver {
        stream,
        splitter: FrameSplitter::new(),
        stats,
        saw_eof: false,
    };
    Ok(Link {
        sender: Box::new(sender),
        receiver: Box::new(receiver),
    })
}

fn is_disconnect(kind: ErrorKind) -> bool {
    matches!(
        kind,
        ErrorKind::BrokenPipe
            | ErrorKind::ConnectionReset
            | ErrorKind::ConnectionAborted
            | ErrorKind::UnexpectedEof
            | ErrorKind::NotConnected
    )
}

struct TcpFrameSender {
    stream: TcpStream,
    stats: SharedStats,
    closed: bool,
}

impl FrameSender for TcpFrameSender {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        match self.stream.write_all(frame) {
            Ok(()) => {
                let mut s = self.stats.lock().unwrap();
                s.frames_sent += 1;
                s.bytes_sent += frame.len() as u64;
                Ok(())
            }
            Err(e) if is_disconnect(e.kind()) => Err(TransportError::Closed),
            Err(e) => Err(e.into()),
        }
    }

    fn close(&mut self) -> Result<(), TransportError> {
        if !self.closed {
            self.closed = true;
            // The peer sees EOF once it drains what we already sent.
            let _ = self.stream.shutdown(Shutdown::Write);
        }
        Ok(())
    }

    fn stats(&self) -> LinkStats {
        *self.stats.lock().unwrap()
    }
}

struct TcpFrameReceiver {
    stream: TcpStream,
    splitter: FrameSplitter,
    stats: SharedStats,
    saw_eof: bool,
}

impl TcpFrameReceiver {
    fn take_frame(&mut self) -> Option<Vec<u8>> {
        let frame = self.splitter.next_frame()?;
        let mut s = self.stats.lock().unwrap();
        s.frames_received += 1;
        s.bytes_received += frame.len() as u64;
        Some(frame)
    }
}

impl FrameReceiver for TcpFrameReceiver {
    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        if let Some(frame) = self.take_frame() {
            return Ok(frame);
        }
        if self.saw_eof {
            return Err(TransportError::Closed);
        }
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 4096];
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let read = if remaining.is_zero() {
                // Poll: take whatever the kernel already buffered.
                self.stream.set_nonblocking(true)?;
                let r = self.stream.read(&mut buf);
                self.stream.set_nonblocking(false)?;
                r
            } else {
                // set_read_timeout rejects a zero Duration, hence the poll
                // branch above.
                self.stream.set_read_timeout(Some(remaining))?;
                self.stream.read(&mut buf)
            };
            match read {
                Ok(0) => {
                    self.saw_eof = true;
                    // A partial line before EOF can never complete; only
                    // whole frames count.
                    return Err(TransportError::Closed);
                }
                Ok(n) => {
                    self.splitter.push(&buf[..n]);
                    if let Some(frame) = self.take_frame() {
                        return Ok(frame);
                    }
                }
                Err(e)
                    if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut =>
                {
                    return Err(TransportError::TimedOut(timeout));
                }
                Err(e) if is_disconnect(e.kind()) => {
                    self.saw_eof = true;
                    return Err(TransportError::Closed);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn stats(&self) -> LinkStats {
        *self.stats.lock().unwrap()
    }
}
