//! Frame transports: TCP links between processes and an in-process channel
//! with configurable network impairment.
//!
//! Both transports move opaque newline-terminated frames; neither inspects
//! frame contents. Frame boundaries are preserved: one `send_frame` call
//! surfaces as exactly one `recv_frame` result (or, on a lossy impaired
//! channel, as nothing at all).

mod impaired;
mod tcp;

pub use impaired::impaired_channel;
pub use tcp::open_link;

use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// Bounded per-direction frame buffer of the in-process channel. A sender
/// that outruns its receiver by this many frames blocks (backpressure)
/// rather than dropping frames.
pub const DEFAULT_FRAME_BUFFER: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Binds and waits for the peer to connect.
    Server,
    /// Connects to the peer's listen address.
    Client,
}

/// TCP endpoint description for one side of a link.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub role: Role,
    /// `host:port`: the listen address for servers, the peer address for
    /// clients.
    pub address: String,
    /// Window for the connection to come up: accept deadline for servers,
    /// total connect-retry budget for clients (seconds).
    pub connect_timeout: f64,
    /// Default bound on one receive wait (seconds). Callers pass an
    /// explicit timeout to every `recv_frame`; session runners derive it
    /// from this value.
    pub read_timeout: f64,
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        let mut issues = Vec::new();
        match self.address.rsplit_once(':') {
            None => issues.push(format!(
                "address must be host:port, got {:?}",
                self.address
            )),
            Some((host, port)) => {
                if host.is_empty() {
                    issues.push("address host must not be empty".to_string());
                }
                match port.parse::<u16>() {
                    Ok(0) | Err(_) => {
                        issues.push(format!("port must be in 1..=65535, got {port:?}"))
                    }
                    Ok(_) => {}
                }
            }
        }
        for (name, v) in [
            ("connect_timeout", self.connect_timeout),
            ("read_timeout", self.read_timeout),
        ] {
            if !(v.is_finite() && v > 0.0) {
                issues.push(format!("{name} must be > 0 s, got {v}"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(TransportError::InvalidConfig(issues.join("; ")))
        }
    }
}

/// Synthetic network impairment applied per direction of the in-process
/// channel. The default is fully transparent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpairmentConfig {
    /// Base one-way latency (seconds).
    pub fixed_delay: f64,
    /// Additional uniform random latency in [0, jitter) seconds.
    pub jitter: f64,
    /// Probability that a frame is silently discarded, in [0, 1).
    pub drop_prob: f64,
    /// Seed of the per-direction impairment randomness. Equal seeds give
    /// identical drop decisions and jitter draws run after run.
    pub seed: u64,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        ImpairmentConfig {
            fixed_delay: 0.0,
            jitter: 0.0,
            drop_prob: 0.0,
            seed: 0,
        }
    }
}

impl ImpairmentConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        let mut issues = Vec::new();
        if !(self.fixed_delay.is_finite() && self.fixed_delay >= 0.0) {
            issues.push(format!("fixed_delay must be >= 0, got {}", self.fixed_delay));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            issues.push(format!("jitter must be >= 0, got {}", self.jitter));
        }
        if !(self.drop_prob.is_finite() && (0.0..1.0).contains(&self.drop_prob)) {
            issues.push(format!(
                "drop_prob must be in [0, 1), got {}",
                self.drop_prob
            ));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(TransportError::InvalidConfig(issues.join("; ")))
        }
    }

    /// True when the channel neither delays nor drops.
    pub fn is_transparent(&self) -> bool {
        self.fixed_delay == 0.0 && self.jitter == 0.0 && self.drop_prob == 0.0
    }
}

/// Send/receive counters of one endpoint. Sent and received refer to this
/// endpoint's own traffic directions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub frames_received: u64,
    pub bytes_received: u64,
    /// Frames this endpoint sent that the impairment model discarded.
    /// Always 0 on TCP links.
    pub frames_dropped_by_impairment: u64,
}

pub(crate) type SharedStats = Arc<Mutex<LinkStats>>;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("failed to bind {addr}: {source}")]
    BindFailed {
        addr: String,
        source: std::io::Error,
    },
    #[error("no peer connected to {addr} within {secs} s")]
    AcceptTimeout { addr: String, secs: f64 },
    #[error("connection to {addr} refused")]
    ConnectionRefused { addr: String },
    #[error("could not connect to {addr} within {secs} s")]
    ConnectTimeout { addr: String, secs: f64 },
    #[error("receive timed out after {0:?}")]
    TimedOut(Duration),
    #[error("link closed by peer")]
    Closed,
    #[error("transport i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Sending half of a link.
pub trait FrameSender: Send {
    /// Queues one frame for delivery. Blocks while the transport exerts
    /// backpressure; a frame accepted here is never dropped except by
    /// configured impairment.
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError>;

    /// Flushes and closes the sending direction so the peer's receiver
    /// observes end-of-stream after draining. Idempotent; later
    /// `send_frame` calls fail with `Closed`.
    fn close(&mut self) -> Result<(), TransportError>;

    fn stats(&self) -> LinkStats;

    /// Indices (0-based send order) of frames discarded by impairment.
    /// `None` for transports without an impairment model.
    fn dropped_frames(&self) -> Option<Vec<u64>> {
        None
    }
}

/// Receiving half of a link.
pub trait FrameReceiver: Send {
    /// Blocks up to `timeout` for the next complete frame. A zero timeout
    /// polls: it returns whatever is already deliverable without waiting.
    /// Distinguishes `TimedOut` (peer silent) from `Closed` (peer gone and
    /// nothing left to drain).
    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError>;

    fn stats(&self) -> LinkStats;
}

/// One endpoint of a bidirectional frame link. The halves may be used
/// together or split across threads.
pub struct Link {
    pub sender: Box<dyn FrameSender>,
    pub receiver: Box<dyn FrameReceiver>,
}

impl Link {
    pub fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.sender.send_frame(frame)
    }

    pub fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.receiver.recv_frame(timeout)
    }

    /// Combined counters of this endpoint (both halves share one cell).
    pub fn stats(&self) -> LinkStats {
        self.sender.stats()
    }

    pub fn split(self) -> (Box<dyn FrameSender>, Box<dyn FrameReceiver>) {
        (self.sender, self.receiver)
    }
}

pub(crate) fn duration_from_secs(secs: f64) -> Duration {
    Duration::from_secs_f64(secs.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_config_rejects_bad_values() {
        let good = EndpointConfig {
            role: Role::Server,
            address: "127.0.0.1:7701".to_string(),
            connect_timeout: 5.0,
            read_timeout: 5.0,
        };
        assert!(good.validate().is_ok());
        for bad_addr in ["127.0.0.1", "127.0.0.1:0", "127.0.0.1:notaport", ":7701"] {
            let mut bad = good.clone();
            bad.address = bad_addr.to_string();
            assert!(bad.validate().is_err(), "accepted {bad_addr:?}");
        }
        let mut bad = good.clone();
        bad.connect_timeout = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.read_timeout = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn impairment_config_rejects_bad_values() {
        assert!(ImpairmentConfig::default().validate().is_ok());
        assert!(ImpairmentConfig::default().is_transparent());
        for bad in [
            ImpairmentConfig {
                fixed_delay: -0.1,
                ..Default::default()
            },
            ImpairmentConfig {
                jitter: f64::NAN,
                ..Default::default()
            },
            ImpairmentConfig {
                drop_prob: 1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
