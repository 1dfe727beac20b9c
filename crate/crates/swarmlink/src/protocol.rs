//! Line-oriented snapshot codec.
//!
//! One frame is one ASCII line:
//!
//! ```text
//! SNAP <node_id> <seq> <send_timestamp> <n> <x 1..n> <y 1..n> <vx 1..n> <vy 1..n>\n
//! ```
//!
//! All agent values of one component are grouped together (all x, then all
//! y, then all vx, then all vy), in ascending-id order of the sender's
//! agent set. The frame carries no agent ids; receivers map value index to
//! id through the session configuration they share with the sender.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `decode(encode(s))` reproduces every value bit for bit.

use std::fmt::Write as _;

/// Leading token of every frame.
pub const FRAME_TAG: &str = "SNAP";

/// Upper bound on the per-frame agent count accepted by the decoder; a
/// corrupt count field must not trigger an enormous allocation.
pub const MAX_AGENTS_PER_FRAME: usize = 4096;

/// One node's view of its own agents at a send instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub node_id: u8,
    pub seq: u64,
    /// Sender wall-clock at send time, seconds since the Unix epoch.
    pub send_timestamp: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub vxs: Vec<f64>,
    pub vys: Vec<f64>,
}

impl Snapshot {
    pub fn agent_count(&self) -> usize {
        self.xs.len()
    }

    /// Equality down to the bit pattern of every float (distinguishes
    /// -0.0 from 0.0, unlike `==`).
    pub fn bitwise_eq(&self, other: &Snapshot) -> bool {
        fn bits(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.node_id == other.node_id
            && self.seq == other.seq
            && self.send_timestamp.to_bits() == other.send_timestamp.to_bits()
            && bits(&self.xs, &other.xs)
            && bits(&self.ys, &other.ys)
            && bits(&self.vxs, &other.vxs)
            && bits(&self.vys, &other.vys)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed frame header: {0}")]
    MalformedHeader(String),
    #[error("frame declares {expected} values but carries {got}")]
    WrongFieldCount { expected: usize, got: usize },
    #[error("field {field} is not a number: {text:?}")]
    UnparseableNumber { field: String, text: String },
    #[error("field {field} is not finite ({value})")]
    NonFiniteValue { field: String, value: f64 },
}

fn check_finite(field: &str, idx: Option<usize>, v: f64) -> Result<(), ProtocolError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ProtocolError::NonFiniteValue {
            field: match idx {
                Some(i) => format!("{field}[{i}]"),
                None => field.to_string(),
            },
            value: v,
        })
    }
}

/// Encodes a snapshot into one newline-terminated frame.
pub fn encode_snapshot(s: &Snapshot) -> Result<Vec<u8>, ProtocolError> {
    let n = s.xs.len();
    if s.ys.len() != n || s.vxs.len() != n || s.vys.len() != n {
        return Err(ProtocolError::WrongFieldCount {
            expected: 4 * n,
            got: s.xs.len() + s.ys.len() + s.vxs.len() + s.vys.len(),
        });
    }
    check_finite("send_timestamp", None, s.send_timestamp)?;
    for (name, vals) in [("x", &s.xs), ("y", &s.ys), ("vx", &s.vxs), ("vy", &s.vys)] {
        for (i, v) in vals.iter().enumerate() {
            check_finite(name, Some(i), *v)?;
        }
    }

    // ~24 chars is ample for most shortest-round-trip doubles.
    let mut line = String::with_capacity(32 + 24 * 4 * n);
    write!(
        line,
        "{} {} {} {} {}",
        FRAME_TAG, s.node_id, s.seq, s.send_timestamp, n
    )
    .expect("writing to a String cannot fail");
    for vals in [&s.xs, &s.ys, &s.vxs, &s.vys] {
        for v in vals.iter() {
            write!(line, " {v}").expect("writing to a String cannot fail");
        }
    }
    line.push('\n');
    Ok(line.into_bytes())
}

fn parse_num<T: std::str::FromStr>(field: &str, text: &str) -> Result<T, ProtocolError> {
    text.parse().map_err(|_| ProtocolError::UnparseableNumber {
        field: field.to_string(),
        text: text.to_string(),
    })
}

fn parse_f64(field: String, text: &str) -> Result<f64, ProtocolError> {
    let v: f64 = text.parse().map_err(|_| ProtocolError::UnparseableNumber {
        field: field.clone(),
        text: text.to_string(),
    })?;
    if !v.is_finite() {
        return Err(ProtocolError::NonFiniteValue { field, value: v });
    }
    Ok(v)
}

/// Decodes one frame (with or without its trailing newline).
pub fn decode_snapshot(frame: &[u8]) -> Result<Snapshot, ProtocolError> {
    let text = std::str::from_utf8(frame)
        .map_err(|_| ProtocolError::MalformedHeader("frame is not valid UTF-8".to_string()))?;
    let mut tokens = text.split_ascii_whitespace();

    let tag = tokens
        .next()
        .ok_or_else(|| ProtocolError::MalformedHeader("empty frame".to_string()))?;
    if tag != FRAME_TAG {
        return Err(ProtocolError::MalformedHeader(format!(
            "expected tag {FRAME_TAG:?}, got {tag:?}"
        )));
    }
    let mut header = |name: &str| -> Result<&str, ProtocolError> {
        tokens
            .next()
            .ok_or_else(|| ProtocolError::MalformedHeader(format!("missing {name} field")))
    };
    let node_id: u8 = parse_num("node_id", header("node_id")?)?;
    let seq: u64 = parse_num("seq", header("seq")?)?;
    let send_timestamp = parse_f64("send_timestamp".to_string(), header("send_timestamp")?)?;
    let n: usize = parse_num("agent_count", header("agent_count")?)?;
    if n > MAX_AGENTS_PER_FRAME {
        return Err(ProtocolError::MalformedHeader(format!(
            "agent count {n} exceeds the per-frame limit {MAX_AGENTS_PER_FRAME}"
        )));
    }

    let values: Vec<&str> = tokens.collect();
    if values.len() != 4 * n {
        return Err(ProtocolError::WrongFieldCount {
            expected: 4 * n,
            got: values.len(),
        });
    }

    let mut parse_block = |name: &str, offset: usize| -> Result<Vec<f64>, ProtocolError> {
        values[offset..offset + n]
            .iter()
            .enumerate()
            .map(|(i, t)| parse_f64(format!("{name}[{i}]"), t))
            .collect()
    };
    Ok(Snapshot {
        node_id,
        seq,
        send_timestamp,
        xs: parse_block("x", 0)?,
        ys: parse_block("y", n)?,
        vxs: parse_block("vx", 2 * n)?,
        vys: parse_block("vy", 3 * n)?,
    })
}

/// Incremental frame extractor for byte streams: feed arbitrary chunks,
/// pull complete newline-terminated frames as they form. Bytes after the
/// last newline stay buffered until more input arrives.
#[derive(Debug, Default)]
pub struct FrameSplitter {
    buf: Vec<u8>,
    // Bytes before this offset are known to contain no newline.
    scanned: usize,
}

impl FrameSplitter {
    pub fn new() -> Self {
        FrameSplitter::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, including its trailing newline.
    pub fn next_frame(&mut self) -> Option<Vec<u8>> {
        match self.buf[self.scanned..].iter().position(|&b| b == b'\n') {
            Some(rel) => {
                let end = self.scanned + rel;
                let frame: Vec<u8> = self.buf.drain(..=end).collect();
                self.scanned = 0;
                Some(frame)
            }
            None => {
                self.scanned = self.buf.len();
                None
            }
        }
    }

    /// Buffered bytes that do not yet form a complete frame.
    pub fn residual(&self) -> &[u8] {
        &self.buf
    }
}

/// Splits a buffer into complete frames (each including its newline) plus
/// the trailing partial-frame residue.
pub fn split_frames(bytes: &[u8]) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut splitter = FrameSplitter::new();
    splitter.push(bytes);
    let mut frames = Vec::new();
    while let Some(f) = splitter.next_frame() {
        frames.push(f);
    }
    (frames, splitter.buf)
}
