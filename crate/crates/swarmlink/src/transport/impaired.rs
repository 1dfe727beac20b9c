//! In-process channel with synthetic delay, jitter and loss.
//!
//! Each direction is an independent bounded FIFO. Impairment decisions are
//! made on the sending side from a seeded per-direction RNG: for every
//! frame a drop draw is taken first, then — only if the frame survives and
//! jitter is configured — one jitter draw. The drop/keep pattern is
//! therefore a pure function of the seed, which is what makes loss
//! bookkeeping reproducible run after run.
//!
//! Delivery preserves order even under jitter: frames queue behind each
//! other and a frame becomes visible once its own delivery instant has
//! passed (FIFO with per-frame release times, not a reordering network).

use super::{
    duration_from_secs, FrameReceiver, FrameSender, ImpairmentConfig, Link, LinkStats,
    SharedStats, TransportError, DEFAULT_FRAME_BUFFER,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

struct TimedFrame {
    deliver_at: Instant,
    bytes: Vec<u8>,
}

/// Builds a connected pair of impaired endpoints. Both directions apply
/// the same `cfg` but draw from distinct RNG streams, so the two
/// directions drop independently yet reproducibly.
pub fn impaired_channel(cfg: &ImpairmentConfig) -> Result<(Link, Link), TransportError> {
    cfg.validate()?;
    let (tx_ab, rx_ab) = mpsc::sync_channel::<TimedFrame>(DEFAULT_FRAME_BUFFER);
    let (tx_ba, rx_ba) = mpsc::sync_channel::<TimedFrame>(DEFAULT_FRAME_BUFFER);
    let stats_a: SharedStats = Arc::new(Mutex::new(LinkStats::default()));
    let stats_b: SharedStats = Arc::new(Mutex::new(LinkStats::default()));

    // Direction seeds: A->B uses the seed as-is, B->A a fixed constant
    // xor of it, so one scenario seed still decorrelates the directions.
    let seed_ab = cfg.seed;
    let seed_ba = cfg.seed ^ 0x9E37_79B9_7F4A_7C15;

    let a = Link {
        sender: Box::new(ImpairedSender::new(tx_ab, cfg, seed_ab, Arc::clone(&stats_a))),
        receiver: Box::new(ImpairedReceiver::new(rx_ba, Arc::clone(&stats_a))),
    };
    let b = Link {
        sender: Box::new(ImpairedSender::new(tx_ba, cfg, seed_ba, Arc::clone(&stats_b))),
        receiver: Box::new(ImpairedReceiver::new(rx_ab, stats_b)),
    };
    Ok((a, b))
}

struct ImpairedSender {
    tx: Option<SyncSender<TimedFrame>>,
    cfg: ImpairmentConfig,
    rng: ChaCha8Rng,
    next_index: u64,
    dropped: Vec<u64>,
    stats: SharedStats,
}

impl ImpairedSender {
    fn new(tx: SyncSender<TimedFrame>, cfg: &ImpairmentConfig, seed: u64, stats: SharedStats) -> Self {
        ImpairedSender {
            tx: Some(tx),
            cfg: *cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_index: 0,
            dropped: Vec::new(),
            stats,
        }
    }
}

impl FrameSender for ImpairedSender {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        let tx = self.tx.as_ref().ok_or(TransportError::Closed)?;
        {
            let mut s = self.stats.lock().unwrap();
            s.frames_sent += 1;
            s.bytes_sent += frame.len() as u64;
        }
        let index = self.next_index;
        self.next_index += 1;

        // Drop draw first, jitter draw second: the drop pattern depends
        // only on the seed, never on delay settings.
        let drop_draw: f64 = self.rng.gen();
        if drop_draw < self.cfg.drop_prob {
            self.stats.lock().unwrap().frames_dropped_by_impairment += 1;
            self.dropped.push(index);
            return Ok(());
        }
        let mut delay = self.cfg.fixed_delay;
        if self.cfg.jitter > 0.0 {
            delay += self.rng.gen_range(0.0..self.cfg.jitter);
        }
        let timed = TimedFrame {
            deliver_at: Instant::now() + duration_from_secs(delay),
            bytes: frame.to_vec(),
        };
        // Block under backpressure; a reliable (non-dropping) channel must
        // never lose frames to a full buffer.
        let mut pending = timed;
        loop {
            match tx.try_send(pending) {
                Ok(()) => return Ok(()),
                Err(TrySendError::Full(frame)) => {
                    pending = frame;
                    std::thread::sleep(Duration::from_micros(200));
                }
                Err(TrySendError::Disconnected(_)) => return Err(TransportError::Closed),
            }
        }
    }

    fn close(&mut self) -> Result<(), TransportError> {
        self.tx = None;
        Ok(())
    }

    fn stats(&self) -> LinkStats {
        *self.stats.lock().unwrap()
    }

    fn dropped_frames(&self) -> Option<Vec<u64>> {
        Some(self.dropped.clone())
    }
}

struct ImpairedReceiver {
    rx: Receiver<TimedFrame>,
    /// Head frame already pulled from the queue but not yet deliverable.
    pending: Option<TimedFrame>,
    stats: SharedStats,
}

impl ImpairedReceiver {
    fn new(rx: Receiver<TimedFrame>, stats: SharedStats) -> Self {
        ImpairedReceiver {
            rx,
            pending: None,
            stats,
        }
    }

    fn deliver(&mut self, frame: TimedFrame) -> Vec<u8> {
        let mut s = self.stats.lock().unwrap();
        s.frames_received += 1;
        s.bytes_received += frame.bytes.len() as u64;
        frame.bytes
    }
}

impl FrameReceiver for ImpairedReceiver {
    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(head) = self.pending.take() {
                let now = Instant::now();
                if head.deliver_at <= now {
                    return Ok(self.deliver(head));
                }
                if head.deliver_at > deadline {
                    // Frame exists but has not "arrived" yet; it stays
                    // pending for a later call.
                    self.pending = Some(head);
                    return Err(TransportError::TimedOut(timeout));
                }
                let wait = head.deliver_at - now;
                self.pending = Some(head);
                std::thread::sleep(wait);
                continue;
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                match self.rx.try_recv() {
                    Ok(f) => self.pending = Some(f),
                    Err(mpsc::TryRecvError::Empty) => {
                        return Err(TransportError::TimedOut(timeout))
                    }
                    Err(mpsc::TryRecvError::Disconnected) => return Err(TransportError::Closed),
                }
            } else {
                match self.rx.recv_timeout(remaining) {
                    Ok(f) => self.pending = Some(f),
                    Err(RecvTimeoutError::Timeout) => {
                        return Err(TransportError::TimedOut(timeout))
                    }
                    Err(RecvTimeoutError::Disconnected) => return Err(TransportError::Closed),
                }
            }
        }
    }

    fn stats(&self) -> LinkStats {
        *self.stats.lock().unwrap()
    }
}
