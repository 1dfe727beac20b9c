//! Run instrumentation: per-frame delay samples, loss accounting, swarm
//! health measures, and CSV export.
//!
//! CSV column contracts are pinned (see docs/METRICS.md):
//!
//! * trajectories: `tick,time,agent_id,x,y,vx,vy`
//! * delays: `seq,send_ts,recv_ts,delay`
//! * swarm metrics: `tick,time,mean_speed,speed_stddev,cohesion_radius,staleness`
//!
//! Floats are written with shortest round-trip formatting, so re-parsing a
//! CSV reproduces the logged values bit for bit.

use crate::dynamics::{AgentId, AgentState};
use crate::transport::LinkStats;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

/// One received frame's latency measurement. Timestamps are wall-clock
/// seconds since the Unix epoch; `delay` is receiver clock minus sender
/// clock and therefore includes any clock offset between hosts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySample {
    pub seq: u64,
    pub send_timestamp: f64,
    pub recv_timestamp: f64,
    pub delay: f64,
}

impl DelaySample {
    pub fn new(seq: u64, send_timestamp: f64, recv_timestamp: f64) -> Self {
        DelaySample {
            seq,
            send_timestamp,
            recv_timestamp,
            delay: recv_timestamp - send_timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayStats {
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub count: usize,
}

/// Summarizes delay samples. Errors on an empty slice rather than
/// inventing a mean.
pub fn delay_stats(samples: &[DelaySample]) -> Result<DelayStats, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.delay).sum::<f64>() / n;
    let max = samples.iter().map(|s| s.delay).fold(f64::NEG_INFINITY, f64::max);
    let var = samples
        .iter()
        .map(|s| (s.delay - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(DelayStats {
        mean,
        max,
        stddev: var.sqrt(),
        count: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketLoss {
    /// Highest seq seen plus one; 0 when nothing was received.
    pub expected: u64,
    /// Distinct sequence numbers received.
    pub received: u64,
    /// Missing seqs in `[0, max_seen]`, ascending.
    pub gaps: Vec<u64>,
}

impl PacketLoss {
    pub fn loss_fraction(&self) -> f64 {
        if self.expected == 0 {
            0.0
        } else {
            self.gaps.len() as f64 / self.expected as f64
        }
    }
}

/// Infers loss from the set of received sequence numbers. Frames beyond
/// the highest seen seq are unknowable and not counted.
pub fn packet_loss(received_seqs: &[u64]) -> PacketLoss {
    let distinct: BTreeSet<u64> = received_seqs.iter().copied().collect();
    match distinct.last() {
        None => PacketLoss {
            expected: 0,
            received: 0,
            gaps: Vec::new(),
        },
        Some(&max) => {
            let gaps: Vec<u64> = (0..=max).filter(|s| !distinct.contains(s)).collect();
            PacketLoss {
                expected: max + 1,
                received: distinct.len() as u64,
                gaps,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedDispersion {
    pub mean_speed: f64,
    /// Population standard deviation of speeds.
    pub stddev: f64,
    /// Largest |speed - mean_speed|.
    pub max_abs_dev: f64,
}

/// Speed statistics over the given (follower) agents; `None` when empty.
pub fn speed_dispersion_of(agents: &[AgentState]) -> Option<SpeedDispersion> {
    if agents.is_empty() {
        return None;
    }
    let n = agents.len() as f64;
    let speeds: Vec<f64> = agents.iter().map(|a| a.speed()).collect();
    let mean = speeds.iter().sum::<f64>() / n;
    let var = speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let max_abs_dev = speeds
        .iter()
        .map(|s| (s - mean).abs())
        .fold(0.0, f64::max);
    Some(SpeedDispersion {
        mean_speed: mean,
        stddev: var.sqrt(),
        max_abs_dev,
    })
}

/// Speed statistics over a world's followers.
pub fn speed_dispersion(world: &crate::dynamics::WorldState) -> Option<SpeedDispersion> {
    speed_dispersion_of(&world.followers)
}

/// Largest distance of any agent from the centroid of the given agents;
/// `None` when empty.
pub fn cohesion_radius_of(agents: &[AgentState]) -> Option<f64> {
    if agents.is_empty() {
        return None;
    }
    let n = agents.len() as f64;
    let mut centroid = crate::vec2::Vec2::ZERO;
    for a in agents {
        centroid += a.pos;
    }
    centroid = centroid / n;
    Some(
        agents
            .iter()
            .map(|a| a.pos.distance(centroid))
            .fold(0.0, f64::max),
    )
}

/// Cohesion radius of a world's followers.
pub fn cohesion_radius(world: &crate::dynamics::WorldState) -> Option<f64> {
    cohesion_radius_of(&world.followers)
}

/// States recorded at one tick. Node runs record only locally owned
/// agents, so concatenating the per-node logs of a session reconstructs
/// the full system without double counting.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    pub agents: Vec<AgentState>,
}

/// Why a run stopped before its step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortClass {
    /// Peer never produced the awaited frame.
    PeerTimeout,
    /// Frame arrived but violated the protocol (undecodable, wrong seq,
    /// wrong agent count).
    ProtocolViolation,
    /// Link closed while traffic was still required.
    LinkClosed,
    /// The dynamics refused to step (e.g. coincident agents).
    Simulation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunAbort {
    pub tick: u64,
    pub class: AbortClass,
    pub reason: String,
}

/// Everything a run produces. A run that aborts still returns its log,
/// with `abort` set and all data up to the failure intact.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    /// `None` for monolithic (single-process) runs.
    pub node_id: Option<u8>,
    pub leader_id: AgentId,
    pub ticks: Vec<TickRecord>,
    pub delays: Vec<DelaySample>,
    /// Seq of every accepted peer frame, in arrival order.
    pub received_seqs: Vec<u64>,
    /// Per-tick age of the freshest peer snapshot (free-run only).
    pub staleness: Vec<(u64, f64)>,
    /// Frames discarded because a newer seq had already been merged.
    pub stale_discarded: u64,
    pub link: Option<LinkStats>,
    /// Send-order indices of our outbound frames the impairment model
    /// dropped (in-process channel only).
    pub impairment_drops: Option<Vec<u64>>,
    pub abort: Option<RunAbort>,
    pub notes: Vec<String>,
}

impl RunLog {
    pub fn new(node_id: Option<u8>, leader_id: AgentId) -> Self {
        RunLog {
            node_id,
            leader_id,
            ticks: Vec::new(),
            delays: Vec::new(),
            received_seqs: Vec::new(),
            staleness: Vec::new(),
            stale_discarded: 0,
            link: None,
            impairment_drops: None,
            abort: None,
            notes: Vec::new(),
        }
    }

    pub fn record_tick(&mut self, tick: u64, time: f64, agents: Vec<AgentState>) {
        self.ticks.push(TickRecord { tick, time, agents });
    }

    pub fn mark_abort(&mut self, tick: u64, class: AbortClass, reason: impl Into<String>) {
        if self.abort.is_none() {
            self.abort = Some(RunAbort {
                tick,
                class,
                reason: reason.into(),
            });
        }
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no samples to summarize")]
    EmptySample,
    #[error("run log contains no ticks")]
    EmptyLog,
    #[error("csv i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    Trajectories,
    Delays,
    SwarmMetrics,
}

/// Renders one CSV report from a run log.
pub fn render_csv(log: &RunLog, kind: CsvKind) -> Result<String, MetricsError> {
    match kind {
        CsvKind::Trajectories => render_trajectories(log),
        CsvKind::Delays => Ok(render_delays(log)),
        CsvKind::SwarmMetrics => render_swarm_metrics(log),
    }
}

/// Renders and writes one CSV report.
pub fn export_csv(log: &RunLog, kind: CsvKind, path: &Path) -> Result<(), MetricsError> {
    let body = render_csv(log, kind)?;
    std::fs::write(path, body)?;
    Ok(())
}

fn render_trajectories(log: &RunLog) -> Result<String, MetricsError> {
    if log.ticks.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let mut out = String::from("tick,time,agent_id,x,y,vx,vy\n");
    for t in &log.ticks {
        for a in &t.agents {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.tick, t.time, a.id, a.pos.x, a.pos.y, a.vel.x, a.vel.y
            )
            .expect("writing to a String cannot fail");
        }
    }
    Ok(out)
}

fn render_delays(log: &RunLog) -> String {
    // Header-only output is meaningful here: a run that never received a
    // frame has an empty delay table, not a broken one.
    let mut out = String::from("seq,send_ts,recv_ts,delay\n");
    for d in &log.delays {
        writeln!(
            out,
            "{},{},{},{}",
            d.seq, d.send_timestamp, d.recv_timestamp, d.delay
        )
        .expect("writing to a String cannot fail");
    }
    out
}

fn render_swarm_metrics(log: &RunLog) -> Result<String, MetricsError> {
    if log.ticks.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let staleness: HashMap<u64, f64> = log.staleness.iter().copied().collect();
    let mut out = String::from("tick,time,mean_speed,speed_stddev,cohesion_radius,staleness\n");
    for t in &log.ticks {
        let followers: Vec<AgentState> = t
            .agents
            .iter()
            .filter(|a| a.id != log.leader_id)
            .copied()
            .collect();
        // A leader-only log yields just the header.
        let Some(disp) = speed_dispersion_of(&followers) else {
            continue;
        };
        let cohesion = cohesion_radius_of(&followers).unwrap_or(0.0);
        // Synchronous exchanges never leave data stale, hence 0 by
        // definition for runs without staleness samples.
        let stale = staleness.get(&t.tick).copied().unwrap_or(0.0);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            t.tick, t.time, disp.mean_speed, disp.stddev, cohesion, stale
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec2::Vec2;

    #[test]
    fn delay_stats_hand_checked() {
        let samples: Vec<DelaySample> = [0.1, 0.2, 0.3]
            .iter()
            .enumerate()
            .map(|(i, d)| DelaySample::new(i as u64, 100.0, 100.0 + d))
            .collect();
        let s = delay_stats(&samples).unwrap();
        assert!((s.mean - 0.2).abs() < 1e-12);
        assert!((s.max - 0.3).abs() < 1e-12);
        // Population stddev of {0.1, 0.2, 0.3} = sqrt(2/300).
        assert!((s.stddev - (2.0f64 / 300.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.count, 3);
        assert!(matches!(delay_stats(&[]), Err(MetricsError::EmptySample)));
    }

    #[test]
    fn packet_loss_finds_gaps() {
        let loss = packet_loss(&[0, 1, 2, 4, 7]);
        assert_eq!(loss.expected, 8);
        assert_eq!(loss.received, 5);
        assert_eq!(loss.gaps, vec![3, 5, 6]);
        assert!((loss.loss_fraction() - 3.0 / 8.0).abs() < 1e-12);

        // Duplicates and disorder don't fake losses.
        let loss = packet_loss(&[2, 0, 1, 1, 2]);
        assert_eq!(loss.expected, 3);
        assert_eq!(loss.received, 3);
        assert!(loss.gaps.is_empty());

        let loss = packet_loss(&[]);
        assert_eq!((loss.expected, loss.received), (0, 0));
        assert_eq!(loss.loss_fraction(), 0.0);
    }

    fn follower(id: u64, pos: Vec2, vel: Vec2) -> AgentState {
        AgentState::new(AgentId(id), pos, vel)
    }

    #[test]
    fn speed_dispersion_hand_checked() {
        let agents = vec![
            follower(1, Vec2::ZERO, Vec2::new(3.0, 0.0)),
            follower(2, Vec2::ZERO, Vec2::new(0.0, 4.0)),
            follower(3, Vec2::ZERO, Vec2::new(3.0, 4.0)),
        ];
        let d = speed_dispersion_of(&agents).unwrap();
        assert!((d.mean_speed - 4.0).abs() < 1e-12);
        assert!((d.stddev - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((d.max_abs_dev - 1.0).abs() < 1e-12);
        assert!(speed_dispersion_of(&[]).is_none());
    }

    #[test]
    fn cohesion_radius_hand_checked() {
        let agents = vec![
            follower(1, Vec2::new(0.0, 0.0), Vec2::ZERO),
            follower(2, Vec2::new(2.0, 0.0), Vec2::ZERO),
            follower(3, Vec2::new(1.0, 3.0), Vec2::ZERO),
        ];
        // Centroid (1, 1); farthest is (1, 3) at distance 2.
        assert!((cohesion_radius_of(&agents).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(cohesion_radius_of(&agents[..1]).unwrap(), 0.0);
        assert!(cohesion_radius_of(&[]).is_none());
    }

    fn tiny_log() -> RunLog {
        let mut log = RunLog::new(None, AgentId(0));
        log.record_tick(
            0,
            0.0,
            vec![
                AgentState::new(AgentId(0), Vec2::new(1.5, 2.0), Vec2::new(0.0, 0.25)),
                AgentState::new(AgentId(1), Vec2::new(0.5, 0.5), Vec2::new(0.1, 0.0)),
            ],
        );
        log.record_tick(
            1,
            0.05,
            vec![
                AgentState::new(AgentId(0), Vec2::new(1.5, 2.0125), Vec2::new(0.0, 0.25)),
                AgentState::new(AgentId(1), Vec2::new(0.505, 0.5), Vec2::new(0.1, 0.0)),
            ],
        );
        log
    }

    #[test]
    fn trajectories_csv_layout_is_pinned() {
        let got = render_csv(&tiny_log(), CsvKind::Trajectories).unwrap();
        let expect = "tick,time,agent_id,x,y,vx,vy\n\
                      0,0,0,1.5,2,0,0.25\n\
                      0,0,1,0.5,0.5,0.1,0\n\
                      1,0.05,0,1.5,2.0125,0,0.25\n\
                      1,0.05,1,0.505,0.5,0.1,0\n";
        assert_eq!(got, expect);
    }

    #[test]
    fn swarm_metrics_csv_layout_is_pinned() {
        let got = render_csv(&tiny_log(), CsvKind::SwarmMetrics).unwrap();
        let expect = "tick,time,mean_speed,speed_stddev,cohesion_radius,staleness\n\
                      0,0,0.1,0,0,0\n\
                      1,0.05,0.1,0,0,0\n";
        assert_eq!(got, expect);
    }

    #[test]
    fn leader_only_log_gives_header_only_swarm_metrics() {
        let mut log = RunLog::new(Some(1), AgentId(0));
        log.record_tick(
            0,
            0.0,
            vec![AgentState::new(AgentId(0), Vec2::ZERO, Vec2::ZERO)],
        );
        let got = render_csv(&log, CsvKind::SwarmMetrics).unwrap();
        assert_eq!(got, "tick,time,mean_speed,speed_stddev,cohesion_radius,staleness\n");
    }

    #[test]
    fn delays_csv_roundtrips_bitwise() {
        let mut log = RunLog::new(Some(0), AgentId(0));
        log.delays.push(DelaySample::new(0, 1_724_500_000.123456, 1_724_500_000.223467));
        log.delays.push(DelaySample::new(1, 1_724_500_000.173456, 1_724_500_000.293461));
        let got = render_csv(&log, CsvKind::Delays).unwrap();
        let mut lines = got.lines();
        assert_eq!(lines.next().unwrap(), "seq,send_ts,recv_ts,delay");
        for (line, d) in lines.zip(&log.delays) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0].parse::<u64>().unwrap(), d.seq);
            assert_eq!(cols[1].parse::<f64>().unwrap().to_bits(), d.send_timestamp.to_bits());
            assert_eq!(cols[2].parse::<f64>().unwrap().to_bits(), d.recv_timestamp.to_bits());
            assert_eq!(cols[3].parse::<f64>().unwrap().to_bits(), d.delay.to_bits());
        }
    }

    #[test]
    fn empty_log_is_an_error_for_tick_reports() {
        let log = RunLog::new(None, AgentId(0));
        assert!(matches!(
            render_csv(&log, CsvKind::Trajectories),
            Err(MetricsError::EmptyLog)
        ));
        assert!(matches!(
            render_csv(&log, CsvKind::SwarmMetrics),
            Err(MetricsError::EmptyLog)
        ));
        // Delays render header-only instead.
        assert!(render_csv(&log, CsvKind::Delays).is_ok());
    }

    #[test]
    fn staleness_column_uses_samples_when_present() {
        let mut log = tiny_log();
        log.staleness.push((1, 0.125));
        let got = render_csv(&log, CsvKind::SwarmMetrics).unwrap();
        let last = got.lines().last().unwrap();
        assert!(last.ends_with(",0.125"), "line: {last}");
    }
}
