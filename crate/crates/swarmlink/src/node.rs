//! Distributed session logic: each node owns a subset of agents, steps
//! them locally, and exchanges state snapshots with its peer.
//!
//! Ids never travel on the wire. Both nodes derive the same id layout and
//! the same seeded initial placement from configuration alone, so a frame
//! only needs values in ascending-id order of the sender's agent set.

use crate::dynamics::{
    init_random_nonoverlapping, leader_state_at, step, step_agents, AgentId, AgentState,
    DynamicsError, LeaderDuringStep, LeaderPath, SimConfig, SwarmParams, WorldState,
};
use crate::metrics::{AbortClass, DelaySample, RunLog};
use crate::protocol::{decode_snapshot, encode_snapshot, ProtocolError, Snapshot};
use crate::transport::{FrameReceiver, FrameSender, Link, TransportError};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// How the two nodes synchronize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeMode {
    /// Tick k happens only after both sides have exchanged their seq-k
    /// snapshots. Deterministic: reproduces the monolithic run bit for bit
    /// under the semi-implicit integrator, at the price of running no
    /// faster than the link's round trip.
    LockStep,
    /// Each node steps on its own wall-clock cadence (one tick per dt of
    /// real time), sends every `exchange_period`, and holds the last
    /// received peer state between arrivals. Tolerates delay and loss;
    /// trajectories then depend on timing.
    FreeRun,
}

/// Everything one node needs to run its half of a session.
#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub node_id: u8,
    /// Ids this node owns (including the leader if it owns the leader),
    /// strictly ascending.
    pub local_agent_ids: Vec<AgentId>,
    /// Ids the peer owns, strictly ascending.
    pub peer_agent_ids: Vec<AgentId>,
    pub leader_id: AgentId,
    /// Present exactly when this node owns the leader.
    pub leader_path: Option<LeaderPath>,
    pub swarm: SwarmParams,
    pub sim: SimConfig,
    pub exchange: ExchangeMode,
    /// Snapshot send period for free-run, in seconds of simulated time
    /// (rounded to whole ticks, minimum one tick).
    pub exchange_period: f64,
    /// How long to wait on the peer before declaring it lost (seconds).
    pub peer_timeout: f64,
    /// Number of integration steps; the run logs `step_budget + 1` ticks
    /// including the initial state.
    pub step_budget: u64,
}

impl NodeConfig {
    pub fn owns_leader(&self) -> bool {
        self.local_agent_ids.binary_search(&self.leader_id).is_ok()
    }

    /// Ids of this node's followers (local ids minus the leader).
    pub fn local_follower_ids(&self) -> Vec<AgentId> {
        self.local_agent_ids
            .iter()
            .copied()
            .filter(|id| *id != self.leader_id)
            .collect()
    }

    /// All follower ids of the session, ascending. Both nodes compute the
    /// same list, which fixes the placement order of the seeded initial
    /// conditions.
    pub fn global_follower_ids(&self) -> Vec<AgentId> {
        let mut all: Vec<AgentId> = self
            .local_agent_ids
            .iter()
            .chain(self.peer_agent_ids.iter())
            .copied()
            .filter(|id| *id != self.leader_id)
            .collect();
        all.sort_unstable();
        all
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        let mut issues = Vec::new();
        for (name, ids) in [
            ("local_agent_ids", &self.local_agent_ids),
            ("peer_agent_ids", &self.peer_agent_ids),
        ] {
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                issues.push(format!("{name} must be strictly ascending"));
            }
        }
        for id in &self.local_agent_ids {
            if self.peer_agent_ids.binary_search(id).is_ok() {
                return Err(NodeError::IdCollision(*id));
            }
        }
        let leader_local = self.local_agent_ids.binary_search(&self.leader_id).is_ok();
        let leader_peer = self.peer_agent_ids.binary_search(&self.leader_id).is_ok();
        if !leader_local && !leader_peer {
            issues.push(format!("leader {} belongs to neither node", self.leader_id));
        }
        if leader_local != self.leader_path.is_some() {
            issues.push(if leader_local {
                "node owns the leader but has no leader path".to_string()
            } else {
                "leader path given although the peer owns the leader".to_string()
            });
        }
        if let Err(e) = self.swarm.validate() {
            issues.push(e.to_string());
        }
        if let Err(e) = self.sim.validate() {
            issues.push(e.to_string());
        }
        if let Some(path) = &self.leader_path {
            if let Err(e) = path.validate() {
                issues.push(e.to_string());
            } else {
                let horizon = self.step_budget as f64 * self.sim.dt;
                let (start, end) = path.time_range();
                if start > 0.0 || end < horizon {
                    issues.push(format!(
                        "leader path covers [{start}, {end}] s but the run needs [0, {horizon}] s"
                    ));
                }
            }
        }
        if self.step_budget == 0 {
            issues.push("step_budget must be >= 1".to_string());
        }
        if !(self.exchange_period.is_finite() && self.exchange_period > 0.0) {
            issues.push(format!(
                "exchange_period must be > 0, got {}",
                self.exchange_period
            ));
        }
        if !(self.peer_timeout.is_finite() && self.peer_timeout > 0.0) {
            issues.push(format!("peer_timeout must be > 0, got {}", self.peer_timeout));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(NodeError::InvalidConfig(issues.join("; ")))
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("invalid node config: {0}")]
    InvalidConfig(String),
    #[error("agent id {0} is owned by both nodes")]
    IdCollision(AgentId),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Receiver's wall clock, seconds since the Unix epoch.
pub fn wall_clock_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("system clock predates the Unix epoch")
        .as_secs_f64()
}

/// Builds the wire snapshot of an agent list (assumed ascending by id).
pub fn snapshot_from_agents(
    node_id: u8,
    seq: u64,
    send_timestamp: f64,
    agents: &[AgentState],
) -> Snapshot {
    let n = agents.len();
    let mut snap = Snapshot {
        node_id,
        seq,
        send_timestamp,
        xs: Vec::with_capacity(n),
        ys: Vec::with_capacity(n),
        vxs: Vec::with_capacity(n),
        vys: Vec::with_capacity(n),
    };
    for a in agents {
        snap.xs.push(a.pos.x);
        snap.ys.push(a.pos.y);
        snap.vxs.push(a.vel.x);
        snap.vys.push(a.vel.y);
    }
    snap
}

/// Reattaches ids to a snapshot's values. `ids` is the receiver's notion
/// of the sender's agent set, ascending.
pub fn snapshot_to_agents(
    snap: &Snapshot,
    ids: &[AgentId],
) -> Result<Vec<AgentState>, NodeError> {
    if snap.agent_count() != ids.len() {
        return Err(NodeError::ProtocolViolation(format!(
            "peer frame carries {} agents but the session config assigns it {}",
            snap.agent_count(),
            ids.len()
        )));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            AgentState::new(
                *id,
                Vec2::new(snap.xs[i], snap.ys[i]),
                Vec2::new(snap.vxs[i], snap.vys[i]),
            )
        })
        .collect())
}

/// Applies remote-owned agent states to a world, replacing the leader or
/// upserting followers by id. Ids listed in `local_ids` may not appear in
/// `remote`: that would mean two owners for one agent.
pub fn merge_remote(
    world: &WorldState,
    local_ids: &[AgentId],
    remote: &[AgentState],
) -> Result<WorldState, NodeError> {
    let mut merged = world.clone();
    for r in remote {
        if local_ids.binary_search(&r.id).is_ok() {
            return Err(NodeError::IdCollision(r.id));
        }
        if r.id == merged.leader.id {
            merged.leader = *r;
            continue;
        }
        match merged.followers.binary_search_by_key(&r.id, |a| a.id) {
            Ok(i) => merged.followers[i] = *r,
            Err(i) => merged.followers.insert(i, *r),
        }
    }
    Ok(merged)
}

/// Tracks the peer's snapshot stream: sequence monotonicity, agent-count
/// conformance, and the age of the freshest accepted state.
#[derive(Debug)]
pub struct RemoteView {
    expected_ids: Vec<AgentId>,
    last_seq: Option<u64>,
    last_send_timestamp: Option<f64>,
    last_recv_timestamp: Option<f64>,
    stale_discarded: u64,
}

impl RemoteView {
    pub fn new(expected_ids: Vec<AgentId>) -> Self {
        RemoteView {
            expected_ids,
            last_seq: None,
            last_send_timestamp: None,
            last_recv_timestamp: None,
            stale_discarded: 0,
        }
    }

    /// Offers a decoded frame received at local wall-clock
    /// `recv_timestamp`. Returns the mapped agent states when the frame
    /// advances the view, `None` when it is stale or duplicate (counted,
    /// not applied), and an error when it violates the session contract.
    pub fn offer(
        &mut self,
        snap: &Snapshot,
        recv_timestamp: f64,
    ) -> Result<Option<Vec<AgentState>>, NodeError> {
        let agents = snapshot_to_agents(snap, &self.expected_ids)?;
        if let Some(last) = self.last_seq {
            if snap.seq <= last {
                self.stale_discarded += 1;
                return Ok(None);
            }
        }
        self.last_seq = Some(snap.seq);
        self.last_send_timestamp = Some(snap.send_timestamp);
        self.last_recv_timestamp = Some(recv_timestamp);
        Ok(Some(agents))
    }

    /// Age of the freshest accepted snapshot relative to `now`; `None`
    /// before anything arrived.
    pub fn staleness(&self, now: f64) -> Option<f64> {
        self.last_send_timestamp.map(|ts| now - ts)
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    /// Local wall-clock at which the freshest snapshot arrived.
    pub fn last_recv_timestamp(&self) -> Option<f64> {
        self.last_recv_timestamp
    }

    pub fn stale_discarded(&self) -> u64 {
        self.stale_discarded
    }
}

/// One node's working state during a session.
struct NodeWorld {
    time: f64,
    /// Latest leader state: own-simulated when this node owns it, else the
    /// last merged value (`None` until the first snapshot arrives).
    leader: Option<AgentState>,
    /// Locally owned followers, ascending by id.
    local_followers: Vec<AgentState>,
    /// Last received state of every peer-owned follower.
    remote_followers: BTreeMap<AgentId, AgentState>,
}

impl NodeWorld {
    fn init(cfg: &NodeConfig) -> Result<Self, NodeError> {
        let all = cfg.global_follower_ids();
        let points = init_random_nonoverlapping(
            all.len(),
            cfg.sim.arena,
            cfg.sim.min_separation,
            cfg.sim.seed,
        )?;
        let local_followers = all
            .iter()
            .zip(&points)
            .filter(|(id, _)| cfg.local_agent_ids.binary_search(id).is_ok())
            .map(|(id, p)| AgentState::at_rest(*id, *p))
            .collect();
        let leader = match &cfg.leader_path {
            Some(path) => Some(leader_state_at(path, 0.0, cfg.leader_id)?),
            None => None,
        };
        Ok(NodeWorld {
            time: 0.0,
            leader,
            local_followers,
            remote_followers: BTreeMap::new(),
        })
    }

    /// This node's own agents (leader included when owned), ascending.
    fn local_agents(&self, cfg: &NodeConfig) -> Vec<AgentState> {
        let mut agents = self.local_followers.clone();
        if cfg.owns_leader() {
            if let Some(leader) = self.leader {
                agents.push(leader);
                agents.sort_by_key(|a| a.id);
            }
        }
        agents
    }

    fn apply_remote(&mut self, cfg: &NodeConfig, agents: &[AgentState]) {
        for a in agents {
            if a.id == cfg.leader_id {
                self.leader = Some(*a);
            } else {
                self.remote_followers.insert(a.id, *a);
            }
        }
    }

    /// Full world as this node currently sees it; `None` while the leader
    /// state is still unknown.
    fn assemble(&self) -> Option<WorldState> {
        let leader = self.leader?;
        let mut followers = self.local_followers.clone();
        followers.extend(self.remote_followers.values());
        Some(WorldState::new(self.time, leader, followers))
    }

    /// Advances local agents by one dt. Remote followers are held; the
    /// leader follows its path when owned and is held otherwise. Before
    /// the first leader snapshot arrives on a non-owning node, nothing can
    /// move: time advances and local agents hold.
    fn step_local(&mut self, cfg: &NodeConfig) -> Result<(), DynamicsError> {
        let Some(world) = self.assemble() else {
            self.time += cfg.sim.dt;
            return Ok(());
        };
        let mode = match &cfg.leader_path {
            Some(path) => LeaderDuringStep::FollowPath(path),
            None => LeaderDuringStep::Hold,
        };
        let only = cfg.local_follower_ids();
        let next = step_agents(&world, &cfg.swarm, &cfg.sim, mode, Some(&only))?;
        self.time = next.time;
        for mine in &mut self.local_followers {
            if let Some(updated) = next.follower(mine.id) {
                *mine = *updated;
            }
        }
        if cfg.owns_leader() {
            self.leader = Some(next.leader);
        }
        Ok(())
    }
}

fn abort_reason(e: &TransportError) -> (AbortClass, String) {
    match e {
        TransportError::TimedOut(_) => (AbortClass::PeerTimeout, e.to_string()),
        _ => (AbortClass::LinkClosed, e.to_string()),
    }
}

/// Records a delay sample, flagging (once) the clock-skew signature of a
/// negative delay instead of clamping it.
fn push_delay_sample(log: &mut RunLog, sample: DelaySample) {
    if sample.delay < 0.0 && !log.notes.iter().any(|n| n.starts_with("negative delay")) {
        log.note(format!(
            "negative delay sample at seq {} ({} s): sender clock runs ahead of receiver",
            sample.seq, sample.delay
        ));
    }
    log.delays.push(sample);
}

/// Runs a full-system single-process session: every agent steps in one
/// loop, no exchange. Ticks 0..=step_budget are recorded; a simulation
/// abort marks the log and returns it with everything gathered so far.
pub fn run_monolithic(
    initial: &WorldState,
    params: &SwarmParams,
    sim: &SimConfig,
    path: &LeaderPath,
    step_budget: u64,
) -> Result<RunLog, NodeError> {
    params.validate()?;
    sim.validate()?;
    path.validate()?;
    initial.validate()?;
    let mut log = RunLog::new(None, initial.leader.id);
    let mut world = initial.clone();
    for tick in 0..=step_budget {
        log.record_tick(tick, world.time, world.all_agents().copied().collect());
        if tick < step_budget {
            match step(&world, params, sim, path) {
                Ok(next) => world = next,
                Err(e) => {
                    log.mark_abort(tick, AbortClass::Simulation, e.to_string());
                    break;
                }
            }
        }
    }
    Ok(log)
}

/// Runs the lock-step exchange: at every tick both nodes send their seq-k
/// snapshot, block for the peer's seq-k snapshot, merge, record, and only
/// then integrate. The final tick exchanges and records without stepping,
/// so both logs end on a consistent state.
///
/// Mid-run failures (peer timeout, desync, closed link, simulation abort)
/// mark the returned log rather than discarding it.
pub fn run_lockstep(cfg: &NodeConfig, link: Link) -> Result<RunLog, NodeError> {
    cfg.validate()?;
    if cfg.exchange != ExchangeMode::LockStep {
        return Err(NodeError::InvalidConfig(
            "run_lockstep requires exchange mode lock-step".to_string(),
        ));
    }
    let (mut sender, mut receiver) = link.split();
    let mut world = NodeWorld::init(cfg)?;
    let mut view = RemoteView::new(cfg.peer_agent_ids.clone());
    let mut log = RunLog::new(Some(cfg.node_id), cfg.leader_id);
    let timeout = Duration::from_secs_f64(cfg.peer_timeout);

    for tick in 0..=cfg.step_budget {
        let snap = snapshot_from_agents(
            cfg.node_id,
            tick,
            wall_clock_now(),
            &world.local_agents(cfg),
        );
        let frame = match encode_snapshot(&snap) {
            Ok(f) => f,
            Err(e @ ProtocolError::NonFiniteValue { .. }) => {
                // Local state exploded; that is a simulation failure, not
                // a wire failure.
                log.mark_abort(tick, AbortClass::Simulation, e.to_string());
                break;
            }
            Err(e) => {
                log.mark_abort(tick, AbortClass::ProtocolViolation, e.to_string());
                break;
            }
        };
        if let Err(e) = sender.send_frame(&frame) {
            let (class, reason) = abort_reason(&e);
            log.mark_abort(tick, class, reason);
            break;
        }

        let frame = match receiver.recv_frame(timeout) {
            Ok(f) => f,
            Err(e) => {
                let (class, reason) = abort_reason(&e);
                log.mark_abort(tick, class, reason);
                break;
            }
        };
        let recv_ts = wall_clock_now();
        let peer = match decode_snapshot(&frame) {
            Ok(s) => s,
            Err(e) => {
                log.mark_abort(tick, AbortClass::ProtocolViolation, e.to_string());
                break;
            }
        };
        if peer.seq != tick {
            log.mark_abort(
                tick,
                AbortClass::ProtocolViolation,
                format!("lock-step desync: expected seq {tick}, got {}", peer.seq),
            );
            break;
        }
        match view.offer(&peer, recv_ts) {
            Ok(Some(agents)) => {
                push_delay_sample(
                    &mut log,
                    DelaySample::new(peer.seq, peer.send_timestamp, recv_ts),
                );
                log.received_seqs.push(peer.seq);
                world.apply_remote(cfg, &agents);
            }
            Ok(None) => {
                log.mark_abort(
                    tick,
                    AbortClass::ProtocolViolation,
                    format!("lock-step received duplicate seq {}", peer.seq),
                );
                break;
            }
            Err(e) => {
                log.mark_abort(tick, AbortClass::ProtocolViolation, e.to_string());
                break;
            }
        }

        log.record_tick(tick, world.time, world.local_agents(cfg));
        if tick < cfg.step_budget {
            if let Err(e) = world.step_local(cfg) {
                log.mark_abort(tick, AbortClass::Simulation, e.to_string());
                break;
            }
        }
    }

    let _ = sender.close();
    log.stale_discarded = view.stale_discarded();
    log.link = Some(sender.stats());
    log.impairment_drops = sender.dropped_frames();
    Ok(log)
}

enum RxEvent {
    Frame(Vec<u8>, f64),
    Closed,
}

/// Runs the free-run exchange: ticks follow this process's wall clock
/// (one dt of simulated time per dt of real time), snapshots go out every
/// `exchange_period`, and whatever peer state last arrived is held in the
/// meantime. A silent or dead peer does not stop the run; its agents just
/// stay frozen and staleness grows.
pub fn run_freerun(cfg: &NodeConfig, link: Link) -> Result<RunLog, NodeError> {
    cfg.validate()?;
    if cfg.exchange != ExchangeMode::FreeRun {
        return Err(NodeError::InvalidConfig(
            "run_freerun requires exchange mode free-run".to_string(),
        ));
    }
    let (mut sender, receiver) = link.split();
    let mut world = NodeWorld::init(cfg)?;
    let mut view = RemoteView::new(cfg.peer_agent_ids.clone());
    let mut log = RunLog::new(Some(cfg.node_id), cfg.leader_id);

    // Receiver thread: blocks on the link and timestamps frames the moment
    // they surface, so delay samples measure the transport, not this loop's
    // tick cadence.
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<RxEvent>();
    let rx_thread = {
        let stop = Arc::clone(&stop);
        let mut receiver = receiver;
        std::thread::spawn(move || loop {
            if stop.load(Ordering::Relaxed) {
                break;
            }
            match receiver.recv_frame(Duration::from_millis(50)) {
                Ok(frame) => {
                    let ts = wall_clock_now();
                    if tx.send(RxEvent::Frame(frame, ts)).is_err() {
                        break;
                    }
                }
                Err(TransportError::TimedOut(_)) => continue,
                Err(_) => {
                    let _ = tx.send(RxEvent::Closed);
                    break;
                }
            }
        })
    };

    let send_every = ((cfg.exchange_period / cfg.sim.dt).round() as u64).max(1);
    let tick_wall = Duration::from_secs_f64(cfg.sim.dt);
    let start = Instant::now();
    let mut send_seq: u64 = 0;
    let mut sending = true;
    let mut peer_gone_noted = false;

    'run: for tick in 0..=cfg.step_budget {
        // Pace to wall clock; when late, run flat out instead of sleeping.
        let target = start + tick_wall * (tick as u32);
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
        }

        // Drain every frame that arrived since the last tick.
        loop {
            match rx.try_recv() {
                Ok(RxEvent::Frame(frame, recv_ts)) => {
                    let snap = match decode_snapshot(&frame) {
                        Ok(s) => s,
                        Err(e) => {
                            log.mark_abort(tick, AbortClass::ProtocolViolation, e.to_string());
                            break 'run;
                        }
                    };
                    match view.offer(&snap, recv_ts) {
                        Ok(Some(agents)) => {
                            push_delay_sample(
                                &mut log,
                                DelaySample::new(snap.seq, snap.send_timestamp, recv_ts),
                            );
                            log.received_seqs.push(snap.seq);
                            world.apply_remote(cfg, &agents);
                        }
                        Ok(None) => {}
                        Err(e) => {
                            log.mark_abort(tick, AbortClass::ProtocolViolation, e.to_string());
                            break 'run;
                        }
                    }
                }
                Ok(RxEvent::Closed) => {
                    if !peer_gone_noted {
                        peer_gone_noted = true;
                        log.note(format!(
                            "peer link closed at tick {tick}; continuing with held remote state"
                        ));
                    }
                }
                Err(mpsc::TryRecvError::Empty) | Err(mpsc::TryRecvError::Disconnected) => break,
            }
        }

        if let Some(age) = view.staleness(wall_clock_now()) {
            log.staleness.push((tick, age));
        }

        log.record_tick(tick, world.time, world.local_agents(cfg));

        if sending && tick % send_every == 0 {
            let snap = snapshot_from_agents(
                cfg.node_id,
                send_seq,
                wall_clock_now(),
                &world.local_agents(cfg),
            );
            match encode_snapshot(&snap) {
                Ok(frame) => match sender.send_frame(&frame) {
                    Ok(()) => send_seq += 1,
                    Err(_) => {
                        sending = false;
                        log.note(format!("stopped sending at tick {tick}: peer gone"));
                    }
                },
                Err(e @ ProtocolError::NonFiniteValue { .. }) => {
                    log.mark_abort(tick, AbortClass::Simulation, e.to_string());
                    break 'run;
                }
                Err(e) => {
                    log.mark_abort(tick, AbortClass::ProtocolViolation, e.to_string());
                    break 'run;
                }
            }
        }

        if tick < cfg.step_budget {
            if let Err(e) = world.step_local(cfg) {
                log.mark_abort(tick, AbortClass::Simulation, e.to_string());
                break 'run;
            }
        }
    }

    // Our clock may run ahead of the peer's: frames already in flight
    // still count for loss accounting, so linger briefly before closing.
    let _ = sender.close();
    let linger_deadline = Instant::now() + Duration::from_secs(1);
    loop {
        match rx.recv_timeout(Duration::from_millis(200)) {
            Ok(RxEvent::Frame(frame, recv_ts)) => {
                if let Ok(snap) = decode_snapshot(&frame) {
                    if view.offer(&snap, recv_ts).ok().flatten().is_some() {
                        push_delay_sample(
                            &mut log,
                            DelaySample::new(snap.seq, snap.send_timestamp, recv_ts),
                        );
                        log.received_seqs.push(snap.seq);
                    }
                }
            }
            Ok(RxEvent::Closed) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
            Err(mpsc::RecvTimeoutError::Timeout) => break,
        }
        if Instant::now() >= linger_deadline {
            break;
        }
    }
    stop.store(true, Ordering::Relaxed);
    drop(rx);
    let _ = rx_thread.join();

    log.stale_discarded = view.stale_discarded();
    log.link = Some(sender.stats());
    log.impairment_drops = sender.dropped_frames();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Integrator;

    fn ids(v: &[u64]) -> Vec<AgentId> {
        v.iter().map(|&i| AgentId(i)).collect()
    }

    fn circle() -> LeaderPath {
        LeaderPath::Circle {
            center: Vec2::new(7.5, 10.0),
            radius: 6.0,
            angular_velocity: 0.05,
            phase: 0.0,
        }
    }

    fn config(node_id: u8) -> NodeConfig {
        let (local, peer, path) = if node_id == 0 {
            (ids(&[0, 1, 2]), ids(&[3, 4]), Some(circle()))
        } else {
            (ids(&[3, 4]), ids(&[0, 1, 2]), None)
        };
        NodeConfig {
            node_id,
            local_agent_ids: local,
            peer_agent_ids: peer,
            leader_id: AgentId(0),
            leader_path: path,
            swarm: SwarmParams::defaults(),
            sim: SimConfig {
                dt: 0.05,
                integrator: Integrator::SemiImplicitEuler,
                seed: 42,
                arena: Vec2::new(15.0, 20.0),
                min_separation: 1.0,
            },
            exchange: ExchangeMode::LockStep,
            exchange_period: 0.05,
            peer_timeout: 5.0,
            step_budget: 10,
        }
    }

    #[test]
    fn config_validation_catches_misassignments() {
        assert!(config(0).validate().is_ok());
        assert!(config(1).validate().is_ok());

        let mut bad = config(0);
        bad.peer_agent_ids = ids(&[2, 3]);
        assert!(matches!(
            bad.validate(),
            Err(NodeError::IdCollision(AgentId(2)))
        ));

        let mut bad = config(0);
        bad.leader_path = None;
        assert!(bad.validate().is_err());

        let mut bad = config(1);
        bad.leader_path = Some(circle());
        assert!(bad.validate().is_err());

        let mut bad = config(0);
        bad.leader_id = AgentId(77);
        assert!(bad.validate().is_err());

        let mut bad = config(0);
        bad.local_agent_ids = ids(&[2, 1, 0]);
        assert!(bad.validate().is_err());

        let mut bad = config(0);
        bad.step_budget = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn waypoint_paths_must_cover_the_run() {
        let mut cfg = config(0);
        cfg.leader_path = Some(LeaderPath::Waypoints {
            points: vec![(0.0, Vec2::ZERO), (0.2, Vec2::new(1.0, 0.0))],
        });
        // Budget 10 * dt 0.05 = 0.5 s > 0.2 s.
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("covers"));
        cfg.leader_path = Some(LeaderPath::Waypoints {
            points: vec![(0.0, Vec2::ZERO), (0.6, Vec2::new(1.0, 0.0))],
        });
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn both_nodes_derive_identical_follower_placement() {
        let w0 = NodeWorld::init(&config(0)).unwrap();
        let w1 = NodeWorld::init(&config(1)).unwrap();
        // Node 0 owns followers 1,2; node 1 owns 3,4. Regenerate the full
        // list and check each side took its slice.
        let all = init_random_nonoverlapping(4, Vec2::new(15.0, 20.0), 1.0, 42).unwrap();
        assert_eq!(w0.local_followers[0].pos, all[0]);
        assert_eq!(w0.local_followers[1].pos, all[1]);
        assert_eq!(w1.local_followers[0].pos, all[2]);
        assert_eq!(w1.local_followers[1].pos, all[3]);
        // Leader sits at its path start only on the owning node.
        assert!(w0.leader.is_some());
        assert!(w1.leader.is_none());
    }

    #[test]
    fn snapshot_mapping_roundtrips() {
        let agents = vec![
            AgentState::new(AgentId(0), Vec2::new(1.0, 2.0), Vec2::new(0.1, -0.2)),
            AgentState::new(AgentId(1), Vec2::new(3.0, 4.0), Vec2::new(0.0, 0.3)),
        ];
        let snap = snapshot_from_agents(0, 9, 123.5, &agents);
        let back = snapshot_to_agents(&snap, &ids(&[0, 1])).unwrap();
        assert_eq!(back, agents);
        let err = snapshot_to_agents(&snap, &ids(&[0, 1, 2])).unwrap_err();
        assert!(matches!(err, NodeError::ProtocolViolation(_)));
    }

    #[test]
    fn remote_view_counts_stale_frames() {
        let mut view = RemoteView::new(ids(&[3, 4]));
        let agents = vec![
            AgentState::at_rest(AgentId(3), Vec2::new(1.0, 1.0)),
            AgentState::at_rest(AgentId(4), Vec2::new(2.0, 2.0)),
        ];
        let s0 = snapshot_from_agents(1, 0, 100.0, &agents);
        let s2 = snapshot_from_agents(1, 2, 100.2, &agents);
        assert!(view.offer(&s0, 100.05).unwrap().is_some());
        assert!(view.offer(&s2, 100.26).unwrap().is_some());
        // Replay of an older seq is discarded and counted.
        assert!(view.offer(&s0, 100.3).unwrap().is_none());
        assert_eq!(view.stale_discarded(), 1);
        assert_eq!(view.last_seq(), Some(2));
        assert_eq!(view.last_recv_timestamp(), Some(100.26));
        assert!((view.staleness(100.7).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn merge_remote_rejects_locally_owned_ids() {
        let world = WorldState::new(
            0.0,
            AgentState::at_rest(AgentId(0), Vec2::ZERO),
            vec![AgentState::at_rest(AgentId(1), Vec2::new(1.0, 0.0))],
        );
        let local = ids(&[0, 1]);
        let incoming = vec![AgentState::at_rest(AgentId(1), Vec2::new(9.0, 9.0))];
        assert!(matches!(
            merge_remote(&world, &local, &incoming),
            Err(NodeError::IdCollision(AgentId(1)))
        ));

        // Legitimate remote agents upsert and keep order.
        let incoming = vec![
            AgentState::at_rest(AgentId(3), Vec2::new(5.0, 5.0)),
            AgentState::at_rest(AgentId(2), Vec2::new(4.0, 4.0)),
        ];
        let merged = merge_remote(&world, &local, &incoming).unwrap();
        let got: Vec<u64> = merged.followers.iter().map(|a| a.id.0).collect();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn leader_state_merges_into_view() {
        let cfg = config(1); // node 1 does not own the leader
        let mut world = NodeWorld::init(&cfg).unwrap();
        assert!(world.assemble().is_none());
        let leader = AgentState::new(AgentId(0), Vec2::new(13.5, 10.0), Vec2::new(0.0, 0.3));
        world.apply_remote(&cfg, &[leader]);
        let assembled = world.assemble().unwrap();
        assert_eq!(assembled.leader, leader);
    }
}
