//! Scenario files: one TOML document describing a whole session.
//!
//! Both processes of a distributed run load the same file; command-line
//! flags only choose the node id, transport role, and output paths. That
//! keeps every shared quantity — agent layout, constants, seeds, budgets —
//! in exactly one place, so the peers cannot drift apart.
//!
//! Agent identity convention: the leader is always id 0; node 0's
//! followers are ids `1..=n0`, node 1's are `n0+1..=n0+n1`, where
//! `agents_per_node = [n0, n1]` counts followers only.

use crate::dynamics::{
    init_random_nonoverlapping, leader_state_at, AgentId, AgentState, DynamicsError, LeaderPath,
    SimConfig, SwarmParams, WorldState,
};
use crate::node::{ExchangeMode, NodeConfig};
use crate::transport::ImpairmentConfig;
use crate::vec2::Vec2;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// Number of integration steps; every run records `step_budget + 1`
    /// ticks including the initial state.
    pub step_budget: u64,
    pub nodes: NodesSection,
    pub leader_path: PathSection,
    pub swarm: SwarmParams,
    pub sim: SimConfig,
    #[serde(default)]
    pub exchange: ExchangeSection,
    /// Applies to the in-process loopback channel only; ignored by real
    /// TCP runs.
    #[serde(default)]
    pub impairment: ImpairmentConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodesSection {
    /// Followers owned by each node, in node-id order. The leader is not
    /// counted here; `leader_node` places it.
    pub agents_per_node: Vec<u32>,
    pub leader_node: u8,
}

/// Leader path section. `kind` selects the variant; the remaining keys
/// are validated against it (a circle takes `center`/`radius`/
/// `angular_velocity`/`phase`, waypoints take `points` rows of
/// `[time, x, y]`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub kind: String,
    pub center: Option<Vec2>,
    pub radius: Option<f64>,
    pub angular_velocity: Option<f64>,
    pub phase: Option<f64>,
    pub points: Option<Vec<(f64, f64, f64)>>,
}

impl PathSection {
    pub fn to_leader_path(&self) -> Result<LeaderPath, String> {
        match self.kind.as_str() {
            "circle" => {
                if self.points.is_some() {
                    return Err("leader_path.points does not apply to kind = \"circle\"".into());
                }
                let mut missing = Vec::new();
                if self.center.is_none() {
                    missing.push("center");
                }
                if self.radius.is_none() {
                    missing.push("radius");
                }
                if self.angular_velocity.is_none() {
                    missing.push("angular_velocity");
                }
                if !missing.is_empty() {
                    return Err(format!(
                        "leader_path kind \"circle\" is missing {}",
                        missing.join(", ")
                    ));
                }
                Ok(LeaderPath::Circle {
                    center: self.center.unwrap(),
                    radius: self.radius.unwrap(),
                    angular_velocity: self.angular_velocity.unwrap(),
                    phase: self.phase.unwrap_or(0.0),
                })
            }
            "waypoints" => {
                for (key, present) in [
                    ("center", self.center.is_some()),
                    ("radius", self.radius.is_some()),
                    ("angular_velocity", self.angular_velocity.is_some()),
                    ("phase", self.phase.is_some()),
                ] {
                    if present {
                        return Err(format!(
                            "leader_path.{key} does not apply to kind = \"waypoints\""
                        ));
                    }
                }
                let points = self
                    .points
                    .as_ref()
                    .ok_or("leader_path kind \"waypoints\" is missing points")?;
                Ok(LeaderPath::Waypoints {
                    points: points
                        .iter()
                        .map(|(t, x, y)| (*t, Vec2::new(*x, *y)))
                        .collect(),
                })
            }
            other => Err(format!(
                "unknown leader_path.kind {other:?} (expected \"circle\" or \"waypoints\")"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExchangeSection {
    pub mode: ExchangeMode,
    /// Free-run snapshot send period, seconds of simulated time.
    pub period: f64,
    /// Lock-step wait bound / TCP read timeout, seconds.
    pub peer_timeout: f64,
}

impl Default for ExchangeSection {
    fn default() -> Self {
        ExchangeSection {
            mode: ExchangeMode::LockStep,
            period: 0.05,
            peer_timeout: 5.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Parses and fully validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let spec: ScenarioSpec = toml::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

/// Loads, parses, and fully validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut issues = Vec::new();
        if self.name.trim().is_empty() {
            issues.push("name must not be empty".to_string());
        }
        if self.step_budget == 0 {
            issues.push("step_budget must be >= 1".to_string());
        }
        if self.nodes.agents_per_node.len() != 2 {
            issues.push(format!(
                "agents_per_node must list exactly 2 nodes, got {}",
                self.nodes.agents_per_node.len()
            ));
        }
        if self.nodes.leader_node > 1 {
            issues.push(format!(
                "leader_node must be 0 or 1, got {}",
                self.nodes.leader_node
            ));
        }
        if let Err(e) = self.swarm.validate() {
            issues.push(e.to_string());
        }
        if let Err(e) = self.sim.validate() {
            issues.push(e.to_string());
        }
        match self.leader_path.to_leader_path() {
            Err(e) => issues.push(e),
            Ok(path) => {
                if let Err(e) = path.validate() {
                    issues.push(e.to_string());
                } else {
                    let horizon = self.step_budget as f64 * self.sim.dt;
                    let (start, end) = path.time_range();
                    if start > 0.0 || end < horizon {
                        issues.push(format!(
                            "leader path covers [{start}, {end}] s but the run lasts \
                             [0, {horizon}] s"
                        ));
                    }
                }
            }
        }
        if !(self.exchange.period.is_finite() && self.exchange.period > 0.0) {
            issues.push(format!(
                "exchange.period must be > 0, got {}",
                self.exchange.period
            ));
        }
        if !(self.exchange.peer_timeout.is_finite() && self.exchange.peer_timeout > 0.0) {
            issues.push(format!(
                "exchange.peer_timeout must be > 0, got {}",
                self.exchange.peer_timeout
            ));
        }
        if let Err(e) = self.impairment.validate() {
            issues.push(e.to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(issues.join("; ")))
        }
    }

    /// The leader's fixed id.
    pub fn leader_id(&self) -> AgentId {
        AgentId(0)
    }

    pub fn follower_count(&self) -> u64 {
        self.nodes.agents_per_node.iter().map(|&n| n as u64).sum()
    }

    /// Ids owned by `node`, ascending (leader included where it lives).
    pub fn node_agent_ids(&self, node: u8) -> Vec<AgentId> {
        let n0 = u64::from(self.nodes.agents_per_node[0]);
        let n1 = u64::from(self.nodes.agents_per_node[1]);
        let mut ids = Vec::new();
        if self.nodes.leader_node == node {
            ids.push(AgentId(0));
        }
        let (from, to) = if node == 0 { (1, n0) } else { (n0 + 1, n0 + n1) };
        ids.extend((from..=to).map(AgentId));
        ids
    }

    pub fn leader_path(&self) -> Result<LeaderPath, ScenarioError> {
        self.leader_path.to_leader_path().map_err(ScenarioError::Invalid)
    }

    /// Builds the per-process config for one node of this session.
    pub fn node_config(&self, node_id: u8) -> Result<NodeConfig, ScenarioError> {
        self.validate()?;
        if node_id > 1 {
            return Err(ScenarioError::Invalid(format!(
                "node_id must be 0 or 1, got {node_id}"
            )));
        }
        let path = self.leader_path()?;
        let owns_leader = self.nodes.leader_node == node_id;
        Ok(NodeConfig {
            node_id,
            local_agent_ids: self.node_agent_ids(node_id),
            peer_agent_ids: self.node_agent_ids(1 - node_id),
            leader_id: self.leader_id(),
            leader_path: owns_leader.then_some(path),
            swarm: self.swarm,
            sim: self.sim,
            exchange: self.exchange.mode,
            exchange_period: self.exchange.period,
            peer_timeout: self.exchange.peer_timeout,
            step_budget: self.step_budget,
        })
    }

    /// The full-system initial state used by monolithic runs: leader at
    /// its path start, followers at the seeded placement, everything at
    /// rest.
    pub fn initial_world(&self) -> Result<WorldState, ScenarioError> {
        self.validate()?;
        let path = self.leader_path()?;
        let leader = leader_state_at(&path, 0.0, self.leader_id())
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let n = self.follower_count() as usize;
        let points =
            init_random_nonoverlapping(n, self.sim.arena, self.sim.min_separation, self.sim.seed)
                .map_err(|e: DynamicsError| ScenarioError::Invalid(e.to_string()))?;
        let followers = points
            .iter()
            .enumerate()
            .map(|(k, p)| AgentState::at_rest(AgentId(k as u64 + 1), *p))
            .collect();
        Ok(WorldState::new(0.0, leader, followers))
    }
}
