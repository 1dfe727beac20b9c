//! Swarm dynamics: a leader moving on a prescribed path and followers
//! governed by self-propulsion, a quadratic leader-attraction well, a
//! short-range-repulsive / long-range-attractive pair interaction, and
//! velocity alignment.

mod forces;
mod init;
mod integrate;
mod leader;

pub use forces::{
    alignment_accel, equilibrium_spacing, follower_accel, leader_attraction_force,
    pair_force_scalar, pair_interaction_force, pair_potential, potential_energy,
    potential_force, self_propulsion_accel, COINCIDENT_EPSILON, PAIR_EXPONENT_SIGN,
};
pub use init::{init_random_nonoverlapping, PLACEMENT_RETRY_BUDGET};
pub use integrate::{step, step_agents, LeaderDuringStep};
pub use leader::{leader_state_at, LeaderPath};

use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Stable identity of an agent, unique within a session and shared by every
/// node of a distributed run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Kinematic state of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub pos: Vec2,
    pub vel: Vec2,
}

impl AgentState {
    pub fn new(id: AgentId, pos: Vec2, vel: Vec2) -> Self {
        AgentState { id, pos, vel }
    }

    pub fn at_rest(id: AgentId, pos: Vec2) -> Self {
        AgentState::new(id, pos, Vec2::ZERO)
    }

    pub fn speed(&self) -> f64 {
        self.vel.norm()
    }
}

/// Interaction and propulsion coefficients for the follower dynamics.
///
/// `defaults()` returns the constants used throughout the reference
/// experiments: c0 = 0.01, cl = 0.005, cr = 9, ca = 5, lr = 2, la = 12,
/// alpha = 0, beta = 0.2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmParams {
    /// Velocity alignment gain (s^-1).
    pub c0: f64,
    /// Leader attraction spring constant (s^-2).
    pub cl: f64,
    /// Pair repulsion amplitude.
    pub cr: f64,
    /// Pair attraction amplitude.
    pub ca: f64,
    /// Repulsion length scale (m).
    pub lr: f64,
    /// Attraction length scale (m).
    pub la: f64,
    /// Linear self-propulsion gain.
    pub alpha: f64,
    /// Cubic drag gain.
    pub beta: f64,
    /// Whether the leader's velocity participates in the alignment sum.
    /// Followers always align with each other; the leader is excluded by
    /// default so its prescribed motion is injected only through the
    /// attraction well.
    #[serde(default)]
    pub align_with_leader: bool,
}

impl SwarmParams {
    pub fn defaults() -> Self {
        SwarmParams {
            c0: 0.01,
            cl: 0.005,
            cr: 9.0,
            ca: 5.0,
            lr: 2.0,
            la: 12.0,
            alpha: 0.0,
            beta: 0.2,
            align_with_leader: false,
        }
    }

    /// Checks coefficient sanity. All issues are reported at once.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let mut issues = Vec::new();
        for (name, v) in [
            ("c0", self.c0),
            ("cl", self.cl),
            ("cr", self.cr),
            ("ca", self.ca),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !v.is_finite() {
                issues.push(format!("{name} must be finite, got {v}"));
            }
        }
        for (name, v) in [("c0", self.c0), ("cl", self.cl), ("cr", self.cr), ("ca", self.ca)] {
            if v < 0.0 {
                issues.push(format!("{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [("lr", self.lr), ("la", self.la)] {
            if !(v.is_finite() && v > 0.0) {
                issues.push(format!("{name} must be a positive length, got {v}"));
            }
        }
        if self.beta < 0.0 {
            issues.push(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.lr == self.la {
            issues.push(format!(
                "lr and la must differ (both are {}); equal length scales leave \
                 the pair force with no equilibrium spacing",
                self.lr
            ));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(DynamicsError::InvalidParams(issues.join("; ")))
        }
    }
}

impl Default for SwarmParams {
    fn default() -> Self {
        SwarmParams::defaults()
    }
}

/// Time integration scheme.
///
/// `SemiImplicitEuler` evaluates every acceleration from the frozen
/// pre-step state, then updates v before x. Because no intra-step value
/// depends on another agent's already-updated state, a run partitioned
/// across nodes that exchange pre-step snapshots reproduces the monolithic
/// trajectory bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    SemiImplicitEuler,
    /// Classic fourth-order Runge-Kutta. Higher accuracy for single-process
    /// runs; distributed runs using it diverge from monolithic ones at
    /// O(dt^3) per step because stage states of remote agents are frozen.
    Rk4,
}

/// Global simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Fixed step size (s).
    pub dt: f64,
    pub integrator: Integrator,
    /// Seed for initial-placement randomness.
    pub seed: u64,
    /// Initial-placement region: positions are drawn from
    /// [0, arena.x] x [0, arena.y]. The plane itself is unbounded; agents
    /// may leave this region freely once the run starts.
    pub arena: Vec2,
    /// Minimum pairwise separation of initial placements (m).
    pub min_separation: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let mut issues = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            issues.push(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.arena.x.is_finite() && self.arena.x > 0.0)
            || !(self.arena.y.is_finite() && self.arena.y > 0.0)
        {
            issues.push(format!(
                "arena must have positive extent, got {} x {}",
                self.arena.x, self.arena.y
            ));
        }
        if !(self.min_separation.is_finite() && self.min_separation > 0.0) {
            issues.push(format!(
                "min_separation must be > 0, got {}",
                self.min_separation
            ));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(DynamicsError::InvalidParams(issues.join("; ")))
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.05,
            integrator: Integrator::SemiImplicitEuler,
            seed: 0,
            arena: Vec2::new(15.0, 20.0),
            min_separation: 1.0,
        }
    }
}

/// Complete simulation state at an instant: one leader plus all followers,
/// followers kept sorted by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub leader: AgentState,
    pub followers: Vec<AgentState>,
}

impl WorldState {
    /// Builds a world, sorting followers by id.
    pub fn new(time: f64, leader: AgentState, mut followers: Vec<AgentState>) -> Self {
        followers.sort_by_key(|a| a.id);
        WorldState {
            time,
            leader,
            followers,
        }
    }

    /// Checks structural invariants: follower ids strictly ascending and
    /// distinct from the leader's, all values finite.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let mut issues = Vec::new();
        if !self.time.is_finite() {
            issues.push(format!("time must be finite, got {}", self.time));
        }
        if !(self.leader.pos.is_finite() && self.leader.vel.is_finite()) {
            issues.push(format!("leader {} has non-finite state", self.leader.id));
        }
        for w in self.followers.windows(2) {
            if w[0].id >= w[1].id {
                issues.push(format!(
                    "follower ids must be strictly ascending ({} then {})",
                    w[0].id, w[1].id
                ));
            }
        }
        for a in &self.followers {
            if a.id == self.leader.id {
                issues.push(format!("follower id {} collides with the leader", a.id));
            }
            if !(a.pos.is_finite() && a.vel.is_finite()) {
                issues.push(format!("agent {} has non-finite state", a.id));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(DynamicsError::InvalidParams(issues.join("; ")))
        }
    }

    pub fn follower(&self, id: AgentId) -> Option<&AgentState> {
        self.followers
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.followers[i])
    }

    /// Leader followed by all followers, ascending id order within each group.
    pub fn all_agents(&self) -> impl Iterator<Item = &AgentState> {
        std::iter::once(&self.leader).chain(self.followers.iter())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error("agents are coincident (separation {distance:.3e} m)")]
    CoincidentAgents { distance: f64 },
    #[error("agents {a} and {b} are coincident (separation {distance:.3e} m)")]
    CoincidentPair {
        a: AgentId,
        b: AgentId,
        distance: f64,
    },
    #[error(
        "could not place point {placed} with the required separation after \
         {attempts} attempts; arena too crowded"
    )]
    PlacementInfeasible { placed: usize, attempts: u32 },
    #[error("time {t} outside the waypoint range [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}
