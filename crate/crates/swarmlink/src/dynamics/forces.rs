//! Force and potential kernels for the follower dynamics.
//!
//! A follower i obeys
//!
//! ```text
//! dv_i/dt = (alpha - beta*|v_i|^2) v_i            self-propulsion / drag
//!           - grad U_i                            leader well + pair terms
//!           + c0 * sum_{j != i} (v_j - v_i)       alignment
//! ```
//!
//! with `U_i = cl/2 |x_i - y|^2 + sum_{j != i} f(|x_i - x_j|)` where `y` is
//! the leader position and `f` the pair potential below. The leader itself
//! feels no forces; it moves on a prescribed path.

use super::{AgentId, DynamicsError, SwarmParams, WorldState};
use crate::vec2::Vec2;

/// Sign of the exponent arguments in the pair kernel
/// `f(r) = cr*exp(sign*r/lr) - ca*exp(sign*r/la)`.
///
/// -1.0 gives decaying exponentials: short-range repulsion, long-range
/// attraction that fades with distance, and a finite equilibrium spacing.
/// The growing variant (+1.0) makes the attraction term diverge with
/// distance and has no bounded-swarm equilibrium; the kernel is
/// parameterized on the sign internally so both variants stay testable.
pub const PAIR_EXPONENT_SIGN: f64 = -1.0;

/// Two agents closer than this (metres) make the pair force direction
/// meaningless; stepping aborts rather than producing garbage.
pub const COINCIDENT_EPSILON: f64 = 1e-9;

fn pair_potential_with_sign(r: f64, p: &SwarmParams, sign: f64) -> f64 {
    p.cr * (sign * r / p.lr).exp() - p.ca * (sign * r / p.la).exp()
}

/// Scalar -f'(r) with the same sign parameterization; positive values push
/// the pair apart.
fn pair_force_scalar_with_sign(r: f64, p: &SwarmParams, sign: f64) -> f64 {
    -sign * (p.cr / p.lr) * (sign * r / p.lr).exp()
        + sign * (p.ca / p.la) * (sign * r / p.la).exp()
}

/// Pair potential `f(r)` at separation `r`.
pub fn pair_potential(r: f64, p: &SwarmParams) -> f64 {
    pair_potential_with_sign(r, p, PAIR_EXPONENT_SIGN)
}

/// Radial force magnitude `-f'(r)`; positive = repulsive.
pub fn pair_force_scalar(r: f64, p: &SwarmParams) -> f64 {
    pair_force_scalar_with_sign(r, p, PAIR_EXPONENT_SIGN)
}

/// Separation at which the pair force vanishes:
/// `r* = ln((cr*la)/(ca*lr)) / (1/lr - 1/la)`.
///
/// Returns `None` when the coefficients admit no positive equilibrium
/// (e.g. pure repulsion, or equal length scales).
pub fn equilibrium_spacing(p: &SwarmParams) -> Option<f64> {
    if p.cr <= 0.0 || p.ca <= 0.0 || p.lr <= 0.0 || p.la <= 0.0 || p.lr == p.la {
        return None;
    }
    let r = ((p.cr * p.la) / (p.ca * p.lr)).ln() / (1.0 / p.lr - 1.0 / p.la);
    (r.is_finite() && r > 0.0).then_some(r)
}

/// Force exerted on the agent at `xi` by the agent at `xj`:
/// `-f'(r) * (xi - xj)/r`.
///
/// Exactly antisymmetric under argument exchange, because both directions
/// compute the same scalar factor and only the displacement changes sign.
pub fn pair_interaction_force(
    xi: Vec2,
    xj: Vec2,
    p: &SwarmParams,
) -> Result<Vec2, DynamicsError> {
    let d = xi - xj;
    let r = d.norm();
    if r < COINCIDENT_EPSILON {
        return Err(DynamicsError::CoincidentAgents { distance: r });
    }
    let scale = pair_force_scalar(r, p) / r;
    Ok(Vec2::new(d.x * scale, d.y * scale))
}

/// Quadratic-well pull toward the leader: `-cl * (xi - y)`.
pub fn leader_attraction_force(xi: Vec2, leader_pos: Vec2, p: &SwarmParams) -> Vec2 {
    -p.cl * (xi - leader_pos)
}

/// `(alpha - beta*|v|^2) * v`.
pub fn self_propulsion_accel(v: Vec2, p: &SwarmParams) -> Vec2 {
    (p.alpha - p.beta * v.norm_sq()) * v
}

/// `c0 * sum_j (v_j - v_i)` over the supplied neighbour velocities.
pub fn alignment_accel(vi: Vec2, others: &[Vec2], p: &SwarmParams) -> Vec2 {
    let mut sum = Vec2::ZERO;
    for vj in others {
        sum += *vj - vi;
    }
    p.c0 * sum
}

fn follower_or_err(world: &WorldState, i: usize) -> Result<&super::AgentState, DynamicsError> {
    world.followers.get(i).ok_or_else(|| {
        DynamicsError::InvalidParams(format!(
            "follower index {i} out of range ({} followers)",
            world.followers.len()
        ))
    })
}

fn coincident_with(a: AgentId, b: AgentId, e: DynamicsError) -> DynamicsError {
    match e {
        DynamicsError::CoincidentAgents { distance } => {
            DynamicsError::CoincidentPair { a, b, distance }
        }
        other => other,
    }
}

/// Potential energy of follower `i` (index into `world.followers`): the
/// leader well plus all pair terms involving i.
///
/// Kept as a standalone scalar route so force code can be checked against
/// finite differences of an independent expression.
pub fn potential_energy(
    world: &WorldState,
    i: usize,
    p: &SwarmParams,
) -> Result<f64, DynamicsError> {
    let me = follower_or_err(world, i)?;
    let mut u = 0.5 * p.cl * (me.pos - world.leader.pos).norm_sq();
    for (j, other) in world.followers.iter().enumerate() {
        if j == i {
            continue;
        }
        let r = (me.pos - other.pos).norm();
        if r < COINCIDENT_EPSILON {
            return Err(DynamicsError::CoincidentPair {
                a: me.id,
                b: other.id,
                distance: r,
            });
        }
        u += pair_potential(r, p);
    }
    Ok(u)
}

/// `-grad U_i` for follower `i`: leader attraction plus the pair forces,
/// accumulated in ascending follower order.
pub fn potential_force(
    world: &WorldState,
    i: usize,
    p: &SwarmParams,
) -> Result<Vec2, DynamicsError> {
    let me = follower_or_err(world, i)?;
    let mut f = leader_attraction_force(me.pos, world.leader.pos, p);
    for (j, other) in world.followers.iter().enumerate() {
        if j == i {
            continue;
        }
        f += pair_interaction_force(me.pos, other.pos, p)
            .map_err(|e| coincident_with(me.id, other.id, e))?;
    }
    Ok(f)
}

/// Total acceleration of follower `i` from the frozen state in `world`.
pub fn follower_accel(
    world: &WorldState,
    i: usize,
    p: &SwarmParams,
) -> Result<Vec2, DynamicsError> {
    let me = follower_or_err(world, i)?;
    let mut neighbour_vels: Vec<Vec2> =
        Vec::with_capacity(world.followers.len() + usize::from(p.align_with_leader));
    for (j, other) in world.followers.iter().enumerate() {
        if j != i {
            neighbour_vels.push(other.vel);
        }
    }
    if p.align_with_leader {
        neighbour_vels.push(world.leader.vel);
    }
    let mut a = self_propulsion_accel(me.vel, p);
    a += potential_force(world, i, p)?;
    a += alignment_accel(me.vel, &neighbour_vels, p);
    Ok(a)
}
