//! Fixed-step time integration.

use super::{
    follower_accel, leader_state_at, AgentId, DynamicsError, Integrator, LeaderPath, SimConfig,
    SwarmParams, WorldState,
};
use crate::vec2::Vec2;

/// How the leader evolves across one step.
#[derive(Debug, Clone, Copy)]
pub enum LeaderDuringStep<'a> {
    /// Re-sample the path at the new time (and at stage times for RK4).
    /// Used by whichever process owns the leader.
    FollowPath(&'a LeaderPath),
    /// Keep the last known leader state. Used by processes that only see
    /// the leader through received snapshots.
    Hold,
}

/// Advances the whole world by one step of `cfg.dt`.
pub fn step(
    world: &WorldState,
    params: &SwarmParams,
    cfg: &SimConfig,
    path: &LeaderPath,
) -> Result<WorldState, DynamicsError> {
    step_agents(world, params, cfg, LeaderDuringStep::FollowPath(path), None)
}

/// Advances one step, integrating only the followers whose ids appear in
/// `only` (all of them when `None`). Unselected followers are carried over
/// unchanged, which is exactly the zero-order hold a distributed node
/// applies to its peer's agents between snapshots.
pub fn step_agents(
    world: &WorldState,
    params: &SwarmParams,
    cfg: &SimConfig,
    leader: LeaderDuringStep<'_>,
    only: Option<&[AgentId]>,
) -> Result<WorldState, DynamicsError> {
    params.validate()?;
    cfg.validate()?;
    world.validate()?;

    let selected: Vec<usize> = match only {
        None => (0..world.followers.len()).collect(),
        Some(ids) => {
            let mut sel = Vec::with_capacity(ids.len());
            for id in ids {
                if *id == world.leader.id {
                    return Err(DynamicsError::InvalidParams(format!(
                        "cannot select leader {id} for force integration"
                    )));
                }
                match world.followers.binary_search_by_key(id, |a| a.id) {
                    Ok(i) => sel.push(i),
                    Err(_) => {
                        return Err(DynamicsError::InvalidParams(format!(
                            "selected id {id} is not a follower of this world"
                        )))
                    }
                }
            }
            sel.sort_unstable();
            sel.dedup();
            sel
        }
    };

    match cfg.integrator {
        Integrator::SemiImplicitEuler => step_semi_implicit(world, params, cfg, leader, &selected),
        Integrator::Rk4 => step_rk4(world, params, cfg, leader, &selected),
    }
}

/// Semi-implicit (symplectic) Euler. Every acceleration is computed from
/// the frozen pre-step state before any agent moves, so the result is
/// independent of how agents are partitioned across processes.
fn step_semi_implicit(
    world: &WorldState,
    params: &SwarmParams,
    cfg: &SimConfig,
    leader: LeaderDuringStep<'_>,
    selected: &[usize],
) -> Result<WorldState, DynamicsError> {
    let mut accels = Vec::with_capacity(selected.len());
    for &i in selected {
        accels.push(follower_accel(world, i, params)?);
    }
    let mut followers = world.followers.clone();
    for (&i, a) in selected.iter().zip(&accels) {
        let f = &mut followers[i];
        f.vel += *a * cfg.dt;
        f.pos += f.vel * cfg.dt;
    }
    let time = world.time + cfg.dt;
    let leader = match leader {
        LeaderDuringStep::FollowPath(path) => leader_state_at(path, time, world.leader.id)?,
        LeaderDuringStep::Hold => world.leader,
    };
    Ok(WorldState {
        time,
        leader,
        followers,
    })
}

/// Classic RK4 on the selected followers' (position, velocity) pairs.
/// Unselected followers stay frozen at their pre-step state in every stage
/// evaluation; the leader is re-sampled at stage times when following a
/// path.
fn step_rk4(
    world: &WorldState,
    params: &SwarmParams,
    cfg: &SimConfig,
    leader: LeaderDuringStep<'_>,
    selected: &[usize],
) -> Result<WorldState, DynamicsError> {
    let dt = cfg.dt;
    let t0 = world.time;

    let leader_at = |t: f64| -> Result<super::AgentState, DynamicsError> {
        match leader {
            LeaderDuringStep::FollowPath(path) => leader_state_at(path, t, world.leader.id),
            LeaderDuringStep::Hold => Ok(world.leader),
        }
    };

    // State vector: (pos, vel) per selected follower.
    let y0: Vec<(Vec2, Vec2)> = selected
        .iter()
        .map(|&i| (world.followers[i].pos, world.followers[i].vel))
        .collect();

    let deriv = |t: f64, y: &[(Vec2, Vec2)]| -> Result<Vec<(Vec2, Vec2)>, DynamicsError> {
        let mut stage = world.clone();
        stage.time = t;
        stage.leader = leader_at(t)?;
        for (&i, (pos, vel)) in selected.iter().zip(y) {
            stage.followers[i].pos = *pos;
            stage.followers[i].vel = *vel;
        }
        let mut dy = Vec::with_capacity(selected.len());
        for (k, &i) in selected.iter().enumerate() {
            let a = follower_accel(&stage, i, params)?;
            dy.push((y[k].1, a));
        }
        Ok(dy)
    };

    let advance = |y: &[(Vec2, Vec2)], k: &[(Vec2, Vec2)], h: f64| -> Vec<(Vec2, Vec2)> {
        y.iter()
            .zip(k)
            .map(|((p, v), (dp, dv))| (*p + *dp * h, *v + *dv * h))
            .collect()
    };

    let k1 = deriv(t0, &y0)?;
    let k2 = deriv(t0 + dt / 2.0, &advance(&y0, &k1, dt / 2.0))?;
    let k3 = deriv(t0 + dt / 2.0, &advance(&y0, &k2, dt / 2.0))?;
    let k4 = deriv(t0 + dt, &advance(&y0, &k3, dt))?;

    let mut followers = world.followers.clone();
    for (k, &i) in selected.iter().enumerate() {
        let (p0, v0) = y0[k];
        let dp = k1[k].0 + 2.0 * k2[k].0 + 2.0 * k3[k].0 + k4[k].0;
        let dv = k1[k].1 + 2.0 * k2[k].1 + 2.0 * k3[k].1 + k4[k].1;
        followers[i].pos = p0 + dp * (dt / 6.0);
        followers[i].vel = v0 + dv * (dt / 6.0);
    }
    let time = t0 + dt;
    Ok(WorldState {
        time,
        leader: leader_at(time)?,
        followers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::AgentState;

    fn params() -> SwarmParams {
        SwarmParams::defaults()
    }

    fn cfg(dt: f64, integrator: Integrator) -> SimConfig {
        SimConfig {
            dt,
            integrator,
            ..SimConfig::default()
        }
    }

    fn circle() -> LeaderPath {
        LeaderPath::Circle {
            center: Vec2::new(7.5, 10.0),
            radius: 6.0,
            angular_velocity: 0.05,
            phase: 0.0,
        }
    }

    fn four_follower_world() -> WorldState {
        WorldState::new(
            0.0,
            AgentState::new(AgentId(0), Vec2::new(13.5, 10.0), Vec2::new(0.0, 0.3)),
            vec![
                AgentState::new(AgentId(1), Vec2::new(2.0, 3.0), Vec2::new(0.05, 0.0)),
                AgentState::new(AgentId(2), Vec2::new(8.0, 4.0), Vec2::new(0.0, -0.02)),
                AgentState::new(AgentId(3), Vec2::new(5.0, 12.0), Vec2::new(-0.03, 0.04)),
                AgentState::new(AgentId(4), Vec2::new(11.0, 14.0), Vec2::new(0.01, 0.01)),
            ],
        )
    }

    #[test]
    fn step_advances_time_and_leader() {
        let w0 = four_follower_world();
        let path = circle();
        let w1 = step(&w0, &params(), &cfg(0.05, Integrator::SemiImplicitEuler), &path).unwrap();
        assert_eq!(w1.time, 0.05);
        let expect = leader_state_at(&path, 0.05, AgentId(0)).unwrap();
        assert_eq!(w1.leader, expect);
        assert_eq!(w1.followers.len(), 4);
    }

    #[test]
    fn hold_keeps_leader_and_unselected_followers_frozen() {
        let w0 = four_follower_world();
        let only = [AgentId(1), AgentId(3)];
        let w1 = step_agents(
            &w0,
            &params(),
            &cfg(0.05, Integrator::SemiImplicitEuler),
            LeaderDuringStep::Hold,
            Some(&only),
        )
        .unwrap();
        assert_eq!(w1.leader, w0.leader);
        assert_eq!(w1.followers[1], w0.followers[1]); // id 2 held
        assert_eq!(w1.followers[3], w0.followers[3]); // id 4 held
        assert_ne!(w1.followers[0], w0.followers[0]); // id 1 stepped
        assert_ne!(w1.followers[2], w0.followers[2]); // id 3 stepped
    }

    #[test]
    fn partitioned_stepping_reproduces_the_full_step_bitwise() {
        // Two "nodes" each step their own followers from the same frozen
        // state; the union must equal the monolithic step exactly.
        let w0 = four_follower_world();
        let p = params();
        let c = cfg(0.05, Integrator::SemiImplicitEuler);
        let path = circle();
        let full = step(&w0, &p, &c, &path).unwrap();

        let a = step_agents(
            &w0,
            &p,
            &c,
            LeaderDuringStep::FollowPath(&path),
            Some(&[AgentId(1), AgentId(2)]),
        )
        .unwrap();
        let b = step_agents(
            &w0,
            &p,
            &c,
            LeaderDuringStep::Hold,
            Some(&[AgentId(3), AgentId(4)]),
        )
        .unwrap();

        assert_eq!(a.leader, full.leader);
        assert_eq!(a.followers[0], full.followers[0]);
        assert_eq!(a.followers[1], full.followers[1]);
        assert_eq!(b.followers[2], full.followers[2]);
        assert_eq!(b.followers[3], full.followers[3]);
    }

    #[test]
    fn selecting_the_leader_or_unknown_ids_is_an_error() {
        let w0 = four_follower_world();
        let p = params();
        let c = cfg(0.05, Integrator::SemiImplicitEuler);
        for bad in [AgentId(0), AgentId(99)] {
            let err = step_agents(&w0, &p, &c, LeaderDuringStep::Hold, Some(&[bad])).unwrap_err();
            assert!(matches!(err, DynamicsError::InvalidParams(_)));
        }
    }

    #[test]
    fn coincident_followers_abort_the_step() {
        let mut w0 = four_follower_world();
        w0.followers[1].pos = w0.followers[0].pos + Vec2::new(1e-12, 0.0);
        let err = step(
            &w0,
            &params(),
            &cfg(0.05, Integrator::SemiImplicitEuler),
            &circle(),
        )
        .unwrap_err();
        assert!(matches!(err, DynamicsError::CoincidentPair { .. }));
    }

    /// Integrates `world` for `n` steps with the given config.
    fn run(
        mut world: WorldState,
        p: &SwarmParams,
        c: &SimConfig,
        path: &LeaderPath,
        n: usize,
    ) -> WorldState {
        for _ in 0..n {
            world = step(&world, p, c, path).unwrap();
        }
        world
    }

    #[test]
    fn rk4_is_far_more_accurate_than_euler_at_equal_dt() {
        let p = params();
        let path = circle();
        let w0 = four_follower_world();

        // Reference: fine-step RK4.
        let reference = run(w0.clone(), &p, &cfg(0.001, Integrator::Rk4), &path, 10_000);
        let euler = run(
            w0.clone(),
            &p,
            &cfg(0.1, Integrator::SemiImplicitEuler),
            &path,
            100,
        );
        let rk4 = run(w0, &p, &cfg(0.1, Integrator::Rk4), &path, 100);

        let err = |w: &WorldState| -> f64 {
            w.followers
                .iter()
                .zip(&reference.followers)
                .map(|(a, b)| a.pos.distance(b.pos))
                .fold(0.0, f64::max)
        };
        let (e_euler, e_rk4) = (err(&euler), err(&rk4));
        assert!(
            e_rk4 < e_euler / 50.0,
            "rk4 error {e_rk4} vs euler error {e_euler}"
        );
    }
}
