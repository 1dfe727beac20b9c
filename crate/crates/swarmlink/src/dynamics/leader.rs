//! Prescribed leader motion.

use super::{AgentId, AgentState, DynamicsError};
use crate::vec2::Vec2;

/// The leader's path as an explicit function of time. The leader ignores
/// all forces; followers only ever see its sampled state.
#[derive(Debug, Clone, PartialEq)]
pub enum LeaderPath {
    /// Uniform circular motion:
    /// `pos(t) = center + radius * (cos(w t + phase), sin(w t + phase))`.
    Circle {
        center: Vec2,
        radius: f64,
        angular_velocity: f64,
        phase: f64,
    },
    /// Piecewise-linear interpolation through `(time, position)` samples
    /// with strictly increasing times. Velocity is the segment slope.
    /// Sampling outside the covered time range is an error.
    Waypoints { points: Vec<(f64, Vec2)> },
}

impl LeaderPath {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        match self {
            LeaderPath::Circle {
                center,
                radius,
                angular_velocity,
                phase,
            } => {
                let mut issues = Vec::new();
                if !center.is_finite() {
                    issues.push("circle center must be finite".to_string());
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    issues.push(format!("circle radius must be > 0, got {radius}"));
                }
                if !angular_velocity.is_finite() {
                    issues.push("angular_velocity must be finite".to_string());
                }
                if !phase.is_finite() {
                    issues.push("phase must be finite".to_string());
                }
                if issues.is_empty() {
                    Ok(())
                } else {
                    Err(DynamicsError::InvalidParams(issues.join("; ")))
                }
            }
            LeaderPath::Waypoints { points } => {
                if points.len() < 2 {
                    return Err(DynamicsError::InvalidParams(format!(
                        "waypoint path needs at least 2 points, got {}",
                        points.len()
                    )));
                }
                for (t, p) in points {
                    if !(t.is_finite() && p.is_finite()) {
                        return Err(DynamicsError::InvalidParams(
                            "waypoints must be finite".to_string(),
                        ));
                    }
                }
                for w in points.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(DynamicsError::InvalidParams(format!(
                            "waypoint times must be strictly increasing ({} then {})",
                            w[0].0, w[1].0
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Earliest and latest sampleable time; unbounded for circles.
    pub fn time_range(&self) -> (f64, f64) {
        match self {
            LeaderPath::Circle { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            LeaderPath::Waypoints { points } => {
                (points.first().map_or(0.0, |p| p.0), points.last().map_or(0.0, |p| p.0))
            }
        }
    }
}

/// Samples the leader state at time `t`.
pub fn leader_state_at(
    path: &LeaderPath,
    t: f64,
    id: AgentId,
) -> Result<AgentState, DynamicsError> {
    match path {
        LeaderPath::Circle {
            center,
            radius,
            angular_velocity,
            phase,
        } => {
            let theta = angular_velocity * t + phase;
            let (sin, cos) = theta.sin_cos();
            let pos = Vec2::new(center.x + radius * cos, center.y + radius * sin);
            let vel = Vec2::new(
                -radius * angular_velocity * sin,
                radius * angular_velocity * cos,
            );
            Ok(AgentState::new(id, pos, vel))
        }
        LeaderPath::Waypoints { points } => {
            let (start, end) = path.time_range();
            if !(start..=end).contains(&t) {
                return Err(DynamicsError::TimeOutOfRange { t, start, end });
            }
            // Find the segment containing t; the final instant belongs to
            // the last segment.
            let k = match points.iter().position(|(tk, _)| t < *tk) {
                Some(idx) => idx - 1,
                None => points.len() - 2,
            };
            let (t0, p0) = points[k];
            let (t1, p1) = points[k + 1];
            let vel = (p1 - p0) / (t1 - t0);
            let pos = p0 + vel * (t - t0);
            Ok(AgentState::new(id, pos, vel))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LEADER: AgentId = AgentId(0);

    #[test]
    fn circle_position_and_velocity() {
        let path = LeaderPath::Circle {
            center: Vec2::new(1.0, 2.0),
            radius: 3.0,
            angular_velocity: 0.5,
            phase: 0.0,
        };
        path.validate().unwrap();
        let s = leader_state_at(&path, 0.0, LEADER).unwrap();
        assert!((s.pos - Vec2::new(4.0, 2.0)).norm() < 1e-15);
        assert!((s.vel - Vec2::new(0.0, 1.5)).norm() < 1e-15);
        // Quarter turn: theta = pi/2 at t = pi.
        let s = leader_state_at(&path, std::f64::consts::PI, LEADER).unwrap();
        assert!((s.pos - Vec2::new(1.0, 5.0)).norm() < 1e-12);
        assert!((s.vel - Vec2::new(-1.5, 0.0)).norm() < 1e-12);
        // Speed is radius * |w| everywhere.
        for t in [0.3, 7.9, 123.4] {
            let s = leader_state_at(&path, t, LEADER).unwrap();
            assert!((s.vel.norm() - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn waypoints_interpolate_linearly() {
        let path = LeaderPath::Waypoints {
            points: vec![
                (0.0, Vec2::new(0.0, 0.0)),
                (2.0, Vec2::new(4.0, 0.0)),
                (3.0, Vec2::new(4.0, 5.0)),
            ],
        };
        path.validate().unwrap();
        let s = leader_state_at(&path, 1.0, LEADER).unwrap();
        assert!((s.pos - Vec2::new(2.0, 0.0)).norm() < 1e-15);
        assert!((s.vel - Vec2::new(2.0, 0.0)).norm() < 1e-15);
        let s = leader_state_at(&path, 2.5, LEADER).unwrap();
        assert!((s.pos - Vec2::new(4.0, 2.5)).norm() < 1e-15);
        assert!((s.vel - Vec2::new(0.0, 5.0)).norm() < 1e-15);
        // Endpoints are sampleable; the final instant uses the last segment.
        assert!(leader_state_at(&path, 0.0, LEADER).is_ok());
        let s = leader_state_at(&path, 3.0, LEADER).unwrap();
        assert!((s.pos - Vec2::new(4.0, 5.0)).norm() < 1e-15);
    }

    #[test]
    fn waypoints_reject_out_of_range_times() {
        let path = LeaderPath::Waypoints {
            points: vec![(1.0, Vec2::ZERO), (2.0, Vec2::new(1.0, 0.0))],
        };
        assert!(matches!(
            leader_state_at(&path, 0.5, LEADER),
            Err(DynamicsError::TimeOutOfRange { .. })
        ));
        assert!(matches!(
            leader_state_at(&path, 2.5, LEADER),
            Err(DynamicsError::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn waypoint_validation_catches_bad_paths() {
        assert!(LeaderPath::Waypoints {
            points: vec![(0.0, Vec2::ZERO)]
        }
        .validate()
        .is_err());
        assert!(LeaderPath::Waypoints {
            points: vec![(0.0, Vec2::ZERO), (0.0, Vec2::new(1.0, 0.0))]
        }
        .validate()
        .is_err());
        assert!(LeaderPath::Circle {
            center: Vec2::ZERO,
            radius: 0.0,
            angular_velocity: 1.0,
            phase: 0.0,
        }
        .validate()
        .is_err());
    }
}
