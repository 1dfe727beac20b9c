//! Seeded random initial placement.

use super::DynamicsError;
use crate::vec2::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rejection-sampling attempts allowed per point before giving up.
pub const PLACEMENT_RETRY_BUDGET: u32 = 10_000;

/// Draws `n` points uniformly from `[0, arena.x] x [0, arena.y]` such that
/// every pair is at least `min_separation` apart. Fully determined by
/// `seed`: every caller with the same arguments gets the same points in the
/// same order, which is what lets distributed nodes derive identical
/// initial conditions without exchanging them.
pub fn init_random_nonoverlapping(
    n: usize,
    arena: Vec2,
    min_separation: f64,
    seed: u64,
) -> Result<Vec<Vec2>, DynamicsError> {
    if !(arena.x.is_finite() && arena.x > 0.0 && arena.y.is_finite() && arena.y > 0.0) {
        return Err(DynamicsError::InvalidParams(format!(
            "arena must have positive extent, got {} x {}",
            arena.x, arena.y
        )));
    }
    if !(min_separation.is_finite() && min_separation > 0.0) {
        return Err(DynamicsError::InvalidParams(format!(
            "min_separation must be > 0, got {min_separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Vec2> = Vec::with_capacity(n);
    while points.len() < n {
        let mut attempts = 0u32;
        loop {
            let candidate = Vec2::new(
                rng.gen_range(0.0..=arena.x),
                rng.gen_range(0.0..=arena.y),
            );
            if points
                .iter()
                .all(|p| p.distance(candidate) >= min_separation)
            {
                points.push(candidate);
                break;
            }
            attempts += 1;
            if attempts >= PLACEMENT_RETRY_BUDGET {
                return Err(DynamicsError::PlacementInfeasible {
                    placed: points.len(),
                    attempts,
                });
            }
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_is_deterministic_per_seed() {
        let arena = Vec2::new(15.0, 20.0);
        let a = init_random_nonoverlapping(20, arena, 1.0, 42).unwrap();
        let b = init_random_nonoverlapping(20, arena, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let c = init_random_nonoverlapping(20, arena, 1.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn placement_respects_bounds_and_separation() {
        let arena = Vec2::new(10.0, 6.0);
        let pts = init_random_nonoverlapping(25, arena, 0.8, 7).unwrap();
        assert_eq!(pts.len(), 25);
        for p in &pts {
            assert!((0.0..=arena.x).contains(&p.x));
            assert!((0.0..=arena.y).contains(&p.y));
        }
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                assert!(pts[i].distance(pts[j]) >= 0.8);
            }
        }
    }

    #[test]
    fn prefix_stability_across_counts() {
        // Growing n keeps earlier points unchanged: node configs that only
        // differ in how many points they consume still agree on shared ones.
        let arena = Vec2::new(15.0, 20.0);
        let small = init_random_nonoverlapping(5, arena, 1.0, 42).unwrap();
        let big = init_random_nonoverlapping(12, arena, 1.0, 42).unwrap();
        assert_eq!(&big[..5], &small[..]);
    }

    #[test]
    fn infeasible_packing_reports_progress() {
        // 50 points at >= 5 m separation cannot fit a 4 x 4 box.
        let err = init_random_nonoverlapping(50, Vec2::new(4.0, 4.0), 5.0, 1).unwrap_err();
        match err {
            DynamicsError::PlacementInfeasible { placed, attempts } => {
                assert!(placed >= 1);
                assert_eq!(attempts, PLACEMENT_RETRY_BUDGET);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn zero_points_is_fine() {
        assert!(init_random_nonoverlapping(0, Vec2::new(1.0, 1.0), 0.5, 0)
            .unwrap()
            .is_empty());
    }
}
