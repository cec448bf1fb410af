//! Seeded Poisson arrivals per lane, RV/HV kind draws and lane movements.
//!
//! Every random quantity comes from a ChaCha8 stream selected by
//! `(seed, stream id)` and read at a fixed word position, so a lane's arrivals
//! do not depend on how many other lanes exist and kind draws can be made in
//! any order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{VehicleId, VehicleKind};
use crate::topology::{Approach, MovementDirection, NetworkSpec};

const KIND_STREAM: u64 = 1 << 40;
const ROUTE_STREAM: u64 = 2 << 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemandError {
    #[error("intersection {intersection}: per-lane rate must be positive and finite, got {rate}")]
    InvalidRate { intersection: usize, rate: f64 },
    #[error("RV penetration must lie in [0, 1], got {0}")]
    InvalidPenetration(f64),
    #[error("intersection {intersection}, approach {approach:?}: movement shares sum to {sum}")]
    InvalidShares { intersection: usize, approach: Approach, sum: f64 },
    #[error("intersection {intersection} has no lane {lane}")]
    UnmappedLane { intersection: usize, lane: usize },
    #[error("demand covers {expected} intersections but the network has {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovementShare {
    pub straight: f64,
    pub left: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandSpec {
    /// Vehicles per hour per lane, one entry per intersection.
    pub per_lane_rate: Vec<f64>,
    /// Per intersection, per approach (N, E, S, W); `None` for approaches
    /// without lanes.
    pub movement_shares: Vec<[Option<MovementShare>; 4]>,
    pub lane_movements: Vec<Vec<MovementDirection>>,
    pub rv_penetration: f64,
    pub seed: u64,
}

impl DemandSpec {
    /// Table rates and lane mapping of `net`.
    pub fn from_network(net: &NetworkSpec, rv_penetration: f64, seed: u64) -> Result<Self, DemandError> {
        let spec = Self {
            per_lane_rate: net.intersections.iter().map(|i| i.demand_veh_per_hr).collect(),
            movement_shares: net
                .intersections
                .iter()
                .map(|i| Approach::ALL.map(|a| i.movement_shares(a).map(|(straight, left)| MovementShare { straight, left })))
                .collect(),
            lane_movements: net.intersections.iter().map(|i| i.lane_movements.clone()).collect(),
            rv_penetration,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DemandError> {
        if !(0.0..=1.0).contains(&self.rv_penetration) {
            return Err(DemandError::InvalidPenetration(self.rv_penetration));
        }
        if self.movement_shares.len() != self.per_lane_rate.len() || self.lane_movements.len() != self.per_lane_rate.len() {
            return Err(DemandError::ShapeMismatch {
                expected: self.per_lane_rate.len(),
                actual: self.lane_movements.len().min(self.movement_shares.len()),
            });
        }
        for (ix, rate) in self.per_lane_rate.iter().enumerate() {
            if !(*rate > 0.0 && rate.is_finite()) {
                return Err(DemandError::InvalidRate { intersection: ix, rate: *rate });
            }
            for (approach, share) in Approach::ALL.iter().zip(&self.movement_shares[ix]) {
                if let Some(s) = share {
                    let sum = s.straight + s.left;
                    if (sum - 1.0).abs() > 1e-9 || s.straight < 0.0 || s.left < 0.0 {
                        return Err(DemandError::InvalidShares { intersection: ix, approach: *approach, sum });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn with_penetration(&self, rv_penetration: f64) -> Result<Self, DemandError> {
        let spec = Self { rv_penetration, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn lane_stream_id(intersection: usize, lane: usize) -> u64 {
    (((intersection as u64) << 16) | lane as u64) + 1
}

/// Uniform [0, 1) draw at position `index` of a stream.
fn draw_at(seed: u64, stream_id: u64, index: u64) -> f64 {
    let mut rng = stream(seed, stream_id);
    rng.set_word_pos(index as u128 * 2);
    unit(rng.next_u64())
}

/// Incremental reader of one lane's Poisson arrivals.
#[derive(Clone, Debug)]
pub struct ArrivalCursor {
    rng: ChaCha8Rng,
    rate_per_s: f64,
    next_s: f64,
    next_index: u64,
}

impl ArrivalCursor {
    pub fn new(spec: &DemandSpec, intersection: usize, lane: usize) -> Self {
        let mut cursor = Self {
            rng: stream(spec.seed, lane_stream_id(intersection, lane)),
            rate_per_s: spec.per_lane_rate[intersection] / 3600.0,
            next_s: 0.0,
            next_index: 0,
        };
        cursor.next_s = cursor.gap();
        cursor
    }

    fn gap(&mut self) -> f64 {
        -(1.0 - unit(self.rng.next_u64())).ln() / self.rate_per_s
    }

    pub fn peek(&self) -> f64 {
        self.next_s
    }

    /// Returns (arrival index on this lane, arrival time) and advances.
    pub fn pop(&mut self) -> (u64, f64) {
        let out = (self.next_index, self.next_s);
        self.next_index += 1;
        self.next_s += self.gap();
        out
    }
}

/// Arrival times in `[0, horizon_s)` for one lane.
pub fn arrival_stream(spec: &DemandSpec, intersection: usize, lane: usize, horizon_s: f64) -> Vec<f64> {
    let mut cursor = ArrivalCursor::new(spec, intersection, lane);
    let mut out = Vec::new();
    while cursor.peek() < horizon_s {
        out.push(cursor.pop().1);
    }
    out
}

/// Bernoulli(rv_penetration) keyed by the vehicle index.
pub fn assign_kind(spec: &DemandSpec, vehicle_index: u64) -> VehicleKind {
    if draw_at(spec.seed, KIND_STREAM, vehicle_index) < spec.rv_penetration {
        VehicleKind::Robot
    } else {
        VehicleKind::Human
    }
}

pub fn assign_movement(spec: &DemandSpec, intersection: usize, lane: usize) -> Result<MovementDirection, DemandError> {
    spec.lane_movements.get(intersection).and_then(|l| l.get(lane)).copied().ok_or(DemandError::UnmappedLane { intersection, lane })
}

/// Uniform choice among `n` lanes for a vehicle's `hop`-th connector hand-off.
pub fn route_choice(seed: u64, vehicle: VehicleId, hop: u8, n: usize) -> usize {
    let u = draw_at(seed, ROUTE_STREAM + hop as u64, vehicle.0);
    ((u * n as f64) as usize).min(n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::paper4;

    fn spec(p: f64, seed: u64) -> DemandSpec {
        DemandSpec::from_network(&paper4(), p, seed).unwrap()
    }

    #[test]
    fn streams_are_deterministic() {
        assert_eq!(arrival_stream(&spec(0.5, 9), 0, 3, 600.0), arrival_stream(&spec(0.5, 9), 0, 3, 600.0));
        assert_ne!(arrival_stream(&spec(0.5, 9), 0, 3, 600.0), arrival_stream(&spec(0.5, 10), 0, 3, 600.0));
    }

    #[test]
    fn arrivals_are_sorted_and_within_horizon() {
        let a = arrival_stream(&spec(0.5, 1), 1, 0, 900.0);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|t| (0.0..900.0).contains(t)));
    }

    #[test]
    fn vanishing_rate_gives_empty_stream() {
        let mut s = spec(0.5, 1);
        s.per_lane_rate[0] = 1e-9;
        assert!(arrival_stream(&s, 0, 0, 3600.0).is_empty());
    }

    #[test]
    fn mean_count_over_seeds_matches_rate() {
        let n: usize = (0..100).map(|seed| arrival_stream(&spec(0.5, seed), 0, 0, 3600.0).len()).sum();
        let mean = n as f64 / 100.0;
        assert!((1157.0 * 0.95..=1157.0 * 1.05).contains(&mean), "{mean}");
    }

    #[test]
    fn kind_extremes() {
        let all_rv = spec(1.0, 4);
        let all_hv = spec(0.0, 4);
        for i in 0..1000 {
            assert_eq!(assign_kind(&all_rv, i), VehicleKind::Robot);
            assert_eq!(assign_kind(&all_hv, i), VehicleKind::Human);
        }
    }

    #[test]
    fn kind_fraction_at_half() {
        let s = spec(0.5, 77);
        let rv = (0..10_000).filter(|i| assign_kind(&s, *i) == VehicleKind::Robot).count();
        let frac = rv as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn kind_is_order_independent() {
        let s = spec(0.3, 5);
        let forward: Vec<_> = (0..50).map(|i| assign_kind(&s, i)).collect();
        let backward: Vec<_> = (0..50).rev().map(|i| assign_kind(&s, i)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
    }

    #[test]
    fn movement_lookup() {
        let s = spec(0.5, 1);
        let lanes = &s.lane_movements[0];
        let left = lanes.iter().position(|m| m.to_string() == "N-L").unwrap();
        assert_eq!(assign_movement(&s, 0, left).unwrap().to_string(), "N-L");
        let ws = lanes.iter().position(|m| m.to_string() == "W-S").unwrap();
        assert_eq!(assign_movement(&s, 0, ws).unwrap().to_string(), "W-S");
        assert!(assign_movement(&s, 0, 99).is_err());
    }

    #[test]
    fn validation() {
        assert!(DemandSpec::from_network(&paper4(), 1.5, 0).is_err());
        let mut s = spec(0.5, 0);
        s.per_lane_rate[2] = 0.0;
        assert!(matches!(s.validate(), Err(DemandError::InvalidRate { intersection: 2, .. })));
    }

    #[test]
    fn shares_follow_lane_mapping() {
        let s = spec(0.5, 0);
        for shares in &s.movement_shares {
            for share in shares.iter().flatten() {
                assert!((share.straight + share.left - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn route_choice_in_range() {
        for i in 0..200 {
            assert!(route_choice(3, VehicleId(i), 0, 5) < 5);
        }
    }
}
