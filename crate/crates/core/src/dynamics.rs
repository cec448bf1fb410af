//! Longitudinal vehicle dynamics: IDM car following, lane ordering and the
//! per-tick integration of every vehicle in a [`World`].
//!
//! Integration is semi-implicit Euler: the new speed is `v + a·dt` clamped at
//! zero, and the position advances with the new speed. On top of the IDM
//! acceleration each follower is limited to the speed that keeps at least the
//! minimum gap to its leader's updated position, which keeps standstills at
//! `s0` even at `dt = 1 s`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::MovementDirection;
use crate::world::{SegmentKind, World, VEHICLE_LENGTH_M, WAIT_SPEED_THRESHOLD_MPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VehicleKind {
    #[serde(rename = "RV")]
    Robot,
    #[serde(rename = "HV")]
    Human,
}

impl VehicleKind {
    pub fn label(self) -> &'static str {
        match self {
            VehicleKind::Robot => "RV",
            VehicleKind::Human => "HV",
        }
    }
}

/// Packs the spawning intersection, lane and per-lane arrival index.
/// Serialized as a decimal string so it survives JSON readers without 64-bit
/// integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VehicleId(pub u64);

impl Serialize for VehicleId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for VehicleId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(u64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(n) => Ok(VehicleId(n)),
            Repr::Str(s) => s.parse().map(VehicleId).map_err(serde::de::Error::custom),
        }
    }
}

impl VehicleId {
    pub fn new(intersection: usize, lane: usize, index: u64) -> Self {
        debug_assert!(intersection < 256 && lane < 256 && index < (1 << 48));
        VehicleId(((intersection as u64) << 56) | ((lane as u64) << 48) | index)
    }

    pub fn intersection(self) -> usize {
        (self.0 >> 56) as usize
    }

    pub fn lane(self) -> usize {
        ((self.0 >> 48) & 0xff) as usize
    }

    pub fn index(self) -> u64 {
        self.0 & ((1 << 48) - 1)
    }
}

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub kind: VehicleKind,
    /// Front-bumper position from the start of the current segment, meters.
    pub pos_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub movement: MovementDirection,
    pub wait_s: f64,
    pub spawn_time_s: f64,
    /// When the vehicle first entered the control zone of its current approach.
    pub zone_entry_s: Option<f64>,
    /// Cleared to cross the stop line.
    pub cleared: bool,
    /// Connector hand-offs completed so far.
    pub hops: u8,
}

impl VehicleState {
    pub fn new(id: VehicleId, kind: VehicleKind, movement: MovementDirection, spawn_time_s: f64) -> Self {
        Self {
            id,
            kind,
            pos_m: 0.0,
            speed_mps: 0.0,
            accel_mps2: 0.0,
            movement,
            wait_s: 0.0,
            spawn_time_s,
            zone_entry_s: None,
            cleared: false,
            hops: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    pub desired_speed_mps: f64,
    pub time_headway_s: f64,
    pub min_gap_m: f64,
    pub max_accel_mps2: f64,
    pub comfort_decel_mps2: f64,
    pub exponent: f64,
}

impl IdmParams {
    pub fn with_desired_speed(speed_mps: f64) -> Self {
        Self { desired_speed_mps: speed_mps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let all_positive =
            [self.desired_speed_mps, self.time_headway_s, self.min_gap_m, self.max_accel_mps2, self.comfort_decel_mps2, self.exponent]
                .iter()
                .all(|v| *v > 0.0 && v.is_finite());
        if all_positive && self.exponent >= 1.0 {
            Ok(())
        } else {
            Err(DynamicsError::InvalidParams(*self))
        }
    }
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { desired_speed_mps: 13.89, time_headway_s: 1.0, min_gap_m: 2.0, max_accel_mps2: 2.6, comfort_decel_mps2: 4.5, exponent: 4.0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-positive gap {gap_m} m to a leader")]
    NonPositiveGap { gap_m: f64 },
    #[error("collision at t={t_s} s: vehicle {follower} is {gap_m} m behind vehicle {leader}")]
    Collision { t_s: f64, follower: VehicleId, leader: VehicleId, gap_m: f64 },
    #[error("vehicle {vehicle} crossed the stop line without clearance at t={t_s} s")]
    UnclearedCrossing { t_s: f64, vehicle: VehicleId },
    #[error("invalid IDM parameters {0:?}")]
    InvalidParams(IdmParams),
    #[error("timestep must be positive, got {0}")]
    InvalidTimestep(f64),
}

/// IDM acceleration. Without a leader the interaction term vanishes.
pub fn idm_acceleration(speed: f64, leader: Option<(f64, f64)>, p: &IdmParams) -> Result<f64, DynamicsError> {
    let free = 1.0 - (speed / p.desired_speed_mps).powf(p.exponent);
    let interaction = match leader {
        None => 0.0,
        Some((leader_speed, gap)) => {
            if !(gap > 0.0) {
                return Err(DynamicsError::NonPositiveGap { gap_m: gap });
            }
            let dv = speed - leader_speed;
            let desired_gap =
                p.min_gap_m + speed * p.time_headway_s + speed * dv / (2.0 * (p.max_accel_mps2 * p.comfort_decel_mps2).sqrt());
            let desired_gap = desired_gap.max(0.0);
            (desired_gap / gap).powi(2)
        }
    };
    Ok(p.max_accel_mps2 * (free - interaction))
}

/// Something a vehicle must not run into: the next vehicle or a standing
/// virtual obstacle such as a closed stop line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderView {
    /// Bumper-to-bumper distance at the start of the tick.
    pub gap_m: f64,
    pub speed_now_mps: f64,
    /// Leader speed after this tick's update (followers update after leaders).
    pub speed_next_mps: f64,
}

impl LeaderView {
    pub fn standing(gap_m: f64) -> Self {
        Self { gap_m, speed_now_mps: 0.0, speed_next_mps: 0.0 }
    }
}

/// New speed and effective acceleration for one vehicle under all of its
/// constraints (most restrictive wins).
pub fn kinematic_update(speed: f64, constraints: &[LeaderView], p: &IdmParams, dt: f64) -> Result<(f64, f64), DynamicsError> {
    let mut accel = if constraints.is_empty() { idm_acceleration(speed, None, p)? } else { f64::INFINITY };
    for c in constraints {
        accel = accel.min(idm_acceleration(speed, Some((c.speed_now_mps, c.gap_m)), p)?);
    }
    let mut next = (speed + accel * dt).max(0.0);
    for c in constraints {
        let safe = c.speed_next_mps + (c.gap_m - p.min_gap_m) / dt;
        next = next.min(safe.max(0.0));
    }
    Ok((next, (next - speed) / dt))
}

/// Advances one segment's vehicles (front first) by `dt`.
///
/// `ahead` is the nearest obstacle beyond the segment's first vehicle, with the
/// gap measured from that vehicle. `stop_line` optionally adds a standing
/// obstacle for the vehicle at the given index, at the given distance.
/// Positions are not wrapped; the caller moves vehicles past the segment end.
pub fn advance_lane(
    vehicles: &mut [VehicleState],
    ahead: Option<LeaderView>,
    stop_line: Option<(usize, f64)>,
    p: &IdmParams,
    dt: f64,
) -> Result<(), DynamicsError> {
    let mut prev: Option<(f64, f64, f64)> = None; // old pos, old speed, new speed
    for (i, v) in vehicles.iter_mut().enumerate() {
        let mut constraints = [LeaderView::standing(0.0); 2];
        let mut n = 0;
        match prev {
            Some((lp, ls, ln)) => {
                constraints[n] = LeaderView { gap_m: lp - VEHICLE_LENGTH_M - v.pos_m, speed_now_mps: ls, speed_next_mps: ln };
                n += 1;
            }
            None => {
                if let Some(a) = ahead {
                    constraints[n] = a;
                    n += 1;
                }
            }
        }
        if let Some((idx, dist)) = stop_line {
            if idx == i {
                constraints[n] = LeaderView::standing(dist);
                n += 1;
            }
        }
        let (old_pos, old_speed) = (v.pos_m, v.speed_mps);
        let (speed, accel) = kinematic_update(v.speed_mps, &constraints[..n], p, dt)?;
        v.speed_mps = speed;
        v.accel_mps2 = accel;
        v.pos_m += speed * dt;
        prev = Some((old_pos, old_speed, speed));
    }
    Ok(())
}

/// Front-to-back order: decreasing position, earlier spawn first on ties.
pub fn lane_order(vehicles: &mut [VehicleState]) {
    vehicles.sort_by(|a, b| {
        b.pos_m
            .partial_cmp(&a.pos_m)
            .unwrap_or(Ordering::Equal)
            .then(a.spawn_time_s.partial_cmp(&b.spawn_time_s).unwrap_or(Ordering::Equal))
            .then(a.id.cmp(&b.id))
    });
}

/// (v, a) after a tick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicRecord {
    pub id: VehicleId,
    pub speed_mps: f64,
    pub accel_mps2: f64,
}

/// Advances every vehicle in the world by `dt` and performs segment
/// transfers, despawns and connector hand-offs. Fails if any gap closes.
pub fn step_vehicles(world: &mut World, dt: f64) -> Result<Vec<KinematicRecord>, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidTimestep(dt));
    }
    let t_next = world.time_s() + dt;
    let mut handoffs = Vec::new();

    for c in 0..world.chains.len() {
        let params = world.params_for(world.chains[c].intersection);
        let stop_line = world.stop_line_constraint(c);
        let chain = &mut world.chains[c];

        let exit_rear = chain.exit.rear();
        let interior_rear = chain.interior.rear();

        advance_lane(&mut chain.exit.vehicles, None, None, &params, dt)?;

        let interior_ahead = match (chain.interior.vehicles.first(), exit_rear) {
            (Some(front), Some((pos, speed))) => Some(LeaderView {
                gap_m: chain.interior.length_m - front.pos_m + pos - VEHICLE_LENGTH_M,
                speed_now_mps: speed,
                speed_next_mps: chain.exit.vehicles.last().map_or(0.0, |v| v.speed_mps),
            }),
            _ => None,
        };
        advance_lane(&mut chain.interior.vehicles, interior_ahead, None, &params, dt)?;

        let approach_ahead = chain.approach.vehicles.first().and_then(|front| {
            let to_line = chain.approach.length_m - front.pos_m;
            if let Some((pos, speed)) = interior_rear {
                Some(LeaderView {
                    gap_m: to_line + pos - VEHICLE_LENGTH_M,
                    speed_now_mps: speed,
                    speed_next_mps: chain.interior.vehicles.last().map_or(0.0, |v| v.speed_mps),
                })
            } else {
                exit_rear.map(|(pos, speed)| LeaderView {
                    gap_m: to_line + chain.interior.length_m + pos - VEHICLE_LENGTH_M,
                    speed_now_mps: speed,
                    speed_next_mps: chain.exit.vehicles.last().map_or(0.0, |v| v.speed_mps),
                })
            }
        });
        advance_lane(&mut chain.approach.vehicles, approach_ahead, stop_line, &params, dt)?;

        // Exit end: despawn or hand off to the next intersection.
        let leaving = chain.exit.vehicles.iter().take_while(|v| v.pos_m > chain.exit.length_m).count();
        for v in chain.exit.vehicles.drain(..leaving) {
            handoffs.push((c, v));
        }
        // Interior → exit.
        let crossing = chain.interior.vehicles.iter().take_while(|v| v.pos_m > chain.interior.length_m).count();
        let moved: Vec<_> = chain.interior.vehicles.drain(..crossing).collect();
        for mut v in moved {
            v.pos_m -= chain.interior.length_m;
            world.gates[chain.intersection].leave(v.movement);
            chain.exit.vehicles.push(v);
        }
        // Approach → interior.
        let crossing = chain.approach.vehicles.iter().take_while(|v| v.pos_m > chain.approach.length_m).count();
        let moved: Vec<_> = chain.approach.vehicles.drain(..crossing).collect();
        for mut v in moved {
            if !v.cleared {
                return Err(DynamicsError::UnclearedCrossing { t_s: t_next, vehicle: v.id });
            }
            v.pos_m -= chain.approach.length_m;
            world.gates[chain.intersection].enter(v.movement);
            chain.interior.vehicles.push(v);
        }
    }

    for (c, v) in handoffs {
        world.hand_off(c, v, t_next);
    }

    let mut records = Vec::with_capacity(world.vehicle_count());
    for c in 0..world.chains.len() {
        let zone_start = world.zone_start_m(c);
        let chain = &mut world.chains[c];
        for (kind, seg) in chain.segments_mut() {
            for v in &mut seg.vehicles {
                if v.speed_mps < WAIT_SPEED_THRESHOLD_MPS {
                    v.wait_s += dt;
                }
                if kind == SegmentKind::Approach && v.zone_entry_s.is_none() && v.pos_m >= zone_start {
                    v.zone_entry_s = Some(t_next);
                }
                records.push(KinematicRecord { id: v.id, speed_mps: v.speed_mps, accel_mps2: v.accel_mps2 });
            }
        }
    }

    world.check_gaps(t_next)?;
    Ok(records)
}
