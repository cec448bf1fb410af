//! The intersection simulator as a multi-agent POMDP: observations of RV
//! queues and interior occupancy, the wait/conflict reward and
//! reset/step episode semantics.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{build_occupancy, Action, ConflictEvent, OccupancyGrid};
use crate::demand::DemandSpec;
use crate::dynamics::{IdmParams, VehicleId, VehicleKind};
use crate::emissions::EmissionCoefficients;
use crate::harness::{FrameRecorder, MetricsFrame};
use crate::policies::{AllStop, Controller, Scripted};
use crate::topology::{MovementDirection, NetworkSpec};
use crate::world::{QueueHead, SegmentKind, World, WorldError};

pub const DEFAULT_WAIT_NORMALIZER_S: f64 = 120.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error("action for {0}, which is not an eligible RV")]
    UnknownAgent(VehicleId),
    #[error("episode is done; call reset")]
    Done,
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Episode length in ticks, warmup included.
    pub horizon_ticks: u64,
    pub gamma: f64,
    pub warmup_s: f64,
    /// Ticks simulated per step.
    pub action_interval: u64,
    pub dt: f64,
    pub wait_normalizer_s: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { horizon_ticks: 1000, gamma: 0.99, warmup_s: 0.0, action_interval: 1, dt: 1.0, wait_normalizer_s: DEFAULT_WAIT_NORMALIZER_S }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.warmup_s >= 0.0) {
            return bad("warmup must be non-negative");
        }
        if !(self.horizon_ticks as f64 * self.dt > self.warmup_s) {
            return bad("horizon must exceed warmup");
        }
        if self.action_interval == 0 {
            return bad("action interval must be at least one tick");
        }
        if !(self.wait_normalizer_s > 0.0) {
            return bad("wait normalizer must be positive");
        }
        Ok(())
    }

    fn warmup_ticks(&self) -> u64 {
        (self.warmup_s / self.dt).round() as u64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionObs {
    /// RVs queued in the direction's control zones.
    pub q: u32,
    /// Their mean wait over the normalizer, clamped to [0, 1].
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Indexed by [`MovementDirection::index`].
    pub per_direction: [DirectionObs; 8],
    pub occupancy: OccupancyGrid,
}

impl Observation {
    /// `q₁, w₁, …, q₈, w₈` followed by the occupancy cells (1 marked, 0 free).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for d in &self.per_direction {
            out.push(d.q as f64);
            out.push(d.w);
        }
        out.extend(self.occupancy.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }));
        out
    }

    pub fn len(&self) -> usize {
        16 + self.occupancy.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn obs_dim(net: &NetworkSpec) -> usize {
    16 + net.grid_shape().cells()
}

fn normalized(total_wait: f64, n: u32, normalizer: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        (total_wait / n as f64 / normalizer).clamp(0.0, 1.0)
    }
}

/// Per-direction (count, total wait) over vehicles in the control zones of
/// `intersection`, optionally restricted to RVs.
fn zone_waits(world: &World, intersection: usize, rv_only: bool) -> [(u32, f64); 8] {
    let mut acc = [(0u32, 0.0f64); 8];
    for (loc, v) in world.vehicles() {
        if loc.intersection != intersection || loc.segment != SegmentKind::Approach || !loc.in_zone {
            continue;
        }
        if rv_only && v.kind != VehicleKind::Robot {
            continue;
        }
        let slot = &mut acc[v.movement.index()];
        slot.0 += 1;
        slot.1 += v.wait_s;
    }
    acc
}

/// The observation shared by every RV at `intersection`.
pub fn observe(world: &World, intersection: usize, wait_normalizer_s: f64) -> Observation {
    let waits = zone_waits(world, intersection, true);
    Observation {
        per_direction: waits.map(|(q, total)| DirectionObs { q, w: normalized(total, q, wait_normalizer_s) }),
        occupancy: build_occupancy(world, intersection),
    }
}

/// Normalized mean wait of all vehicles per direction, as used by the reward.
pub fn direction_waits(world: &World, intersection: usize, wait_normalizer_s: f64) -> [f64; 8] {
    zone_waits(world, intersection, false).map(|(n, total)| normalized(total, n, wait_normalizer_s))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub r_l: f64,
    pub p_c: f64,
    pub total: f64,
}

/// `r = r_L + p_c`, with `r_L = -w_d` on Stop and `+w_d` on Go, and `p_c = -1`
/// for a conflicting Go.
pub fn reward(action: Action, w_d: f64, conflict: bool) -> RewardTerms {
    let r_l = match action {
        Action::Stop => -w_d,
        Action::Go => w_d,
    };
    let p_c = if conflict { -1.0 } else { 0.0 };
    RewardTerms { r_l, p_c, total: r_l + p_c }
}

/// One decision-eligible RV and what it sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentObs {
    pub id: VehicleId,
    pub intersection: String,
    pub movement: MovementDirection,
    pub obs: Vec<f64>,
}

/// Observations for a set of queue heads, assembled once per intersection.
pub fn observe_agents(world: &World, heads: &[QueueHead], wait_normalizer_s: f64) -> Vec<AgentObs> {
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    heads
        .iter()
        .filter(|h| h.kind == VehicleKind::Robot)
        .map(|h| {
            let obs = cache.entry(h.intersection).or_insert_with(|| observe(world, h.intersection, wait_normalizer_s).to_vec()).clone();
            AgentObs { id: h.vehicle, intersection: world.network().intersections[h.intersection].id.clone(), movement: h.movement, obs }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentReward {
    pub id: VehicleId,
    pub action: Action,
    pub terms: RewardTerms,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t_s: f64,
    pub frames: Vec<MetricsFrame>,
    pub conflicts: Vec<ConflictEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observations: Vec<AgentObs>,
    pub rewards: Vec<AgentReward>,
    pub done: bool,
    pub info: StepInfo,
}

pub struct Env {
    net: Arc<NetworkSpec>,
    coeffs: Arc<EmissionCoefficients>,
    demand: DemandSpec,
    config: EpisodeConfig,
    idm: IdmParams,
    warmup: Box<dyn Controller + Send>,
    world: World,
    recorder: FrameRecorder,
    eligible: Vec<QueueHead>,
}

impl Env {
    /// `warmup` drives the RVs during the warmup period of every reset.
    pub fn new(
        net: Arc<NetworkSpec>,
        demand: DemandSpec,
        config: EpisodeConfig,
        warmup: Box<dyn Controller + Send>,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        let idm = IdmParams::default();
        let coeffs = Arc::new(EmissionCoefficients::pc_g_eu4());
        let world = World::new(net.clone(), Some(demand.clone()), idm, config.dt)?;
        let recorder = FrameRecorder::new(&world, coeffs.clone());
        let mut env = Self { net, coeffs, demand, config, idm, warmup, world, recorder, eligible: Vec::new() };
        env.reset()?;
        Ok(env)
    }

    /// Empty network, demand re-keyed from the seed, warmup under the warmup
    /// policy. Returns the initial observations.
    pub fn reset(&mut self) -> Result<Vec<AgentObs>, EnvError> {
        self.world = World::new(self.net.clone(), Some(self.demand.clone()), self.idm, self.config.dt)?;
        self.recorder = FrameRecorder::new(&self.world, self.coeffs.clone());
        for _ in 0..self.config.warmup_ticks() {
            let report = self.world.tick(self.warmup.as_mut())?;
            self.recorder.record(&self.world, &report);
        }
        self.refresh_eligible();
        Ok(self.observations())
    }

    pub fn reseed(&mut self, seed: u64) {
        self.demand.seed = seed;
    }

    fn refresh_eligible(&mut self) {
        self.eligible =
            if self.done() { Vec::new() } else { self.world.queue_heads().into_iter().filter(|h| h.kind == VehicleKind::Robot).collect() };
    }

    /// Observations of the currently eligible RVs. Does not advance anything.
    pub fn observations(&self) -> Vec<AgentObs> {
        observe_agents(&self.world, &self.eligible, self.config.wait_normalizer_s)
    }

    pub fn eligible(&self) -> &[QueueHead] {
        &self.eligible
    }

    pub fn done(&self) -> bool {
        self.world.tick_count() >= self.config.horizon_ticks
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        obs_dim(&self.net)
    }

    pub fn step(&mut self, actions: &HashMap<VehicleId, Action>) -> Result<Transition, EnvError> {
        if self.done() {
            return Err(EnvError::Done);
        }
        if let Some(bad) = actions.keys().find(|id| !self.eligible.iter().any(|h| h.vehicle == **id)) {
            return Err(EnvError::UnknownAgent(*bad));
        }
        let waits: HashMap<usize, [f64; 8]> = self
            .eligible
            .iter()
            .map(|h| h.intersection)
            .map(|ix| (ix, direction_waits(&self.world, ix, self.config.wait_normalizer_s)))
            .collect();

        let mut info = StepInfo::default();
        let mut conflict_of: HashMap<VehicleId, bool> = HashMap::new();
        for k in 0..self.config.action_interval {
            if self.done() {
                break;
            }
            let report = if k == 0 {
                let mut ctl = Scripted { actions: actions.clone() };
                self.world.tick(&mut ctl)?
            } else {
                self.world.tick(&mut AllStop)?
            };
            if k == 0 {
                for d in report.decisions.iter().filter(|d| d.round == 0) {
                    conflict_of.insert(d.vehicle, d.outcome.conflict);
                }
            }
            if let Some(frame) = self.recorder.record(&self.world, &report) {
                info.frames.push(frame);
            }
            info.conflicts.extend(report.conflicts);
        }
        info.t_s = self.world.time_s();

        let rewards = self
            .eligible
            .iter()
            .map(|h| {
                let action = actions.get(&h.vehicle).copied().unwrap_or(Action::Stop);
                let w_d = waits[&h.intersection][h.movement.index()];
                let conflict = conflict_of.get(&h.vehicle).copied().unwrap_or(false);
                AgentReward { id: h.vehicle, action, terms: reward(action, w_d, conflict) }
            })
            .collect();
        self.refresh_eligible();
        Ok(Transition { observations: self.observations(), rewards, done: self.done(), info })
    }
}
