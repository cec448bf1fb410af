//! Queue-head controllers: the signal baseline, first-come-first-served
//! reservation, scripted actions and remote policies.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Action, GateState};
use crate::dynamics::{VehicleId, VehicleKind};
use crate::env::{observe_agents, DEFAULT_WAIT_NORMALIZER_S};
use crate::protocol::{PolicyClient, ProtocolError};
use crate::topology::{ConflictTable, MovementDirection, MovementSet, NetworkSpec};
use crate::world::{QueueHead, World};

pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("signal baseline needs a signal plan at intersection {0}")]
    MissingSignalPlan(String),
    #[error("unrecognized policy {0:?} (expected signal, fcfs or external URI)")]
    Unknown(String),
}

/// Decides Stop/Go for RV queue heads.
///
/// `decide` is called once per control round while releases keep happening;
/// round 0 sees the tick's heads before any release. Heads left without an
/// action are held.
pub trait Controller {
    /// Signalized regime: every head follows the signal and `decide` is never called.
    fn signalized(&self) -> bool {
        false
    }

    fn decide(&mut self, world: &World, heads: &[QueueHead], round: u32) -> Result<Vec<(VehicleId, Action)>, PolicyError>;
}

/// Holds every RV.
#[derive(Clone, Copy, Debug, Default)]
pub struct AllStop;

impl Controller for AllStop {
    fn decide(&mut self, _: &World, _: &[QueueHead], _: u32) -> Result<Vec<(VehicleId, Action)>, PolicyError> {
        Ok(Vec::new())
    }
}

/// Fixed-time signals for every vehicle.
#[derive(Clone, Copy, Debug, Default)]
pub struct SignalBaseline;

impl Controller for SignalBaseline {
    fn signalized(&self) -> bool {
        true
    }

    fn decide(&mut self, _: &World, _: &[QueueHead], _: u32) -> Result<Vec<(VehicleId, Action)>, PolicyError> {
        Ok(Vec::new())
    }
}

/// Queue-head summary used by [`fcfs_decide`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FcfsHead {
    pub vehicle: VehicleId,
    pub kind: VehicleKind,
    pub movement: MovementDirection,
    pub arrival_s: f64,
}

/// First-come-first-served reservation with greedy batching.
///
/// Heads are visited in arrival order. An RV goes when its movement conflicts
/// with nothing active, nothing granted earlier in the pass and no earlier
/// head that must wait; the last rule keeps a stream of compatible late
/// arrivals from starving an early one. HV heads are included as a forecast
/// of the gap-acceptance rule they follow; only RVs receive actions.
pub fn fcfs_decide(heads: &[FcfsHead], gate: &GateState, table: &ConflictTable) -> Vec<(VehicleId, Action)> {
    let mut order: Vec<&FcfsHead> = heads.iter().collect();
    order.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then(a.vehicle.cmp(&b.vehicle)));
    let active = gate.active();
    let mut granted = MovementSet::EMPTY;
    let mut waiting = MovementSet::EMPTY;
    let mut out = Vec::new();
    for h in order {
        let busy = table.conflicts_with_any(h.movement, active) || table.conflicts_with_any(h.movement, granted);
        let go = match h.kind {
            VehicleKind::Human => !busy,
            VehicleKind::Robot => !busy && !table.conflicts_with_any(h.movement, waiting),
        };
        if go {
            granted.insert(h.movement);
        } else {
            waiting.insert(h.movement);
        }
        if h.kind == VehicleKind::Robot {
            out.push((h.vehicle, if go { Action::Go } else { Action::Stop }));
        }
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct FcfsController;

impl Controller for FcfsController {
    fn decide(&mut self, world: &World, rv_heads: &[QueueHead], _round: u32) -> Result<Vec<(VehicleId, Action)>, PolicyError> {
        let all_heads = world.queue_heads();
        let mut out = Vec::with_capacity(rv_heads.len());
        for ix in 0..world.network().intersections.len() {
            if !rv_heads.iter().any(|h| h.intersection == ix) {
                continue;
            }
            let heads: Vec<FcfsHead> = all_heads
                .iter()
                .filter(|h| h.intersection == ix)
                .map(|h| FcfsHead { vehicle: h.vehicle, kind: h.kind, movement: h.movement, arrival_s: h.arrival_s })
                .collect();
            out.extend(fcfs_decide(&heads, world.gate(ix), world.conflict_table()));
        }
        Ok(out)
    }
}

/// Applies a fixed action map in round 0 and holds everything afterwards.
#[derive(Clone, Debug, Default)]
pub struct Scripted {
    pub actions: HashMap<VehicleId, Action>,
}

impl Controller for Scripted {
    fn decide(&mut self, _: &World, heads: &[QueueHead], round: u32) -> Result<Vec<(VehicleId, Action)>, PolicyError> {
        if round > 0 {
            return Ok(Vec::new());
        }
        Ok(heads.iter().filter_map(|h| self.actions.get(&h.vehicle).map(|a| (h.vehicle, *a))).collect())
    }
}

/// Asks a remote policy over the wire protocol in round 0.
pub struct ExternalController {
    client: PolicyClient,
    wait_normalizer_s: f64,
}

impl ExternalController {
    pub fn new(client: PolicyClient) -> Self {
        Self { client, wait_normalizer_s: DEFAULT_WAIT_NORMALIZER_S }
    }
}

impl Controller for ExternalController {
    fn decide(&mut self, world: &World, heads: &[QueueHead], round: u32) -> Result<Vec<(VehicleId, Action)>, PolicyError> {
        if round > 0 {
            return Ok(Vec::new());
        }
        let agents = observe_agents(world, heads, self.wait_normalizer_s);
        let actions = external_decide(&mut self.client, world.time_s(), &agents)?;
        Ok(heads.iter().map(|h| (h.vehicle, actions.get(&h.vehicle).copied().unwrap_or(Action::Stop))).collect())
    }
}

/// Sends observations to the endpoint and returns its actions. Eligible RVs
/// the endpoint leaves out are held by the caller.
pub fn external_decide(
    client: &mut PolicyClient,
    t_s: f64,
    agents: &[crate::env::AgentObs],
) -> Result<HashMap<VehicleId, Action>, PolicyError> {
    Ok(client.query(t_s, agents)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "endpoint")]
pub enum PolicyKind {
    SignalBaseline,
    FcfsHeuristic,
    External(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHandle {
    pub kind: PolicyKind,
    /// Reply timeout for external endpoints.
    pub timeout_s: f64,
}

impl PolicyHandle {
    pub fn signal() -> Self {
        Self { kind: PolicyKind::SignalBaseline, timeout_s: DEFAULT_EXTERNAL_TIMEOUT.as_secs_f64() }
    }

    pub fn fcfs() -> Self {
        Self { kind: PolicyKind::FcfsHeuristic, timeout_s: DEFAULT_EXTERNAL_TIMEOUT.as_secs_f64() }
    }

    pub fn external(endpoint: impl Into<String>) -> Self {
        Self { kind: PolicyKind::External(endpoint.into()), timeout_s: DEFAULT_EXTERNAL_TIMEOUT.as_secs_f64() }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            PolicyKind::SignalBaseline => "signal",
            PolicyKind::FcfsHeuristic => "fcfs",
            PolicyKind::External(_) => "external",
        }
    }

    pub fn validate(&self, net: &NetworkSpec) -> Result<(), PolicyError> {
        if self.kind == PolicyKind::SignalBaseline {
            if let Some(i) = net.intersections.iter().find(|i| i.signal_plan.is_none()) {
                return Err(PolicyError::MissingSignalPlan(i.id.clone()));
            }
        }
        Ok(())
    }

    /// Builds a controller for one episode. External endpoints are connected
    /// and greeted here.
    pub fn build(&self, net: &NetworkSpec, seed: u64, rv_rate: f64) -> Result<Box<dyn Controller + Send>, PolicyError> {
        self.validate(net)?;
        Ok(match &self.kind {
            PolicyKind::SignalBaseline => Box::new(SignalBaseline),
            PolicyKind::FcfsHeuristic => Box::new(FcfsController),
            PolicyKind::External(endpoint) => {
                let timeout = Duration::from_secs_f64(self.timeout_s);
                let client = PolicyClient::connect(endpoint, timeout, net, seed, rv_rate)?;
                Box::new(ExternalController::new(client))
            }
        })
    }
}

impl fmt::Display for PolicyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            PolicyKind::External(e) => write!(f, "external {e}"),
            _ => f.write_str(self.label()),
        }
    }
}

impl FromStr for PolicyHandle {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "signal" => Ok(Self::signal()),
            "fcfs" => Ok(Self::fcfs()),
            _ => {
                let endpoint = s.strip_prefix("external").map(str::trim).map(|e| e.trim_start_matches([':', '=']).trim());
                match endpoint {
                    Some(e) if !e.is_empty() => Ok(Self::external(e)),
                    _ => Err(PolicyError::Unknown(s.to_string())),
                }
            }
        }
    }
}
