//! Deterministic microscopic simulator for mixed robot/human traffic at
//! four-way unsignalized intersections.
//!
//! - [`topology`]: movements, the conflict relation and scenario files.
//! - [`dynamics`]: IDM car following and the per-tick integrator.
//! - [`demand`]: seeded Poisson arrivals and RV/HV assignment.
//! - [`control`]: signals, Stop/Go gating and the occupancy grid.
//! - [`world`]: the network state and its driving loop.
//! - [`env`]: observation, reward and episode semantics.
//! - [`emissions`]: the HBEFA3 polynomial and scope aggregation.
//! - [`policies`]: built-in and remote controllers.
//! - [`protocol`]: the line-delimited JSON wire protocol.
//! - [`harness`]: evaluations, sweeps and result files.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod demand;
pub mod dynamics;
pub mod emissions;
pub mod env;
pub mod harness;
pub mod policies;
pub mod protocol;
pub mod topology;
pub mod world;

pub use control::{Action, ConflictEvent, GateState, OccupancyGrid, SignalPlan};
pub use demand::DemandSpec;
pub use dynamics::{IdmParams, VehicleId, VehicleKind, VehicleState};
pub use emissions::{EmissionCoefficients, Pollutant, Scope};
pub use env::{Env, EpisodeConfig, Observation, RewardTerms};
pub use harness::{EvalConfig, MetricsFrame, RunReport};
pub use policies::{Controller, PolicyHandle};
pub use topology::{ConflictTable, MovementDirection, NetworkSpec};
pub use world::World;
