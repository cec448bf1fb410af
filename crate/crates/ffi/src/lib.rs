//! C ABI over the intersim environment and emissions model.
//!
//! Every fallible call returns an [`IsimStatus`]; on failure the message is
//! available from [`isim_last_error`] on the same thread. Handles are opaque
//! and must be released with [`isim_env_free`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use intersim::emissions::emission_rate;
use intersim::env::{AgentObs, EnvError, DEFAULT_WAIT_NORMALIZER_S};
use intersim::policies::FcfsController;
use intersim::topology::{load_scenario, paper4};
use intersim::world::WorldError;
use intersim::{Action, DemandSpec, EmissionCoefficients, Env, EpisodeConfig, Pollutant, VehicleId};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvariantBreach = 3,
    EpisodeDone = 4,
    UnknownAgent = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsimPollutant {
    Fuel = 0,
    Co2 = 1,
    Co = 2,
    Hc = 3,
    Nox = 4,
}

impl From<IsimPollutant> for Pollutant {
    fn from(p: IsimPollutant) -> Self {
        match p {
            IsimPollutant::Fuel => Pollutant::Fuel,
            IsimPollutant::Co2 => Pollutant::CO2,
            IsimPollutant::Co => Pollutant::CO,
            IsimPollutant::Hc => Pollutant::HC,
            IsimPollutant::Nox => Pollutant::NOx,
        }
    }
}

pub const ISIM_ACTION_STOP: u8 = 0;
pub const ISIM_ACTION_GO: u8 = 1;

/// Opaque environment handle.
pub struct IsimEnv {
    env: Env,
    agents: Vec<AgentObs>,
    conflicts: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: IsimStatus, msg: impl Into<String>) -> IsimStatus {
    set_error(msg);
    status
}

fn env_status(err: EnvError) -> IsimStatus {
    let status = match &err {
        EnvError::Config(_) => IsimStatus::InvalidArgument,
        EnvError::UnknownAgent(_) => IsimStatus::UnknownAgent,
        EnvError::Done => IsimStatus::EpisodeDone,
        EnvError::World(WorldError::Dynamics(_)) => IsimStatus::InvariantBreach,
        EnvError::World(_) => IsimStatus::InvalidArgument,
    };
    fail(status, err.to_string())
}

fn guarded(f: impl FnOnce() -> IsimStatus) -> IsimStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(IsimStatus::Panic, "panic inside intersim"))
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn isim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates an environment and resets it. `scenario` is a scenario file path or
/// `"paper4"`; `warmup_s` seconds run under the FCFS heuristic before the first
/// observation.
///
/// # Safety
/// `scenario` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isim_env_new(
    scenario: *const c_char,
    seed: u64,
    rv_rate: f64,
    horizon_ticks: u64,
    warmup_s: f64,
    out: *mut *mut IsimEnv,
) -> IsimStatus {
    if scenario.is_null() || out.is_null() {
        return fail(IsimStatus::NullPointer, "null scenario or out pointer");
    }
    *out = ptr::null_mut();
    let Ok(name) = CStr::from_ptr(scenario).to_str() else {
        return fail(IsimStatus::InvalidArgument, "scenario is not UTF-8");
    };
    guarded(|| {
        let net = if name == "paper4" {
            paper4()
        } else {
            match load_scenario(name) {
                Ok(n) => n,
                Err(e) => return fail(IsimStatus::InvalidArgument, e.to_string()),
            }
        };
        let net = Arc::new(net);
        let demand = match DemandSpec::from_network(&net, rv_rate, seed) {
            Ok(d) => d,
            Err(e) => return fail(IsimStatus::InvalidArgument, e.to_string()),
        };
        let config = EpisodeConfig { horizon_ticks, warmup_s, wait_normalizer_s: DEFAULT_WAIT_NORMALIZER_S, ..EpisodeConfig::default() };
        match Env::new(net, demand, config, Box::new(FcfsController)) {
            Ok(env) => {
                let agents = env.observations();
                *out = Box::into_raw(Box::new(IsimEnv { env, agents, conflicts: 0 }));
                IsimStatus::Ok
            }
            Err(e) => env_status(e),
        }
    })
}

/// # Safety
/// `env` must come from [`isim_env_new`] and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn isim_env_free(env: *mut IsimEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Starts a new episode with `seed`.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn isim_env_reset(env: *mut IsimEnv, seed: u64) -> IsimStatus {
    let Some(h) = env.as_mut() else {
        return fail(IsimStatus::NullPointer, "null env");
    };
    guarded(|| {
        h.env.reseed(seed);
        match h.env.reset() {
            Ok(agents) => {
                h.agents = agents;
                h.conflicts = 0;
                IsimStatus::Ok
            }
            Err(e) => env_status(e),
        }
    })
}

/// Observation length per agent, or 0 for a null handle.
///
/// # Safety
/// `env` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn isim_env_obs_dim(env: *const IsimEnv) -> usize {
    env.as_ref().map_or(0, |h| h.env.obs_dim())
}

/// Number of RVs awaiting an action.
///
/// # Safety
/// `env` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn isim_env_num_agents(env: *const IsimEnv) -> usize {
    env.as_ref().map_or(0, |h| h.agents.len())
}

/// Simulated time in seconds.
///
/// # Safety
/// `env` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn isim_env_time(env: *const IsimEnv) -> f64 {
    env.as_ref().map_or(0.0, |h| h.env.world().time_s())
}

/// # Safety
/// `env` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn isim_env_done(env: *const IsimEnv) -> bool {
    env.as_ref().is_none_or(|h| h.env.done())
}

/// Conflict-monitor events since the last reset.
///
/// # Safety
/// `env` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn isim_env_conflicts(env: *const IsimEnv) -> u64 {
    env.as_ref().map_or(0, |h| h.conflicts)
}

/// Copies agent `index`'s id and observation. `obs_len` must be at least
/// [`isim_env_obs_dim`].
///
/// # Safety
/// `env` must be a live handle; `id` and `obs` must be writable for 1 and
/// `obs_len` elements.
#[no_mangle]
pub unsafe extern "C" fn isim_env_agent(env: *const IsimEnv, index: usize, id: *mut u64, obs: *mut f64, obs_len: usize) -> IsimStatus {
    let Some(h) = env.as_ref() else {
        return fail(IsimStatus::NullPointer, "null env");
    };
    if id.is_null() || obs.is_null() {
        return fail(IsimStatus::NullPointer, "null id or obs buffer");
    }
    let Some(agent) = h.agents.get(index) else {
        return fail(IsimStatus::InvalidArgument, format!("agent index {index} out of range ({})", h.agents.len()));
    };
    if obs_len < agent.obs.len() {
        return fail(IsimStatus::BufferTooSmall, format!("obs buffer holds {obs_len}, need {}", agent.obs.len()));
    }
    *id = agent.id.0;
    ptr::copy_nonoverlapping(agent.obs.as_ptr(), obs, agent.obs.len());
    IsimStatus::Ok
}

/// Applies `n` actions and advances one step. Agents without an action stop.
/// `rewards`, if not null, receives the reward of each listed agent in order.
///
/// # Safety
/// `env` must be a live handle; `ids` and `actions` must hold `n` elements;
/// `rewards` must be null or writable for `n` elements; `done` must be null
/// or writable.
#[no_mangle]
pub unsafe extern "C" fn isim_env_step(
    env: *mut IsimEnv,
    ids: *const u64,
    actions: *const u8,
    n: usize,
    rewards: *mut f64,
    done: *mut bool,
) -> IsimStatus {
    let Some(h) = env.as_mut() else {
        return fail(IsimStatus::NullPointer, "null env");
    };
    if n > 0 && (ids.is_null() || actions.is_null()) {
        return fail(IsimStatus::NullPointer, "null ids or actions");
    }
    let (ids, acts) =
        if n == 0 { (&[][..], &[][..]) } else { (std::slice::from_raw_parts(ids, n), std::slice::from_raw_parts(actions, n)) };
    let mut map = HashMap::with_capacity(n);
    for (&id, &a) in ids.iter().zip(acts) {
        let action = match a {
            ISIM_ACTION_STOP => Action::Stop,
            ISIM_ACTION_GO => Action::Go,
            other => return fail(IsimStatus::InvalidArgument, format!("action {other} for {id} (expected 0 or 1)")),
        };
        map.insert(VehicleId(id), action);
    }
    guarded(|| match h.env.step(&map) {
        Ok(t) => {
            if !rewards.is_null() {
                let by_id: HashMap<u64, f64> = t.rewards.iter().map(|r| (r.id.0, r.terms.total)).collect();
                for (i, id) in ids.iter().enumerate() {
                    *rewards.add(i) = by_id.get(id).copied().unwrap_or(0.0);
                }
            }
            if !done.is_null() {
                *done = t.done;
            }
            h.conflicts += t.info.conflicts.len() as u64;
            h.agents = t.observations;
            IsimStatus::Ok
        }
        Err(e) => env_status(e),
    })
}

/// Instantaneous emission rate of one PC_G_EU4 vehicle at speed `v` (m/s) and
/// acceleration `a` (m/s^2). Fuel in ml/s, everything else in mg/s.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn isim_emission_rate(pollutant: IsimPollutant, v: f64, a: f64, out: *mut f64) -> IsimStatus {
    if out.is_null() {
        return fail(IsimStatus::NullPointer, "null out");
    }
    if !(v.is_finite() && a.is_finite()) {
        return fail(IsimStatus::InvalidArgument, format!("non-finite speed {v} or acceleration {a}"));
    }
    thread_local! {
        static COEFFS: EmissionCoefficients = EmissionCoefficients::pc_g_eu4();
    }
    *out = COEFFS.with(|c| emission_rate(c, pollutant.into(), v, a));
    IsimStatus::Ok
}
