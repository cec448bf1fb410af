use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use intersim_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(isim_last_error()) }.to_string_lossy().into_owned()
}

fn new_env(scenario: &str, seed: u64, horizon: u64) -> *mut IsimEnv {
    let name = CString::new(scenario).unwrap();
    let mut env = ptr::null_mut();
    let status = unsafe { isim_env_new(name.as_ptr(), seed, 1.0, horizon, 0.0, &mut env) };
    assert_eq!(status, IsimStatus::Ok, "{}", last_error());
    assert!(!env.is_null());
    env
}

fn agents(env: *const IsimEnv) -> Vec<(u64, Vec<f64>)> {
    let dim = unsafe { isim_env_obs_dim(env) };
    (0..unsafe { isim_env_num_agents(env) })
        .map(|i| {
            let mut id = 0;
            let mut obs = vec![0.0; dim];
            let status = unsafe { isim_env_agent(env, i, &mut id, obs.as_mut_ptr(), obs.len()) };
            assert_eq!(status, IsimStatus::Ok, "{}", last_error());
            (id, obs)
        })
        .collect()
}

/// Runs to the horizon with every agent told to go; returns per-step agent counts.
fn run_all_go(env: *mut IsimEnv) -> Vec<usize> {
    let mut counts = vec![];
    let mut done = false;
    while !done {
        let ids: Vec<u64> = agents(env).into_iter().map(|(id, _)| id).collect();
        counts.push(ids.len());
        let acts = vec![ISIM_ACTION_GO; ids.len()];
        let mut rewards = vec![f64::NAN; ids.len()];
        let status = unsafe { isim_env_step(env, ids.as_ptr(), acts.as_ptr(), ids.len(), rewards.as_mut_ptr(), &mut done) };
        assert_eq!(status, IsimStatus::Ok, "{}", last_error());
        assert!(rewards.iter().all(|r| r.is_finite()));
    }
    counts
}

#[test]
fn episode_runs_to_horizon() {
    let env = new_env("paper4", 7, 120);
    assert_eq!(unsafe { isim_env_obs_dim(env) }, 16 + 64);
    let counts = run_all_go(env);
    assert_eq!(counts.len(), 120);
    assert!(counts.iter().sum::<usize>() > 0, "no RV ever reached a stop line");
    unsafe {
        assert!(isim_env_done(env));
        assert_eq!(isim_env_time(env), 120.0);
        assert_eq!(isim_env_conflicts(env), 0);
        let mut done = false;
        assert_eq!(isim_env_step(env, ptr::null(), ptr::null(), 0, ptr::null_mut(), &mut done), IsimStatus::EpisodeDone);
        isim_env_free(env);
    }
}

#[test]
fn reset_with_same_seed_replays() {
    let env = new_env("paper4", 3, 60);
    let first = run_all_go(env);
    assert_eq!(unsafe { isim_env_reset(env, 3) }, IsimStatus::Ok);
    assert_eq!(unsafe { isim_env_time(env) }, 0.0);
    assert_eq!(run_all_go(env), first);
    unsafe { isim_env_free(env) };
}

#[test]
fn null_and_bad_arguments_report_errors() {
    unsafe {
        let mut env = ptr::null_mut();
        assert_eq!(isim_env_new(ptr::null(), 1, 1.0, 10, 0.0, &mut env), IsimStatus::NullPointer);
        assert!(!last_error().is_empty());

        let missing = CString::new("/nonexistent/scenario.scn").unwrap();
        assert_eq!(isim_env_new(missing.as_ptr(), 1, 1.0, 10, 0.0, &mut env), IsimStatus::InvalidArgument);
        assert!(env.is_null());
        assert!(last_error().contains("scenario"), "{}", last_error());

        let paper = CString::new("paper4").unwrap();
        assert_eq!(isim_env_new(paper.as_ptr(), 1, 1.5, 10, 0.0, &mut env), IsimStatus::InvalidArgument);
        assert_eq!(isim_env_new(paper.as_ptr(), 1, 1.0, 0, 0.0, &mut env), IsimStatus::InvalidArgument);

        assert_eq!(isim_env_reset(ptr::null_mut(), 1), IsimStatus::NullPointer);
        assert_eq!(isim_env_obs_dim(ptr::null()), 0);
        isim_env_free(ptr::null_mut());
    }
}

#[test]
fn agent_accessor_checks_bounds_and_buffer() {
    let env = new_env("paper4", 11, 200);
    let mut done = false;
    while unsafe { isim_env_num_agents(env) } == 0 && !done {
        assert_eq!(unsafe { isim_env_step(env, ptr::null(), ptr::null(), 0, ptr::null_mut(), &mut done) }, IsimStatus::Ok);
    }
    assert!(!done, "no RV reached a stop line within the horizon");
    let mut id = 0;
    let mut small = [0.0; 4];
    unsafe {
        assert_eq!(isim_env_agent(env, 0, &mut id, small.as_mut_ptr(), small.len()), IsimStatus::BufferTooSmall);
        let n = isim_env_num_agents(env);
        let mut obs = vec![0.0; isim_env_obs_dim(env)];
        assert_eq!(isim_env_agent(env, n, &mut id, obs.as_mut_ptr(), obs.len()), IsimStatus::InvalidArgument);

        let bogus = [u64::MAX];
        let go = [ISIM_ACTION_GO];
        assert_eq!(isim_env_step(env, bogus.as_ptr(), go.as_ptr(), 1, ptr::null_mut(), &mut done), IsimStatus::UnknownAgent);
        let real = [agents(env)[0].0];
        let bad = [9u8];
        assert_eq!(isim_env_step(env, real.as_ptr(), bad.as_ptr(), 1, ptr::null_mut(), &mut done), IsimStatus::InvalidArgument);
        isim_env_free(env);
    }
}

#[test]
fn emission_rate_matches_polynomial() {
    // Independent evaluation of the fuel row at v = 10 m/s, a = 0.5 m/s^2.
    let (v, a) = (10.0, 0.5);
    let expected = (3014.0 + 299.3 * a * v - 149.0 * v + 9.014 * v * v) / 2671.2;
    let mut out = 0.0;
    assert_eq!(unsafe { isim_emission_rate(IsimPollutant::Fuel, v, a, &mut out) }, IsimStatus::Ok);
    assert!((out - expected).abs() < 1e-12, "{out} vs {expected}");

    assert_eq!(unsafe { isim_emission_rate(IsimPollutant::Nox, 0.0, 0.0, &mut out) }, IsimStatus::Ok);
    assert!((out - 3217.312 / 2671.2).abs() < 1e-12);

    assert_eq!(unsafe { isim_emission_rate(IsimPollutant::Co2, f64::NAN, 0.0, &mut out) }, IsimStatus::InvalidArgument);
    assert_eq!(unsafe { isim_emission_rate(IsimPollutant::Co2, 1.0, 0.0, ptr::null_mut()) }, IsimStatus::NullPointer);
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/intersim.h");
    let text = std::fs::read_to_string(&header).expect("header is generated by the build script");
    for symbol in ["isim_env_new", "isim_env_step", "isim_emission_rate", "isim_last_error", "ISIM_STATUS_INVARIANT_BREACH"] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let Ok(status) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"]).arg(&header).status() else {
        eprintln!("no C compiler available; skipped syntax check");
        return;
    };
    assert!(status.success());
}
