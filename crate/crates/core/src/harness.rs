//! Experiment runner: per-second metric frames, seeded evaluations,
//! penetration sweeps, acceleration profiles and result files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ConflictEvent;
use crate::demand::{DemandError, DemandSpec};
use crate::dynamics::IdmParams;
use crate::emissions::{EmissionCoefficients, EmissionSample, Pollutant};
use crate::policies::{PolicyError, PolicyHandle, PolicyKind};
use crate::topology::NetworkSpec;
use crate::world::{TickReport, World, WorldError, WorldStats};

pub const BASELINE_LABEL: &str = "HVs w/ TS";
pub const NETWORK_SCOPE: &str = "Network";

/// Reported metrics, in column order.
pub const METRICS: [&str; 8] = ["Fuel", "CO2", "CO", "HC", "NOx", "Wait", "Accel", "Vehicles"];
const REPORT_METRICS: usize = 7;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("episode with seed {seed} (rate {rate}) failed: {source}")]
    Episode { seed: u64, rate: f64, source: WorldError },
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// True for a simulation invariant breach, as opposed to bad input.
    pub fn is_invariant_breach(&self) -> bool {
        matches!(self, HarnessError::Episode { source: WorldError::Dynamics(_), .. })
    }
}

/// One scope's aggregates over one simulated second.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScopeMetrics {
    /// Mean per-vehicle rate per pollutant; absent when the scope was empty.
    pub emissions: Option<[f64; 5]>,
    pub mean_wait_s: Option<f64>,
    pub mean_accel_mps2: Option<f64>,
    pub vehicle_count: f64,
    pub conflict_count: u32,
}

impl ScopeMetrics {
    /// Value of metric `i` of [`METRICS`].
    pub fn metric(&self, i: usize) -> Option<f64> {
        match i {
            0..=4 => self.emissions.map(|e| e[i]),
            5 => self.mean_wait_s,
            6 => self.mean_accel_mps2,
            7 => Some(self.vehicle_count),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    /// End of the second this frame covers; the first frame has `t_s = 1`.
    pub t_s: u64,
    /// Intersections in scenario order, then the network.
    pub scopes: Vec<ScopeMetrics>,
}

#[derive(Clone, Debug, Default)]
struct ScopeAcc {
    emissions: [f64; 5],
    wait: f64,
    accel: f64,
    present: u32,
    vehicles: f64,
    conflicts: u32,
}

/// Turns ticks into per-second frames. With `dt < 1` every tick's scope
/// means are averaged within the second.
pub struct FrameRecorder {
    coeffs: Arc<EmissionCoefficients>,
    ids: Vec<String>,
    ticks_per_s: u64,
    ticks: u64,
    acc: Vec<ScopeAcc>,
}

impl FrameRecorder {
    pub fn new(world: &World, coeffs: Arc<EmissionCoefficients>) -> Self {
        let n = world.network().intersections.len() + 1;
        Self {
            coeffs,
            ids: world.network().intersections.iter().map(|i| i.id.clone()).collect(),
            ticks_per_s: ((1.0 / world.dt()).round() as u64).max(1),
            ticks: world.tick_count(),
            acc: vec![ScopeAcc::default(); n],
        }
    }

    pub fn record(&mut self, world: &World, report: &TickReport) -> Option<MetricsFrame> {
        let n = self.acc.len();
        let net = n - 1;
        let mut sums = vec![([0.0f64; 5], 0.0f64, 0.0f64, 0u32); n];
        for (loc, v) in world.vehicles() {
            let e = EmissionSample::at(&self.coeffs, v.speed_mps, v.accel_mps2);
            let targets = [loc.scope(), Some(net)];
            for s in targets.into_iter().flatten() {
                let slot = &mut sums[s];
                for (acc, x) in slot.0.iter_mut().zip(e.0) {
                    *acc += x;
                }
                slot.1 += v.wait_s;
                slot.2 += v.accel_mps2;
                slot.3 += 1;
            }
        }
        for (acc, (em, wait, accel, count)) in self.acc.iter_mut().zip(sums) {
            acc.vehicles += count as f64;
            if count > 0 {
                let k = count as f64;
                for (a, x) in acc.emissions.iter_mut().zip(em) {
                    *a += x / k;
                }
                acc.wait += wait / k;
                acc.accel += accel / k;
                acc.present += 1;
            }
        }
        for c in &report.conflicts {
            if let Some(ix) = self.ids.iter().position(|id| *id == c.intersection) {
                self.acc[ix].conflicts += 1;
            }
            self.acc[net].conflicts += 1;
        }
        self.ticks += 1;
        if !self.ticks.is_multiple_of(self.ticks_per_s) {
            return None;
        }
        let tps = self.ticks_per_s as f64;
        let scopes = self
            .acc
            .iter_mut()
            .map(|acc| {
                let out = if acc.present > 0 {
                    let k = acc.present as f64;
                    ScopeMetrics {
                        emissions: Some(acc.emissions.map(|x| x / k)),
                        mean_wait_s: Some(acc.wait / k),
                        mean_accel_mps2: Some(acc.accel / k),
                        vehicle_count: acc.vehicles / tps,
                        conflict_count: acc.conflicts,
                    }
                } else {
                    ScopeMetrics { vehicle_count: acc.vehicles / tps, conflict_count: acc.conflicts, ..ScopeMetrics::default() }
                };
                *acc = ScopeAcc::default();
                out
            })
            .collect();
        Some(MetricsFrame { t_s: self.ticks / self.ticks_per_s, scopes })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub duration_s: u64,
    /// Trailing seconds averaged into the report.
    pub window_s: u64,
    pub seeds: Vec<u64>,
    pub dt: f64,
    /// Concurrent episodes; 0 uses every core.
    pub workers: usize,
    pub profile_window: usize,
    pub idm: IdmParams,
    /// Per-tick trajectory CSV for the first seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            duration_s: 1000,
            window_s: 500,
            seeds: (1..=10).collect(),
            dt: 1.0,
            workers: 0,
            profile_window: 10,
            idm: IdmParams::default(),
            trajectory: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.duration_s == 0 || self.window_s == 0 || self.window_s > self.duration_s {
            return bad(format!("window {} s must lie in (0, duration {} s]", self.window_s, self.duration_s));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let per_s = 1.0 / self.dt;
        if !(self.dt > 0.0 && self.dt <= 1.0) || (per_s - per_s.round()).abs() > 1e-9 {
            return bad(format!("dt {} must divide one second", self.dt));
        }
        if self.profile_window == 0 {
            return bad("profile window must be at least 1".into());
        }
        Ok(())
    }

    /// First frame (by `t_s`) inside the reporting window.
    pub fn window_start(&self) -> u64 {
        self.duration_s - self.window_s + 1
    }
}

/// Raw output of one seeded run.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub frames: Vec<MetricsFrame>,
    pub conflicts: Vec<ConflictEvent>,
    pub stats: WorldStats,
}

pub fn run_episode(
    net: &Arc<NetworkSpec>,
    coeffs: &Arc<EmissionCoefficients>,
    policy: &PolicyHandle,
    penetration: f64,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<Episode, HarnessError> {
    let demand = DemandSpec::from_network(net, penetration, seed)?;
    let fail = |source: WorldError| HarnessError::Episode { seed, rate: penetration, source };
    let mut world = World::new(net.clone(), Some(demand), cfg.idm, cfg.dt).map_err(fail)?;
    if let Some(path) = cfg.trajectory.as_ref().filter(|_| cfg.seeds.first() == Some(&seed)) {
        let file = fs::File::create(path).map_err(io_err(path))?;
        world.log_trajectories(Box::new(std::io::BufWriter::new(file))).map_err(fail)?;
    }
    let mut ctl = policy.build(net, seed, penetration).map_err(|e| fail(e.into()))?;
    let mut recorder = FrameRecorder::new(&world, coeffs.clone());
    let ticks = (cfg.duration_s as f64 / cfg.dt).round() as u64;
    let mut frames = Vec::with_capacity(cfg.duration_s as usize);
    let mut conflicts = Vec::new();
    for _ in 0..ticks {
        let report = world.tick(ctl.as_mut()).map_err(fail)?;
        if let Some(frame) = recorder.record(&world, &report) {
            frames.push(frame);
        }
        conflicts.extend(report.conflicts);
    }
    Ok(Episode { seed, frames, conflicts, stats: world.stats() })
}

/// Means of every metric over a set of frames, for one scope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScopeSummary {
    pub scope: String,
    /// Indexed like [`METRICS`]; absent when no frame had the scope populated.
    pub values: [Option<f64>; 8],
    pub conflicts: u64,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(scope: &str, idx: usize, frames: &[&MetricsFrame]) -> ScopeSummary {
    ScopeSummary {
        scope: scope.to_string(),
        values: std::array::from_fn(|m| mean(frames.iter().map(|f| f.scopes[idx].metric(m)))),
        conflicts: frames.iter().map(|f| f.scopes[idx].conflict_count as u64).sum(),
    }
}

fn combine(scope: &str, parts: &[&ScopeSummary]) -> ScopeSummary {
    ScopeSummary {
        scope: scope.to_string(),
        values: std::array::from_fn(|m| mean(parts.iter().map(|p| p.values[m]))),
        conflicts: parts.iter().map(|p| p.conflicts).sum(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub window_frames: usize,
    pub scopes: Vec<ScopeSummary>,
    pub stats: WorldStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub policy: String,
    pub penetration: f64,
    pub label: String,
    pub seeds: Vec<u64>,
    pub duration_s: u64,
    pub window_s: u64,
    pub dt: f64,
    pub metrics: Vec<String>,
    pub runs: Vec<RunSummary>,
    /// Per scope, the mean over runs of each run's window mean.
    pub mean: Vec<ScopeSummary>,
    /// Unweighted mean of the per-intersection means.
    pub intersection_average: ScopeSummary,
    /// Smoothed mean acceleration per scope, one row per second.
    pub profile: Vec<Vec<Option<f64>>>,
    #[serde(skip)]
    pub episodes: Vec<Episode>,
}

impl RunReport {
    pub fn scope_names(&self) -> Vec<&str> {
        self.mean.iter().map(|s| s.scope.as_str()).collect()
    }

    pub fn total_conflicts(&self) -> u64 {
        self.episodes.iter().map(|e| e.conflicts.len() as u64).sum()
    }
}

pub fn column_label(policy: &PolicyHandle, penetration: f64) -> String {
    if policy.kind == PolicyKind::SignalBaseline && penetration == 0.0 {
        BASELINE_LABEL.to_string()
    } else {
        format!("{}%", (penetration * 100.0).round())
    }
}

/// Aggregates raw episodes into a report. Only frames inside the window
/// contribute to the summaries.
pub fn build_report(
    scenario: &str,
    net: &NetworkSpec,
    policy: &PolicyHandle,
    penetration: f64,
    cfg: &EvalConfig,
    episodes: Vec<Episode>,
) -> RunReport {
    let mut names: Vec<String> = net.intersections.iter().map(|i| i.id.clone()).collect();
    names.push(NETWORK_SCOPE.to_string());
    let start = cfg.window_start();
    let runs: Vec<RunSummary> = episodes
        .iter()
        .map(|e| {
            let window: Vec<&MetricsFrame> = e.frames.iter().filter(|f| f.t_s >= start && f.t_s <= cfg.duration_s).collect();
            RunSummary {
                seed: e.seed,
                window_frames: window.len(),
                scopes: names.iter().enumerate().map(|(i, n)| summarize(n, i, &window)).collect(),
                stats: e.stats,
            }
        })
        .collect();
    let means: Vec<ScopeSummary> =
        names.iter().enumerate().map(|(i, n)| combine(n, &runs.iter().map(|r| &r.scopes[i]).collect::<Vec<_>>())).collect();
    let intersection_average = combine("Average", &means[..means.len() - 1].iter().collect::<Vec<_>>());
    let profile = (0..cfg.duration_s as usize)
        .map(|t| {
            (0..names.len())
                .map(|s| mean(episodes.iter().map(|e| e.frames.get(t).and_then(|f| f.scopes[s].mean_accel_mps2))))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    let smoothed_cols: Vec<Vec<Option<f64>>> =
        (0..names.len()).map(|s| moving_average(&profile.iter().map(|row| row[s]).collect::<Vec<_>>(), cfg.profile_window)).collect();
    let profile = (0..profile.len()).map(|t| smoothed_cols.iter().map(|c| c[t]).collect()).collect();
    RunReport {
        scenario: scenario.to_string(),
        policy: policy.to_string(),
        penetration,
        label: column_label(policy, penetration),
        seeds: cfg.seeds.clone(),
        duration_s: cfg.duration_s,
        window_s: cfg.window_s,
        dt: cfg.dt,
        metrics: METRICS.iter().map(|s| s.to_string()).collect(),
        runs,
        mean: means,
        intersection_average,
        profile,
        episodes,
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Runs every (configuration, seed) pair concurrently; results come back in
/// job order.
fn run_jobs(net: &Arc<NetworkSpec>, configs: &[(PolicyHandle, f64)], cfg: &EvalConfig) -> Result<Vec<Vec<Episode>>, HarnessError> {
    cfg.validate()?;
    for (policy, rate) in configs {
        policy.validate(net)?;
        if !(0.0..=1.0).contains(rate) {
            return Err(DemandError::InvalidPenetration(*rate).into());
        }
    }
    let coeffs = Arc::new(EmissionCoefficients::pc_g_eu4());
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|c| cfg.seeds.iter().map(move |s| (c, *s))).collect();
    let results: Vec<Result<Episode, HarnessError>> = pool(cfg.workers)?
        .install(|| jobs.par_iter().map(|(c, seed)| run_episode(net, &coeffs, &configs[*c].0, configs[*c].1, *seed, cfg)).collect());
    let mut grouped: Vec<Vec<Episode>> = vec![Vec::new(); configs.len()];
    for ((c, _), r) in jobs.iter().zip(results) {
        grouped[*c].push(r?);
    }
    Ok(grouped)
}

pub fn evaluate(
    scenario: &str,
    net: &Arc<NetworkSpec>,
    policy: &PolicyHandle,
    penetration: f64,
    cfg: &EvalConfig,
) -> Result<RunReport, HarnessError> {
    let mut episodes = run_jobs(net, &[(policy.clone(), penetration)], cfg)?;
    Ok(build_report(scenario, net, policy, penetration, cfg, episodes.remove(0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Baseline first, then one report per rate.
    pub reports: Vec<RunReport>,
}

/// One evaluation per rate with `policy`, plus the signal baseline at 0%.
pub fn sweep(
    scenario: &str,
    net: &Arc<NetworkSpec>,
    policy: &PolicyHandle,
    penetrations: &[f64],
    cfg: &EvalConfig,
) -> Result<SweepReport, HarnessError> {
    let mut configs = vec![(PolicyHandle::signal(), 0.0)];
    configs.extend(penetrations.iter().map(|r| (policy.clone(), *r)));
    let grouped = run_jobs(net, &configs, cfg)?;
    let reports = configs.iter().zip(grouped).map(|((p, r), eps)| build_report(scenario, net, p, *r, cfg, eps)).collect();
    Ok(SweepReport { reports })
}

/// `start:end:step`, inclusive of `end`.
pub fn parse_rates(spec: &str) -> Result<Vec<f64>, HarnessError> {
    let bad = || HarnessError::Config(format!("rates {spec:?}: expected start:end:step or a comma list"));
    if spec.trim().is_empty() {
        return Ok(Vec::new());
    }
    if let [a, b, s] = spec.split(':').collect::<Vec<_>>()[..] {
        let (a, b, s): (f64, f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?, s.parse().map_err(|_| bad())?);
        if !(s > 0.0) || b < a {
            return Err(bad());
        }
        let n = ((b - a) / s + 1e-9).floor() as usize;
        // Rounded so 0.1 steps print as 10%, 20%, … rather than 30.000000000000004%.
        return Ok((0..=n).map(|k| ((a + k as f64 * s) * 1e9).round() / 1e9).collect());
    }
    spec.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect()
}

/// Trailing moving average; the first `window - 1` points average what is
/// available. Absent values are skipped.
pub fn moving_average(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let window = window.max(1);
    (0..series.len()).map(|i| mean(series[i + 1 - window.min(i + 1)..=i].iter().copied())).collect()
}

/// Smoothed mean acceleration of scope `scope` over a run's frames.
pub fn acceleration_profile(frames: &[MetricsFrame], scope: usize, window: usize) -> Vec<Option<f64>> {
    moving_average(&frames.iter().map(|f| f.scopes[scope].mean_accel_mps2).collect::<Vec<_>>(), window)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    csv::Writer::from_path(path).map_err(|source| HarnessError::Csv { path: path.to_path_buf(), source })
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let wrap = |source| HarnessError::Csv { path: path.to_path_buf(), source };
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

pub const FRAME_COLUMNS: [&str; 11] =
    ["t", "scope", "vehicles", "conflicts", "fuel_ml_s", "co2_mg_s", "co_mg_s", "hc_mg_s", "nox_mg_s", "mean_wait_s", "mean_accel_mps2"];

/// Table with one row per (metric, scope) and one value column per report.
fn table(reports: &[&RunReport]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["Intersection".to_string(), "Metric".to_string()];
    header.extend(reports.iter().map(|r| r.label.clone()));
    let mut rows = Vec::new();
    if let Some(first) = reports.first() {
        for (m, metric) in METRICS.iter().enumerate().take(REPORT_METRICS) {
            for (s, scope) in first.scope_names().into_iter().enumerate() {
                let mut row = vec![scope.to_string(), metric.to_string()];
                row.extend(reports.iter().map(|r| fmt_opt(r.mean[s].values[m])));
                rows.push(row);
            }
        }
    }
    (header, rows)
}

/// Writes `frames_<seed>.csv`, `conflicts.csv`, `report.csv`, `report.struct`
/// and `profile.csv` into `dir`.
pub fn emit_results(report: &RunReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let names = report.scope_names();
    for e in &report.episodes {
        let rows: Vec<Vec<String>> = e
            .frames
            .iter()
            .flat_map(|f| {
                f.scopes.iter().zip(&names).map(move |(s, name)| {
                    let mut row = vec![f.t_s.to_string(), name.to_string(), s.vehicle_count.to_string(), s.conflict_count.to_string()];
                    row.extend(Pollutant::ALL.map(|p| fmt_opt(s.emissions.map(|x| x[p.index()]))));
                    row.push(fmt_opt(s.mean_wait_s));
                    row.push(fmt_opt(s.mean_accel_mps2));
                    row
                })
            })
            .collect();
        let header: Vec<String> = FRAME_COLUMNS.iter().map(|s| s.to_string()).collect();
        write_rows(&dir.join(format!("frames_{}.csv", e.seed)), &header, &rows)?;
    }

    let conflict_rows: Vec<Vec<String>> = report
        .episodes
        .iter()
        .flat_map(|e| {
            e.conflicts.iter().map(move |c| {
                vec![e.seed.to_string(), c.t.to_string(), c.intersection.clone(), c.movement_a.to_string(), c.movement_b.to_string()]
            })
        })
        .collect();
    let header: Vec<String> = ["seed", "t", "intersection", "movement_a", "movement_b"].iter().map(|s| s.to_string()).collect();
    write_rows(&dir.join("conflicts.csv"), &header, &conflict_rows)?;

    let (header, rows) = table(&[report]);
    write_rows(&dir.join("report.csv"), &header, &rows)?;

    let mut header = vec!["t".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = report
        .profile
        .iter()
        .enumerate()
        .map(|(t, row)| std::iter::once((t + 1).to_string()).chain(row.iter().map(|v| fmt_opt(*v))).collect())
        .collect();
    write_rows(&dir.join("profile.csv"), &header, &rows)?;

    let path = dir.join("report.struct");
    fs::write(&path, serde_json::to_string_pretty(report)? + "\n").map_err(io_err(&path))
}

/// Writes `sweep.csv` and `sweep.struct`, plus every report's own files
/// under a subdirectory named after its column.
pub fn emit_sweep(sweep: &SweepReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let reports: Vec<&RunReport> = sweep.reports.iter().collect();
    let (header, rows) = table(&reports);
    write_rows(&dir.join("sweep.csv"), &header, &rows)?;
    for r in &sweep.reports {
        let sub =
            if r.label == BASELINE_LABEL { "baseline".to_string() } else { format!("rate_{:03}", (r.penetration * 100.0).round() as u32) };
        emit_results(r, &dir.join(sub))?;
    }
    let path = dir.join("sweep.struct");
    fs::write(&path, serde_json::to_string_pretty(sweep)? + "\n").map_err(io_err(&path))
}
