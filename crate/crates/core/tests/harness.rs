mod support;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use intersim::harness::{build_report, emit_results, evaluate, EvalConfig, METRICS};
use intersim::topology::paper4;
use intersim::PolicyHandle;

use support::{close, window_means_from_csv};

fn cfg(duration_s: u64, window_s: u64, seeds: Vec<u64>) -> EvalConfig {
    EvalConfig { duration_s, window_s, seeds, ..EvalConfig::default() }
}

/// Frame CSV column holding each reported metric.
fn csv_column(metric: &str) -> usize {
    // vehicles, conflicts, fuel, co2, co, hc, nox, wait, accel
    match metric {
        "Fuel" => 2,
        "CO2" => 3,
        "CO" => 4,
        "HC" => 5,
        "NOx" => 6,
        "Wait" => 7,
        "Accel" => 8,
        other => panic!("unexpected metric {other}"),
    }
}

#[test]
fn report_csv_is_recomputable_from_frames() {
    let net = Arc::new(paper4());
    let c = cfg(200, 100, vec![3, 4, 5]);
    let report = evaluate("paper4", &net, &PolicyHandle::fcfs(), 0.4, &c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_results(&report, dir.path()).unwrap();

    let per_seed: Vec<BTreeMap<String, Vec<Option<f64>>>> =
        c.seeds.iter().map(|s| window_means_from_csv(&dir.path().join(format!("frames_{s}.csv")), 101)).collect();

    let mut rdr = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let (scope, metric, cell) = (&rec[0], &rec[1], &rec[2]);
        let col = csv_column(metric);
        let xs: Vec<f64> = per_seed.iter().filter_map(|m| m[scope][col]).collect();
        if cell.is_empty() {
            assert!(xs.is_empty(), "{scope} {metric} blank but frames have values");
        } else {
            let want = xs.iter().sum::<f64>() / xs.len() as f64;
            let got: f64 = cell.parse().unwrap();
            assert!(close(got, want, 1e-9), "{scope} {metric}: {got} vs {want}");
        }
        rows += 1;
    }
    assert_eq!(rows, 5 * (METRICS.len() - 1));
}

#[test]
fn only_window_frames_reach_the_summary() {
    let net = Arc::new(paper4());
    let c = cfg(120, 40, vec![1, 2]);
    let policy = PolicyHandle::fcfs();
    let report = evaluate("paper4", &net, &policy, 0.5, &c).unwrap();

    let mut warm = report.episodes.clone();
    for e in &mut warm {
        for f in e.frames.iter_mut().filter(|f| f.t_s <= 80) {
            for s in &mut f.scopes {
                s.emissions = Some([1e6; 5]);
                s.mean_wait_s = Some(-1.0);
                s.vehicle_count = 0.0;
            }
        }
    }
    let rebuilt = build_report("paper4", &net, &policy, 0.5, &c, warm);
    assert_eq!(rebuilt.runs, report.runs);
    assert_eq!(rebuilt.mean, report.mean);
    assert!(rebuilt.runs.iter().all(|r| r.window_frames == 40));

    let mut edge = report.episodes.clone();
    for e in &mut edge {
        let f = e.frames.iter_mut().find(|f| f.t_s == 81).unwrap();
        f.scopes.last_mut().unwrap().vehicle_count += 1000.0;
    }
    let rebuilt = build_report("paper4", &net, &policy, 0.5, &c, edge);
    assert_ne!(rebuilt.mean, report.mean, "first window frame was ignored");
}

#[test]
fn cost_scales_linearly_with_duration() {
    let net = Arc::new(paper4());
    let time = |duration: u64| {
        (0..3)
            .map(|_| {
                let c = EvalConfig { workers: 1, ..cfg(duration, 50, vec![7]) };
                let start = Instant::now();
                evaluate("paper4", &net, &PolicyHandle::fcfs(), 0.5, &c).unwrap();
                start.elapsed().as_secs_f64() / duration as f64
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (short, long) = (time(200), time(400));
    let ratio = long / short;
    assert!((0.5..=2.0).contains(&ratio), "per-second cost ratio {ratio:.2}");
}
