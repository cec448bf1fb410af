//! Oracles shared by the integration tests. Nothing here calls into the
//! library's own formulas.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

/// PC_G_EU4 rows as (f1..f6) with mass rows in the raw per-hour form, before
/// the common-scale rescale.
const RAW: [(&str, [f64; 6]); 5] = [
    ("Fuel", [3014.0, 299.3, 0.0, -149.0, 9.014, 0.0]),
    ("CO2", [9449.0, 938.4, 0.0, -467.1, 28.26, 0.0]),
    ("CO", [593.2, 19.32, 0.0, -73.25, 2.086, 0.0]),
    ("HC", [2.923, 0.1113, 0.0, -0.3476, 0.01032, 0.0]),
    ("NOx", [4.336, 0.4428, 0.0, -0.3204, 0.01371, 0.0]),
];

/// Longhand emission rate: fuel in ml/s, the rest in mg/s.
pub fn emission_oracle(pollutant: usize, v: f64, a: f64) -> f64 {
    let (_, f) = RAW[pollutant];
    let poly = f[0] + f[1] * a * v + f[2] * a * a * v + f[3] * v + f[4] * v * v + f[5] * v * v * v;
    let rate = if pollutant == 0 { poly / 2671.2 } else { poly / 3.6 };
    if rate < 0.0 {
        0.0
    } else {
        rate
    }
}

/// Sum of the absolute polynomial terms, in output units. Rounding error of
/// any evaluation order is bounded relative to this, not to the result.
pub fn emission_magnitude(pollutant: usize, v: f64, a: f64) -> f64 {
    let (_, f) = RAW[pollutant];
    let terms = [f[0], f[1] * a * v, f[2] * a * a * v, f[3] * v, f[4] * v * v, f[5] * v * v * v];
    let sum: f64 = terms.iter().map(|t| t.abs()).sum();
    if pollutant == 0 {
        sum / 2671.2
    } else {
        sum / 3.6
    }
}

/// The published non-conflicting direction pairs, with W-C read as W-S.
pub const NON_CONFLICTING: [(&str, &str); 8] =
    [("N-S", "N-L"), ("E-S", "E-L"), ("E-L", "W-L"), ("S-S", "N-S"), ("S-L", "N-L"), ("S-S", "S-L"), ("W-S", "E-S"), ("W-S", "W-L")];

pub const DIRECTIONS: [&str; 8] = ["N-S", "N-L", "E-S", "E-L", "S-S", "S-L", "W-S", "W-L"];

pub fn expected_conflict(a: &str, b: &str) -> bool {
    a != b && !NON_CONFLICTING.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
}

/// Per-scope, per-column window means recomputed from a frames CSV, skipping
/// empty cells. Columns are the CSV's metric columns (everything after `t`
/// and `scope`).
pub fn window_means_from_csv(path: &Path, first_t: u64) -> BTreeMap<String, Vec<Option<f64>>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    let ncols = header.len() - 2;
    let mut acc: BTreeMap<String, Vec<(f64, usize)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let t: u64 = rec[0].parse().unwrap();
        if t < first_t {
            continue;
        }
        let slot = acc.entry(rec[1].to_string()).or_insert_with(|| vec![(0.0, 0); ncols]);
        for (k, cell) in rec.iter().skip(2).enumerate() {
            if !cell.is_empty() {
                slot[k].0 += cell.parse::<f64>().unwrap();
                slot[k].1 += 1;
            }
        }
    }
    acc.into_iter().map(|(scope, cols)| (scope, cols.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())).collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
