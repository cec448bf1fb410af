//! HBEFA3 emission polynomial, the coefficient table loader and per-scope
//! aggregation of per-vehicle rates.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::VehicleId;
use crate::world::{VehicleLocation, World};

pub const DEFAULT_CLASS: &str = "PC_G_EU4";
pub const DEFAULT_SCALE: f64 = 2671.2;
pub const PC_G_EU4_CSV: &str = include_str!("../data/hbefa3_pc_g_eu4.csv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pollutant {
    Fuel,
    CO2,
    CO,
    HC,
    NOx,
}

impl Pollutant {
    pub const ALL: [Pollutant; 5] = [Pollutant::Fuel, Pollutant::CO2, Pollutant::CO, Pollutant::HC, Pollutant::NOx];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Pollutant::Fuel => "Fuel",
            Pollutant::CO2 => "CO2",
            Pollutant::CO => "CO",
            Pollutant::HC => "HC",
            Pollutant::NOx => "NOx",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Pollutant::Fuel => "ml/s",
            _ => "mg/s",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Pollutant {
    type Err = EmissionsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pollutant::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| EmissionsError::UnknownPollutant(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum EmissionsError {
    #[error("unknown pollutant {0:?}")]
    UnknownPollutant(String),
    #[error("unknown intersection index {0}")]
    UnknownIntersection(usize),
    #[error("emission class {class:?} not found in coefficient table")]
    UnknownClass { class: String },
    #[error("coefficient table for {class}: {message}")]
    Invalid { class: String, message: String },
    #[error("coefficient table: {0}")]
    Csv(#[from] csv::Error),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionCoefficients {
    pub class: String,
    /// f1..f6 per pollutant, indexed by [`Pollutant::index`].
    pub f: [[f64; 6]; 5],
    pub scale: f64,
}

#[derive(Deserialize)]
struct Row {
    class: String,
    pollutant: String,
    f1: f64,
    f2: f64,
    f3: f64,
    f4: f64,
    f5: f64,
    f6: f64,
    scale: f64,
}

impl EmissionCoefficients {
    /// The bundled PC_G_EU4 table.
    pub fn pc_g_eu4() -> Self {
        Self::from_csv_str(PC_G_EU4_CSV, DEFAULT_CLASS).expect("bundled coefficient table is valid")
    }

    pub fn load(path: impl AsRef<Path>, class: &str) -> Result<Self, EmissionsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EmissionsError::Io { path: path.display().to_string(), source })?;
        Self::from_csv_str(&text, class)
    }

    /// Parses a coefficient CSV (`#` starts a comment line) and extracts one class.
    pub fn from_csv_str(text: &str, class: &str) -> Result<Self, EmissionsError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        let invalid = |message: String| EmissionsError::Invalid { class: class.to_string(), message };
        let mut f = [[f64::NAN; 6]; 5];
        let mut scale: Option<f64> = None;
        let mut seen = [false; 5];
        for row in reader.deserialize::<Row>() {
            let row = row?;
            if row.class != class {
                continue;
            }
            let p: Pollutant = row.pollutant.parse()?;
            if seen[p.index()] {
                return Err(invalid(format!("duplicate row for {p}")));
            }
            seen[p.index()] = true;
            f[p.index()] = [row.f1, row.f2, row.f3, row.f4, row.f5, row.f6];
            if !(row.scale > 0.0 && row.scale.is_finite()) {
                return Err(invalid(format!("scale for {p} must be positive, got {}", row.scale)));
            }
            match scale {
                Some(s) if s != row.scale => return Err(invalid(format!("inconsistent scale {} for {p}", row.scale))),
                _ => scale = Some(row.scale),
            }
        }
        if !seen.iter().any(|s| *s) {
            return Err(EmissionsError::UnknownClass { class: class.to_string() });
        }
        if let Some(missing) = Pollutant::ALL.iter().find(|p| !seen[p.index()]) {
            return Err(invalid(format!("missing pollutant {missing}")));
        }
        let scale = scale.expect("at least one row");
        if class == DEFAULT_CLASS && scale != DEFAULT_SCALE {
            return Err(invalid(format!("scale must be {DEFAULT_SCALE}, got {scale}")));
        }
        Ok(Self { class: class.to_string(), f, scale })
    }

    pub fn get(&self, p: Pollutant) -> &[f64; 6] {
        &self.f[p.index()]
    }
}

/// `max((f1 + f2·a·v + f3·a²·v + f4·v + f5·v² + f6·v³) / s, 0)`.
pub fn emission_rate(coeffs: &EmissionCoefficients, p: Pollutant, v: f64, a: f64) -> f64 {
    let [f1, f2, f3, f4, f5, f6] = *coeffs.get(p);
    let poly = f1 + f2 * a * v + f3 * a * a * v + f4 * v + f5 * v * v + f6 * v * v * v;
    (poly / coeffs.scale).max(0.0)
}

pub fn emission_rate_by_label(coeffs: &EmissionCoefficients, pollutant: &str, v: f64, a: f64) -> Result<f64, EmissionsError> {
    Ok(emission_rate(coeffs, pollutant.parse()?, v, a))
}

/// Rates per pollutant, indexed by [`Pollutant::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionSample(pub [f64; 5]);

impl EmissionSample {
    pub fn at(coeffs: &EmissionCoefficients, v: f64, a: f64) -> Self {
        Self(Pollutant::ALL.map(|p| emission_rate(coeffs, p, v, a)))
    }

    pub fn get(&self, p: Pollutant) -> f64 {
        self.0[p.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleSample {
    pub id: VehicleId,
    pub location: VehicleLocation,
    pub sample: EmissionSample,
}

pub fn sample_world(world: &World, coeffs: &EmissionCoefficients) -> Vec<VehicleSample> {
    world
        .vehicles()
        .map(|(location, v)| VehicleSample { id: v.id, location, sample: EmissionSample::at(coeffs, v.speed_mps, v.accel_mps2) })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    Intersection(usize),
    Network,
}

impl Scope {
    pub fn contains(self, loc: &VehicleLocation) -> bool {
        match self {
            Scope::Network => true,
            Scope::Intersection(ix) => loc.scope() == Some(ix),
        }
    }
}

/// Mean per-vehicle rate over the vehicles in `scope`; `None` when the scope is empty.
pub fn aggregate(samples: &[VehicleSample], scope: Scope, world: &World) -> Result<Option<EmissionSample>, EmissionsError> {
    if let Scope::Intersection(ix) = scope {
        if ix >= world.network().intersections.len() {
            return Err(EmissionsError::UnknownIntersection(ix));
        }
    }
    let mut sum = [0.0; 5];
    let mut n = 0usize;
    for s in samples.iter().filter(|s| scope.contains(&s.location)) {
        for (acc, x) in sum.iter_mut().zip(s.sample.0) {
            *acc += x;
        }
        n += 1;
    }
    Ok((n > 0).then(|| EmissionSample(sum.map(|x| x / n as f64))))
}
