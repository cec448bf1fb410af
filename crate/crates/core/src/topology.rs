//! Intersections, lanes, movements, the conflict relation and the scenario file.
//!
//! A scenario is a TOML document with a `[network]` table, one
//! `[intersection.<id>]` table per intersection (in file order), any number of
//! `[[connector]]` entries and optional `[signals.<id>]` tables. All units are
//! SI (meters, m/s, seconds) except demand, which is vehicles/hour per lane.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{default_signal_plan, SignalPhase, SignalPlan};

/// The side of the intersection a vehicle arrives from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    North,
    East,
    South,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::North, Approach::East, Approach::South, Approach::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            Approach::North => 'N',
            Approach::East => 'E',
            Approach::South => 'S',
            Approach::West => 'W',
        }
    }

    pub fn opposite(self) -> Approach {
        Approach::ALL[(self.index() + 2) % 4]
    }

    /// Side reached by turning left from this approach (right-hand traffic).
    pub fn left_of(self) -> Approach {
        Approach::ALL[(self.index() + 1) % 4]
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "N" | "NORTH" => Ok(Approach::North),
            "E" | "EAST" => Ok(Approach::East),
            "S" | "SOUTH" => Ok(Approach::South),
            "W" | "WEST" => Ok(Approach::West),
            other => Err(format!("unknown approach `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Maneuver {
    Straight,
    Left,
}

/// One of the eight (approach, maneuver) pairs. Right turns are not representable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MovementDirection {
    pub approach: Approach,
    pub maneuver: Maneuver,
}

impl MovementDirection {
    /// Canonical order used everywhere a per-direction vector is laid out:
    /// N-S, N-L, E-S, E-L, S-S, S-L, W-S, W-L.
    pub const ALL: [MovementDirection; 8] = [
        MovementDirection::new(Approach::North, Maneuver::Straight),
        MovementDirection::new(Approach::North, Maneuver::Left),
        MovementDirection::new(Approach::East, Maneuver::Straight),
        MovementDirection::new(Approach::East, Maneuver::Left),
        MovementDirection::new(Approach::South, Maneuver::Straight),
        MovementDirection::new(Approach::South, Maneuver::Left),
        MovementDirection::new(Approach::West, Maneuver::Straight),
        MovementDirection::new(Approach::West, Maneuver::Left),
    ];

    pub const fn new(approach: Approach, maneuver: Maneuver) -> Self {
        Self { approach, maneuver }
    }

    pub fn index(self) -> usize {
        self.approach.index() * 2
            + match self.maneuver {
                Maneuver::Straight => 0,
                Maneuver::Left => 1,
            }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    /// Side of the intersection through which the movement leaves.
    pub fn exit_side(self) -> Approach {
        match self.maneuver {
            Maneuver::Straight => self.approach.opposite(),
            Maneuver::Left => self.approach.left_of(),
        }
    }
}

impl fmt::Display for MovementDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.maneuver {
            Maneuver::Straight => 'S',
            Maneuver::Left => 'L',
        };
        write!(f, "{}-{}", self.approach.code(), m)
    }
}

impl FromStr for MovementDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, m) = s.trim().split_once('-').ok_or_else(|| format!("movement `{s}` is not of the form <approach>-<maneuver>"))?;
        let approach = a.parse::<Approach>()?;
        let maneuver = match m.trim().to_ascii_uppercase().as_str() {
            "S" | "STRAIGHT" => Maneuver::Straight,
            "L" | "LEFT" => Maneuver::Left,
            other => return Err(format!("unknown maneuver `{other}` in `{s}` (right turns are not modeled)")),
        };
        Ok(Self { approach, maneuver })
    }
}

impl Serialize for MovementDirection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MovementDirection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Small bit set over the eight movements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MovementSet(u8);

impl MovementSet {
    pub const EMPTY: MovementSet = MovementSet(0);

    pub fn insert(&mut self, m: MovementDirection) {
        self.0 |= 1 << m.index();
    }

    pub fn contains(self, m: MovementDirection) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = MovementDirection> {
        (0..8).filter(move |i| self.0 & (1 << i) != 0).map(MovementDirection::from_index)
    }
}

impl FromIterator<MovementDirection> for MovementSet {
    fn from_iter<I: IntoIterator<Item = MovementDirection>>(iter: I) -> Self {
        let mut set = MovementSet::EMPTY;
        for m in iter {
            set.insert(m);
        }
        set
    }
}

/// Which movement pairs may share the intersection interior.
///
/// Stored as a symmetric, reflexive relation; `nonconflicting` holds each
/// unordered pair once with the lower-indexed movement first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConflictTable {
    nonconflicting: BTreeSet<(MovementDirection, MovementDirection)>,
    matrix: [[bool; 8]; 8],
}

impl ConflictTable {
    /// Builds the symmetric and reflexive closure of `pairs`.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (MovementDirection, MovementDirection)>) -> Self {
        let mut nonconflicting = BTreeSet::new();
        let mut matrix = [[false; 8]; 8];
        for m in MovementDirection::ALL {
            nonconflicting.insert((m, m));
            matrix[m.index()][m.index()] = true;
        }
        for (a, b) in pairs {
            let key = if a.index() <= b.index() { (a, b) } else { (b, a) };
            nonconflicting.insert(key);
            matrix[a.index()][b.index()] = true;
            matrix[b.index()][a.index()] = true;
        }
        Self { nonconflicting, matrix }
    }

    pub fn conflicts(&self, a: MovementDirection, b: MovementDirection) -> bool {
        !self.matrix[a.index()][b.index()]
    }

    /// Unordered non-conflicting pairs, reflexive ones included.
    pub fn nonconflicting_pairs(&self) -> &BTreeSet<(MovementDirection, MovementDirection)> {
        &self.nonconflicting
    }

    /// True when `m` conflicts with any movement in `set`.
    pub fn conflicts_with_any(&self, m: MovementDirection, set: MovementSet) -> bool {
        set.iter().any(|other| self.conflicts(m, other))
    }
}

impl Default for ConflictTable {
    fn default() -> Self {
        default_conflict_table()
    }
}

/// `false` iff the pair may share the interior.
pub fn conflicts(a: MovementDirection, b: MovementDirection, table: &ConflictTable) -> bool {
    table.conflicts(a, b)
}

/// The eight compatible pairs of a four-way intersection without right turns:
/// same-approach straight/left, opposing throughs and opposing lefts.
pub fn default_conflict_table() -> ConflictTable {
    use Approach::*;
    use Maneuver::*;
    let m = MovementDirection::new;
    ConflictTable::from_pairs([
        (m(North, Straight), m(North, Left)),
        (m(East, Straight), m(East, Left)),
        (m(East, Left), m(West, Left)),
        (m(South, Straight), m(North, Straight)),
        (m(South, Left), m(North, Left)),
        (m(South, Straight), m(South, Left)),
        (m(West, Straight), m(East, Straight)),
        (m(West, Straight), m(West, Left)),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn cells(self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSpec {
    pub id: String,
    pub incoming_lanes: usize,
    pub lane_length_m: f64,
    pub speed_limit_mps: f64,
    pub control_zone_m: f64,
    /// Movement served by each incoming lane, indexed by lane.
    pub lane_movements: Vec<MovementDirection>,
    /// Interior traversal length per movement, in [`MovementDirection::ALL`] order.
    pub interior_path_m: [f64; 8],
    pub occupancy_grid: GridShape,
    pub exit_length_m: f64,
    pub demand_veh_per_hr: f64,
    pub signal_plan: Option<SignalPlan>,
}

impl IntersectionSpec {
    pub fn path_length(&self, m: MovementDirection) -> f64 {
        self.interior_path_m[m.index()]
    }

    /// Side length of the square interior box, taken from the straight path.
    pub fn interior_side_m(&self) -> f64 {
        self.interior_path_m[MovementDirection::ALL[0].index()]
    }

    /// Lanes arriving from `approach`, in lane-index order.
    pub fn lanes_of(&self, approach: Approach) -> impl Iterator<Item = usize> + '_ {
        self.lane_movements.iter().enumerate().filter(move |(_, m)| m.approach == approach).map(|(i, _)| i)
    }

    /// Fraction of an approach's lanes per maneuver: (straight, left).
    pub fn movement_shares(&self, approach: Approach) -> Option<(f64, f64)> {
        let lanes: Vec<_> = self.lanes_of(approach).collect();
        if lanes.is_empty() {
            return None;
        }
        let left = lanes.iter().filter(|&&l| self.lane_movements[l].maneuver == Maneuver::Left).count();
        let n = lanes.len() as f64;
        Some(((n - left as f64) / n, left as f64 / n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connector {
    pub source: String,
    pub exit: Approach,
    pub target: String,
    pub entry: Approach,
    pub length_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub intersections: Vec<IntersectionSpec>,
    pub connectors: Vec<Connector>,
}

impl NetworkSpec {
    pub fn intersection_index(&self, id: &str) -> Option<usize> {
        self.intersections.iter().position(|i| i.id == id)
    }

    pub fn connector_from(&self, source: &str, exit: Approach) -> Option<&Connector> {
        self.connectors.iter().find(|c| c.source == source && c.exit == exit)
    }

    /// Grid shape shared by every intersection (checked at load).
    pub fn grid_shape(&self) -> GridShape {
        self.intersections.first().map(|i| i.occupancy_grid).unwrap_or(GridShape { rows: 8, cols: 8 })
    }

    pub fn total_lanes(&self) -> usize {
        self.intersections.iter().map(|i| i.incoming_lanes).sum()
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario field `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.into(), message: message.into() }
}

/// Splits `total` lanes over N, E, S, W as evenly as possible (remainder to
/// North first); the last lane of each approach turns left, the rest go straight.
pub fn default_lane_split(total: usize) -> Vec<MovementDirection> {
    let base = total / 4;
    let extra = total % 4;
    let mut lanes = Vec::with_capacity(total);
    for (i, approach) in Approach::ALL.into_iter().enumerate() {
        let n = base + usize::from(i < extra);
        for k in 0..n {
            let maneuver = if k + 1 == n { Maneuver::Left } else { Maneuver::Straight };
            lanes.push(MovementDirection::new(approach, maneuver));
        }
    }
    lanes
}

// Raw on-disk layout.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    network: RawNetwork,
    #[serde(default)]
    intersection: toml::map::Map<String, toml::Value>,
    #[serde(default)]
    connector: Vec<RawConnector>,
    #[serde(default)]
    signals: toml::map::Map<String, toml::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    name: String,
    #[serde(default)]
    description: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntersection {
    incoming_lanes: usize,
    demand_veh_per_hr: f64,
    #[serde(default = "defaults::lane_length")]
    lane_length_m: f64,
    #[serde(default = "defaults::speed_limit")]
    speed_limit_mps: f64,
    #[serde(default = "defaults::control_zone")]
    control_zone_m: f64,
    #[serde(default = "defaults::exit_length")]
    exit_length_m: f64,
    #[serde(default = "defaults::path_straight")]
    path_straight_m: f64,
    #[serde(default = "defaults::path_left")]
    path_left_m: f64,
    #[serde(default = "defaults::grid")]
    occupancy_grid: [usize; 2],
    #[serde(default)]
    lanes: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConnector {
    from: String,
    exit: String,
    to: String,
    entry: String,
    length_m: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignals {
    #[serde(default)]
    offset_s: f64,
    phases: Vec<RawPhase>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    green: Vec<String>,
    green_s: f64,
    yellow_s: f64,
}

mod defaults {
    pub fn lane_length() -> f64 {
        200.0
    }
    pub fn speed_limit() -> f64 {
        13.89
    }
    pub fn control_zone() -> f64 {
        30.0
    }
    pub fn exit_length() -> f64 {
        100.0
    }
    pub fn path_straight() -> f64 {
        25.0
    }
    pub fn path_left() -> f64 {
        30.0
    }
    pub fn grid() -> [usize; 2] {
        [8, 8]
    }
}

/// The bundled four-intersection scenario.
pub const PAPER4_SCENARIO: &str = include_str!("../data/paper4.scn");

pub fn load_scenario(path: impl AsRef<Path>) -> Result<NetworkSpec, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<NetworkSpec, ScenarioError> {
    let raw: RawScenario = toml::from_str(text)?;
    let table = default_conflict_table();
    let _ = raw.network.description;

    if raw.intersection.is_empty() {
        return Err(invalid("intersection", "scenario declares no intersections"));
    }

    let mut intersections = Vec::with_capacity(raw.intersection.len());
    for (id, value) in raw.intersection {
        let field = format!("intersection.{id}");
        let ri: RawIntersection = value.try_into().map_err(|e: toml::de::Error| invalid(&field, e.message().to_string()))?;
        intersections.push(build_intersection(&id, ri)?);
    }

    for (id, value) in raw.signals {
        let field = format!("signals.{id}");
        let rs: RawSignals = value.try_into().map_err(|e: toml::de::Error| invalid(&field, e.message().to_string()))?;
        let Some(ix) = intersections.iter().position(|i| i.id == id) else {
            return Err(invalid(&field, format!("no intersection `{id}`")));
        };
        let mut phases = Vec::with_capacity(rs.phases.len());
        for (p, rp) in rs.phases.into_iter().enumerate() {
            let green = rp
                .green
                .iter()
                .map(|s| s.parse::<MovementDirection>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| invalid(format!("{field}.phases[{p}].green"), e))?;
            phases.push(SignalPhase { green, green_s: rp.green_s, yellow_s: rp.yellow_s });
        }
        let plan = SignalPlan { phases, offset_s: rs.offset_s };
        plan.validate(&table).map_err(|e| invalid(&field, e))?;
        intersections[ix].signal_plan = Some(plan);
    }

    let mut connectors = Vec::with_capacity(raw.connector.len());
    for (k, rc) in raw.connector.into_iter().enumerate() {
        let field = format!("connector[{k}]");
        for endpoint in [&rc.from, &rc.to] {
            if !intersections.iter().any(|i| &i.id == endpoint) {
                return Err(invalid(&field, format!("references unknown intersection `{endpoint}`")));
            }
        }
        let exit = rc.exit.parse::<Approach>().map_err(|e| invalid(format!("{field}.exit"), e))?;
        let entry = rc.entry.parse::<Approach>().map_err(|e| invalid(format!("{field}.entry"), e))?;
        if !(rc.length_m > 0.0) {
            return Err(invalid(format!("{field}.length_m"), "must be positive"));
        }
        let target = intersections.iter().find(|i| i.id == rc.to).expect("checked above");
        if target.lanes_of(entry).next().is_none() {
            return Err(invalid(format!("{field}.entry"), format!("intersection `{}` has no incoming lanes on approach {entry:?}", rc.to)));
        }
        if connectors.iter().any(|c: &Connector| c.source == rc.from && c.exit == exit) {
            return Err(invalid(&field, format!("duplicate connector from `{}` exit {exit:?}", rc.from)));
        }
        connectors.push(Connector { source: rc.from, exit, target: rc.to, entry, length_m: rc.length_m });
    }

    let shape = intersections[0].occupancy_grid;
    if let Some(other) = intersections.iter().find(|i| i.occupancy_grid != shape) {
        return Err(invalid(format!("intersection.{}.occupancy_grid", other.id), "all intersections must share one occupancy grid shape"));
    }

    Ok(NetworkSpec { name: raw.network.name, intersections, connectors })
}

fn build_intersection(id: &str, ri: RawIntersection) -> Result<IntersectionSpec, ScenarioError> {
    let f = |name: &str| format!("intersection.{id}.{name}");
    if ri.incoming_lanes == 0 {
        return Err(invalid(f("incoming_lanes"), "must be at least 1"));
    }
    for (name, v) in [
        ("lane_length_m", ri.lane_length_m),
        ("speed_limit_mps", ri.speed_limit_mps),
        ("control_zone_m", ri.control_zone_m),
        ("exit_length_m", ri.exit_length_m),
        ("path_straight_m", ri.path_straight_m),
        ("path_left_m", ri.path_left_m),
        ("demand_veh_per_hr", ri.demand_veh_per_hr),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(f(name), format!("must be positive and finite, got {v}")));
        }
    }
    if ri.control_zone_m > ri.lane_length_m {
        return Err(invalid(f("control_zone_m"), format!("{} exceeds lane_length_m {}", ri.control_zone_m, ri.lane_length_m)));
    }
    if ri.occupancy_grid[0] == 0 || ri.occupancy_grid[1] == 0 {
        return Err(invalid(f("occupancy_grid"), "rows and cols must be positive"));
    }

    let lane_movements = match ri.lanes {
        None => default_lane_split(ri.incoming_lanes),
        Some(list) => {
            if list.len() > ri.incoming_lanes {
                return Err(invalid(f("lanes"), format!("maps {} lanes but incoming_lanes is {}", list.len(), ri.incoming_lanes)));
            }
            if list.len() < ri.incoming_lanes {
                return Err(invalid(
                    f("lanes"),
                    format!("lane {} has no movement mapping ({} of {} lanes mapped)", list.len(), list.len(), ri.incoming_lanes),
                ));
            }
            list.iter()
                .enumerate()
                .map(|(k, s)| s.parse::<MovementDirection>().map_err(|e| invalid(format!("{}[{k}]", f("lanes")), e)))
                .collect::<Result<Vec<_>, _>>()?
        }
    };

    let mut interior_path_m = [0.0; 8];
    for m in MovementDirection::ALL {
        interior_path_m[m.index()] = match m.maneuver {
            Maneuver::Straight => ri.path_straight_m,
            Maneuver::Left => ri.path_left_m,
        };
    }

    Ok(IntersectionSpec {
        id: id.to_string(),
        incoming_lanes: ri.incoming_lanes,
        lane_length_m: ri.lane_length_m,
        speed_limit_mps: ri.speed_limit_mps,
        control_zone_m: ri.control_zone_m,
        lane_movements,
        interior_path_m,
        occupancy_grid: GridShape { rows: ri.occupancy_grid[0], cols: ri.occupancy_grid[1] },
        exit_length_m: ri.exit_length_m,
        demand_veh_per_hr: ri.demand_veh_per_hr,
        signal_plan: Some(default_signal_plan()),
    })
}

/// The bundled four-intersection network.
pub fn paper4() -> NetworkSpec {
    parse_scenario(PAPER4_SCENARIO).expect("bundled scenario is valid")
}
