//! Fixed-time signals, Stop/Go gating with conflict enforcement, and the
//! interior occupancy grid.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::topology::{Approach, ConflictTable, GridShape, Maneuver, MovementDirection, MovementSet};
use crate::world::{World, VEHICLE_LENGTH_M};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPhase {
    pub green: Vec<MovementDirection>,
    pub green_s: f64,
    pub yellow_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub phases: Vec<SignalPhase>,
    pub offset_s: f64,
}

impl SignalPlan {
    pub fn cycle_length(&self) -> f64 {
        self.phases.iter().map(|p| p.green_s + p.yellow_s).sum()
    }

    /// Rejects empty plans, non-positive durations and conflicting greens.
    pub fn validate(&self, table: &ConflictTable) -> Result<(), String> {
        if self.phases.is_empty() {
            return Err("signal plan has no phases".into());
        }
        if !self.offset_s.is_finite() {
            return Err("offset_s must be finite".into());
        }
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.green_s > 0.0) || !(p.yellow_s > 0.0) {
                return Err(format!("phase {i}: durations must be positive"));
            }
            for (k, a) in p.green.iter().enumerate() {
                for b in &p.green[k + 1..] {
                    if table.conflicts(*a, *b) {
                        return Err(format!("phase {i}: {a} and {b} conflict"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Four protected phases, 30 s throughs and 10 s lefts, each with 3 s yellow.
pub fn default_signal_plan() -> SignalPlan {
    let phase =
        |a: &str, b: &str, green_s: f64| SignalPhase { green: vec![a.parse().unwrap(), b.parse().unwrap()], green_s, yellow_s: 3.0 };
    SignalPlan {
        phases: vec![phase("N-S", "S-S", 30.0), phase("N-L", "S-L", 10.0), phase("E-S", "W-S", 30.0), phase("E-L", "W-L", 10.0)],
        offset_s: 0.0,
    }
}

/// Movements showing green at time `t`. Yellow counts as not green.
pub fn signal_state(plan: &SignalPlan, t: f64) -> MovementSet {
    let cycle = plan.cycle_length();
    if cycle <= 0.0 {
        return MovementSet::EMPTY;
    }
    let mut local = (t + plan.offset_s).rem_euclid(cycle);
    for phase in &plan.phases {
        if local < phase.green_s {
            return phase.green.iter().copied().collect();
        }
        local -= phase.green_s;
        if local < phase.yellow_s {
            return MovementSet::EMPTY;
        }
        local -= phase.yellow_s;
    }
    MovementSet::EMPTY
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Stop,
    Go,
}

/// Per-intersection reservation state.
///
/// `pending` counts vehicles cleared to enter that have not yet crossed the
/// stop line; `inside` counts vehicles on interior paths. A movement is active
/// while either count is non-zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GateState {
    pending: [u16; 8],
    inside: [u16; 8],
}

impl GateState {
    pub fn active(&self) -> MovementSet {
        MovementDirection::ALL.into_iter().filter(|m| self.pending[m.index()] + self.inside[m.index()] > 0).collect()
    }

    /// True when some vehicle of `m` is cleared and still before the stop line.
    pub fn is_cleared(&self, m: MovementDirection) -> bool {
        self.pending[m.index()] > 0
    }

    pub fn active_count(&self, m: MovementDirection) -> u16 {
        self.pending[m.index()] + self.inside[m.index()]
    }

    pub(crate) fn reserve(&mut self, m: MovementDirection) {
        self.pending[m.index()] += 1;
    }

    pub(crate) fn enter(&mut self, m: MovementDirection) {
        debug_assert!(self.pending[m.index()] > 0);
        self.pending[m.index()] -= 1;
        self.inside[m.index()] += 1;
    }

    pub(crate) fn leave(&mut self, m: MovementDirection) {
        debug_assert!(self.inside[m.index()] > 0);
        self.inside[m.index()] -= 1;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub released: bool,
    /// A Go that would have shared the interior with a conflicting movement.
    /// Such releases are suppressed.
    pub conflict: bool,
}

/// Applies one Stop/Go for a queue head of movement `movement`.
pub fn apply_action(gate: &mut GateState, movement: MovementDirection, action: Action, table: &ConflictTable) -> ActionOutcome {
    match action {
        Action::Stop => ActionOutcome::default(),
        Action::Go => {
            if table.conflicts_with_any(movement, gate.active()) {
                ActionOutcome { released: false, conflict: true }
            } else {
                gate.reserve(movement);
                ActionOutcome { released: true, conflict: false }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateDecision {
    Held,
    Released,
}

/// Queue-head rule for vehicles not commanded by a policy.
///
/// With a signal (`green` is `Some`), the head goes when its movement is green
/// and no conflicting vehicle is still inside. Without one it goes whenever its
/// movement conflicts with nothing active.
pub fn hv_gate_policy(gate: &GateState, green: Option<MovementSet>, movement: MovementDirection, table: &ConflictTable) -> GateDecision {
    if let Some(green) = green {
        if !green.contains(movement) {
            return GateDecision::Held;
        }
    }
    if table.conflicts_with_any(movement, gate.active()) {
        GateDecision::Held
    } else {
        GateDecision::Released
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell_size_m: f64,
    /// Row-major, row 0 on the north edge, column 0 on the west edge.
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(shape: GridShape, side_m: f64) -> Self {
        Self { rows: shape.rows, cols: shape.cols, cell_size_m: side_m / shape.cols as f64, cells: vec![false; shape.cells()] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    pub fn marked(&self) -> Vec<(usize, usize)> {
        (0..self.rows).flat_map(|r| (0..self.cols).map(move |c| (r, c))).filter(|&(r, c)| self.get(r, c)).collect()
    }

    /// Cell holding the unit-square point `(x, y)`; points on the far edge
    /// fall into the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let row = (((1.0 - y) * self.rows as f64).floor() as isize).clamp(0, self.rows as isize - 1);
        let col = ((x * self.cols as f64).floor() as isize).clamp(0, self.cols as isize - 1);
        (row as usize, col as usize)
    }

    /// Marks the cells swept by a vehicle whose front is `front_m` along the
    /// interior path of `movement` (length `path_m`).
    pub fn mark_vehicle(&mut self, movement: MovementDirection, path_m: f64, front_m: f64, vehicle_len_m: f64) {
        let hi = front_m.min(path_m);
        let lo = (front_m - vehicle_len_m).max(0.0);
        if hi < lo {
            return;
        }
        let span = (hi - lo) / path_m;
        let steps = (span * 4.0 * self.rows.max(self.cols) as f64).ceil() as usize + 1;
        for k in 0..=steps {
            let s = lo + (hi - lo) * k as f64 / steps as f64;
            let (x, y) = path_point(movement, s / path_m);
            let (r, c) = self.cell_of(x, y);
            self.cells[r * self.cols + c] = true;
        }
    }
}

/// Lateral offset of southbound/eastbound lanes inside the unit interior box;
/// northbound/westbound lanes sit at `1 - NEAR_LANE`.
pub const NEAR_LANE: f64 = 0.4375;

/// Point at fraction `frac` ∈ [0, 1] along a movement's interior path, in the
/// unit square (x east, y north, origin at the south-west corner).
///
/// Straight paths are axis-aligned segments; left turns are quarter arcs of
/// radius `1 - NEAR_LANE` around the corner on the turning side.
pub fn path_point(movement: MovementDirection, frac: f64) -> (f64, f64) {
    let f = frac.clamp(0.0, 1.0);
    let far = 1.0 - NEAR_LANE;
    match (movement.approach, movement.maneuver) {
        (Approach::North, Maneuver::Straight) => (NEAR_LANE, 1.0 - f),
        (Approach::South, Maneuver::Straight) => (far, f),
        (Approach::East, Maneuver::Straight) => (1.0 - f, far),
        (Approach::West, Maneuver::Straight) => (f, NEAR_LANE),
        (approach, Maneuver::Left) => {
            let (cx, cy, start) = match approach {
                Approach::North => (1.0, 1.0, PI),
                Approach::East => (1.0, 0.0, FRAC_PI_2),
                Approach::South => (0.0, 0.0, 0.0),
                Approach::West => (0.0, 1.0, -FRAC_PI_2),
            };
            let theta = start + f * FRAC_PI_2;
            (cx + far * theta.cos(), cy + far * theta.sin())
        }
    }
}

/// Occupancy of intersection `intersection`'s interior.
pub fn build_occupancy(world: &World, intersection: usize) -> OccupancyGrid {
    let spec = &world.network().intersections[intersection];
    let mut grid = OccupancyGrid::empty(spec.occupancy_grid, spec.interior_side_m());
    for chain in world.chains_of(intersection) {
        for v in &chain.interior.vehicles {
            grid.mark_vehicle(chain.movement, chain.interior.length_m, v.pos_m, VEHICLE_LENGTH_M);
        }
    }
    grid
}

/// One pair of conflicting movements observed inside an interior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictEvent {
    pub t: f64,
    pub intersection: String,
    pub movement_a: MovementDirection,
    pub movement_b: MovementDirection,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::default_conflict_table;

    fn mv(s: &str) -> MovementDirection {
        s.parse().unwrap()
    }

    #[test]
    fn signal_cycle_start_and_periodicity() {
        let plan = default_signal_plan();
        let g0 = signal_state(&plan, 0.0);
        assert!(g0.contains(mv("N-S")) && g0.contains(mv("S-S")));
        assert_eq!(g0.len(), 2);
        assert_eq!(plan.cycle_length(), 92.0);
        assert_eq!(signal_state(&plan, plan.cycle_length()), g0);
        assert_eq!(signal_state(&plan, 3.0 * plan.cycle_length() + 17.0), signal_state(&plan, 17.0));
    }

    #[test]
    fn yellow_is_not_green() {
        let plan = default_signal_plan();
        let g = signal_state(&plan, 31.0);
        assert!(!g.contains(mv("N-S")) && !g.contains(mv("S-S")));
        assert!(g.is_empty());
        assert!(signal_state(&plan, 33.0).contains(mv("N-L")));
        assert!(signal_state(&plan, 46.0).contains(mv("E-S")));
        assert!(signal_state(&plan, 79.5).contains(mv("W-L")));
    }

    #[test]
    fn default_plan_validates() {
        default_signal_plan().validate(&default_conflict_table()).unwrap();
        let mut bad = default_signal_plan();
        bad.phases[0].green_s = 0.0;
        assert!(bad.validate(&default_conflict_table()).is_err());
    }

    #[test]
    fn apply_action_examples() {
        let t = default_conflict_table();
        let mut gate = GateState::default();
        let out = apply_action(&mut gate, mv("N-S"), Action::Go, &t);
        assert_eq!(out, ActionOutcome { released: true, conflict: false });

        let out = apply_action(&mut gate, mv("N-L"), Action::Go, &t);
        assert_eq!(out, ActionOutcome { released: true, conflict: false });

        let mut gate = GateState::default();
        gate.reserve(mv("N-S"));
        let out = apply_action(&mut gate, mv("E-S"), Action::Go, &t);
        assert_eq!(out, ActionOutcome { released: false, conflict: true });
        assert_eq!(gate.active().iter().collect::<Vec<_>>(), vec![mv("N-S")]);

        let before = gate.clone();
        assert_eq!(apply_action(&mut gate, mv("E-S"), Action::Stop, &t), ActionOutcome::default());
        assert_eq!(gate, before);
    }

    #[test]
    fn gate_counts_follow_vehicle_lifecycle() {
        let mut gate = GateState::default();
        gate.reserve(mv("W-L"));
        assert!(gate.is_cleared(mv("W-L")));
        gate.enter(mv("W-L"));
        assert!(!gate.is_cleared(mv("W-L")));
        assert_eq!(gate.active_count(mv("W-L")), 1);
        gate.leave(mv("W-L"));
        assert!(gate.active().is_empty());
    }

    #[test]
    fn hv_gate_examples() {
        let t = default_conflict_table();
        let gate = GateState::default();
        let green: MovementSet = [mv("N-S"), mv("S-S")].into_iter().collect();
        assert_eq!(hv_gate_policy(&gate, Some(green), mv("N-S"), &t), GateDecision::Released);
        assert_eq!(hv_gate_policy(&gate, Some(green), mv("E-S"), &t), GateDecision::Held);
        assert_eq!(hv_gate_policy(&gate, None, mv("E-S"), &t), GateDecision::Released);
        let mut busy = GateState::default();
        busy.reserve(mv("N-S"));
        assert_eq!(hv_gate_policy(&busy, None, mv("E-S"), &t), GateDecision::Held);
        assert_eq!(hv_gate_policy(&busy, None, mv("S-S"), &t), GateDecision::Released);
    }

    #[test]
    fn path_endpoints_sit_on_box_edges() {
        for m in MovementDirection::ALL {
            let (x0, y0) = path_point(m, 0.0);
            let (x1, y1) = path_point(m, 1.0);
            let on_edge = |x: f64, y: f64| [x, y].iter().any(|v| v.abs() < 1e-12 || (v - 1.0).abs() < 1e-12);
            assert!(on_edge(x0, y0) && on_edge(x1, y1), "{m}: ({x0},{y0}) -> ({x1},{y1})");
        }
        // Left from the north ends on the east edge in the eastbound lane.
        let (x, y) = path_point(mv("N-L"), 1.0);
        assert!((x - 1.0).abs() < 1e-12 && (y - NEAR_LANE).abs() < 1e-12);
    }

    #[test]
    fn midpath_vehicle_marks_hand_computed_cells() {
        // Front at 15 m on a 25 m path: footprint spans fractions 0.4..0.6,
        // i.e. y from 0.6 down to 0.4 at x = 0.4375 → rows 3 and 4, column 3.
        let mut g = OccupancyGrid::empty(GridShape { rows: 8, cols: 8 }, 25.0);
        g.mark_vehicle(mv("N-S"), 25.0, 15.0, 5.0);
        assert_eq!(g.marked(), vec![(3, 3), (4, 3)]);
    }

    #[test]
    fn marks_are_a_union() {
        let shape = GridShape { rows: 8, cols: 8 };
        let mut a = OccupancyGrid::empty(shape, 25.0);
        a.mark_vehicle(mv("N-S"), 25.0, 15.0, 5.0);
        let mut b = OccupancyGrid::empty(shape, 25.0);
        b.mark_vehicle(mv("S-S"), 25.0, 8.0, 5.0);
        let mut both = OccupancyGrid::empty(shape, 25.0);
        both.mark_vehicle(mv("N-S"), 25.0, 15.0, 5.0);
        both.mark_vehicle(mv("S-S"), 25.0, 8.0, 5.0);
        let union: Vec<bool> = a.cells.iter().zip(&b.cells).map(|(x, y)| *x || *y).collect();
        assert_eq!(both.cells, union);
        assert!(OccupancyGrid::empty(shape, 25.0).is_empty());
    }
}
