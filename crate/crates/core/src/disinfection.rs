//! UVC dose physics, dose bookkeeping, disinfection pose planning and the
//! lamp interlock.
//!
//! Each tube is treated as an isotropic point source in the plane of the
//! map, so irradiance falls off as `P / (4π r²)`. Occlusion is binary: a
//! cell either has line of sight to a lamp or receives nothing from it.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::geom::{Point2, Pose2D};
use crate::world::{Cell, CellIndex, OccupancyGrid, WorldError};

/// Closest distance used in the inverse-square law; nearer targets would be
/// inside the lamp housing.
pub const R_MIN: f64 = 0.2;

/// Default radius beyond which lamp contributions are ignored, meters.
pub const DEFAULT_CUTOFF: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DoseError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("disinfection target has no cells")]
    EmptyTarget,
    #[error("target cell ({col}, {row}) is outside the map")]
    TargetOutOfBounds { col: usize, row: usize },
    #[error("no collision-free, reachable candidate pose exists")]
    NoReachablePose,
    #[error(transparent)]
    World(#[from] WorldError),
}

fn positive(name: &'static str, value: f64) -> Result<f64, DoseError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DoseError::NonPositive { name, value })
    }
}

/// The lamp assembly carried on the mast.
#[derive(Debug, Clone, PartialEq)]
pub struct LampArray {
    /// Germicidal output per tube, W.
    pub uvc_power: f64,
    pub lamp_count: usize,
    /// Radius of the semicircle the tubes sit on, centered on the robot.
    pub arc_radius: f64,
    /// Informational only; the dose plane is at lamp height.
    pub mount_height: f64,
    /// Electrical draw per tube, W.
    pub electrical_power: f64,
}

impl Default for LampArray {
    fn default() -> Self {
        Self { uvc_power: 4.5, lamp_count: 4, arc_radius: 0.15, mount_height: 1.2, electrical_power: 16.7 }
    }
}

impl LampArray {
    /// A single tube at the robot center; handy for calibration runs.
    pub fn single(uvc_power: f64) -> Self {
        Self { uvc_power, lamp_count: 1, arc_radius: 0.0, ..Self::default() }
    }

    /// Robot-frame tube positions spread evenly over the front semicircle.
    pub fn offsets(&self) -> Vec<Point2> {
        match self.lamp_count {
            0 => Vec::new(),
            1 => vec![Point2::new(self.arc_radius, 0.0)],
            n => (0..n)
                .map(|i| {
                    let a = -FRAC_PI_2 + PI * i as f64 / (n - 1) as f64;
                    Point2::new(self.arc_radius * libm::cos(a), self.arc_radius * libm::sin(a))
                })
                .collect(),
        }
    }

    pub fn positions(&self, pose: &Pose2D) -> Vec<Point2> {
        self.offsets().into_iter().map(|o| pose.transform_point(o)).collect()
    }

    pub fn electrical_load(&self) -> f64 {
        self.lamp_count as f64 * self.electrical_power
    }
}

/// Unoccluded point-source irradiance at distance `r`, W/m².
pub fn point_irradiance(uvc_power: f64, r: f64) -> f64 {
    let r = r.max(R_MIN);
    uvc_power / (4.0 * PI * r * r)
}

/// Irradiance from one lamp at a target point; zero when occluded.
pub fn irradiance_at(lamp: Point2, uvc_power: f64, target: Point2, grid: &OccupancyGrid) -> Result<f64, WorldError> {
    if !grid.line_of_sight(lamp, target)? {
        return Ok(0.0);
    }
    Ok(point_irradiance(uvc_power, lamp.distance(target)))
}

/// Number of log10 reductions delivered by `dose` for a pathogen with the given D90.
pub fn log_reduction(dose: f64, d90: f64) -> Result<f64, DoseError> {
    positive("d90", d90)?;
    Ok(dose / d90)
}

/// Exposure time for one unoccluded lamp to deliver `required_dose` at `distance`.
pub fn dwell_time_for_dose(required_dose: f64, distance: f64, uvc_power: f64) -> Result<f64, DoseError> {
    if !(required_dose >= 0.0) || !required_dose.is_finite() {
        return Err(DoseError::NonPositive { name: "required_dose", value: required_dose });
    }
    positive("distance", distance)?;
    positive("uvc_power", uvc_power)?;
    Ok(required_dose / point_irradiance(uvc_power, distance))
}

/// Cells that can receive dose: open floor and the exposed faces of obstacles.
fn receives_dose(cell: Cell) -> bool {
    !matches!(cell, Cell::Unknown)
}

/// Per-cell irradiance (W/m²) produced by the lamps at one robot pose.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IrradianceField {
    pub rates: Vec<(usize, f64)>,
}

impl IrradianceField {
    pub fn compute(grid: &OccupancyGrid, pose: &Pose2D, lamps: &LampArray, cutoff: f64) -> IrradianceField {
        let lamp_points = lamps.positions(pose);
        if lamp_points.is_empty() {
            return IrradianceField::default();
        }
        let reach = libm::ceil(cutoff / grid.resolution()) as isize + 1;
        let center = grid.to_grid_frame(pose.position());
        let (cc, cr) = (libm::floor(center.0) as isize, libm::floor(center.1) as isize);
        let col_range = (cc - reach).max(0)..(cc + reach + 1).min(grid.width() as isize);
        let row_range = (cr - reach).max(0)..(cr + reach + 1).min(grid.height() as isize);
        let cutoff2 = cutoff * cutoff;
        let mut rates = Vec::new();
        for row in row_range {
            for col in col_range.clone() {
                let c = CellIndex::new(col as usize, row as usize);
                let idx = grid.index_of(c);
                if !receives_dose(grid.cells()[idx]) {
                    continue;
                }
                let target = grid.cell_center(c);
                if !lamp_points.iter().any(|l| {
                    let d = target - *l;
                    d.dot(d) <= cutoff2
                }) {
                    continue;
                }
                let mut e = 0.0;
                for &lamp in &lamp_points {
                    // Lamps always sit inside the grid when the robot does.
                    e += irradiance_at(lamp, lamps.uvc_power, target, grid).unwrap_or(0.0);
                }
                if e > 0.0 {
                    rates.push((idx, e));
                }
            }
        }
        IrradianceField { rates }
    }

    pub fn rate_at(&self, index: usize) -> f64 {
        self.rates.binary_search_by_key(&index, |&(i, _)| i).map_or(0.0, |k| self.rates[k].1)
    }
}

/// Cumulative UVC dose per cell, J/m², over the same geometry as the map.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Pose2D,
    dose: Vec<f64>,
}

impl DoseGrid {
    pub fn new(grid: &OccupancyGrid) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            resolution: grid.resolution(),
            origin: grid.origin(),
            dose: vec![0.0; grid.len()],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Pose2D {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.dose
    }

    pub fn get(&self, c: CellIndex) -> f64 {
        self.dose[c.row * self.width + c.col]
    }

    pub fn add(&mut self, c: CellIndex, amount: f64) {
        if amount > 0.0 {
            self.dose[c.row * self.width + c.col] += amount;
        }
    }

    /// Adds `rate · dt` for every cell of the field.
    pub fn expose(&mut self, field: &IrradianceField, dt: f64) {
        if !(dt > 0.0) {
            return;
        }
        for &(i, rate) in &field.rates {
            self.dose[i] += rate * dt;
        }
    }
}

/// Integrates lamp output over `dt` seconds into `dose`. With lamps off the
/// grid is left untouched.
pub fn accumulate_dose(
    dose: &mut DoseGrid,
    grid: &OccupancyGrid,
    robot_pose: &Pose2D,
    lamps: &LampArray,
    lamp_on: bool,
    dt: f64,
) {
    if !lamp_on || !(dt > 0.0) {
        return;
    }
    let field = IrradianceField::compute(grid, robot_pose, lamps, DEFAULT_CUTOFF);
    dose.expose(&field, dt);
}

/// Prioritized surfaces and the dose they must receive.
#[derive(Debug, Clone, PartialEq)]
pub struct DisinfectionTarget {
    pub cells: Vec<CellIndex>,
    pub required_dose: f64,
}

impl DisinfectionTarget {
    /// Deduplicates and sorts `cells`.
    pub fn new(mut cells: Vec<CellIndex>, required_dose: f64) -> Result<Self, DoseError> {
        positive("required_dose", required_dose)?;
        cells.sort_by_key(|c| (c.row, c.col));
        cells.dedup();
        if cells.is_empty() {
            return Err(DoseError::EmptyTarget);
        }
        Ok(Self { cells, required_dose })
    }

    /// Requirement expressed as log reductions for a pathogen with the given D90.
    pub fn from_log_reduction(cells: Vec<CellIndex>, logs: f64, d90: f64) -> Result<Self, DoseError> {
        positive("log reduction", logs)?;
        positive("d90", d90)?;
        Self::new(cells, logs * d90)
    }

    fn check_bounds(&self, grid: &OccupancyGrid) -> Result<(), DoseError> {
        match self.cells.iter().find(|c| grid.get(**c).is_none()) {
            Some(c) => Err(DoseError::TargetOutOfBounds { col: c.col, row: c.row }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerOptions {
    /// Candidate headings per lattice point, evenly spaced.
    pub headings: usize,
    /// Clearance radius the candidate cell must have.
    pub robot_radius: f64,
    /// Fixed cost charged per selected pose, seconds; discourages fragmenting
    /// coverage into many short stops.
    pub pose_overhead: f64,
    pub cutoff: f64,
    /// When set, only candidates reachable from here are considered.
    pub start: Option<Point2>,
    pub max_poses: usize,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self {
            headings: 8,
            robot_radius: crate::robot::Footprint::default().circumscribed_radius(),
            pose_overhead: 30.0,
            cutoff: DEFAULT_CUTOFF,
            start: None,
            max_poses: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPose {
    pub pose: Pose2D,
    pub dwell: f64,
    /// Target cells this stop brings up to the required dose.
    pub completes: Vec<CellIndex>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisinfectionPlan {
    pub poses: Vec<PlannedPose>,
    pub covered: Vec<CellIndex>,
    /// Target cells no candidate pose can see.
    pub uncoverable: Vec<CellIndex>,
}

impl DisinfectionPlan {
    pub fn total_dwell(&self) -> f64 {
        self.poses.iter().map(|p| p.dwell).sum()
    }
}

/// Free cells of `inflated` 4-connected to `start` (the same reachability as
/// the 8-connected planner, which never cuts corners).
fn reachable_from(inflated: &OccupancyGrid, start: Point2) -> Vec<bool> {
    let mut seen = vec![false; inflated.len()];
    let Some(s) = inflated.world_to_cell(start) else {
        return seen;
    };
    let si = inflated.index_of(s);
    if inflated.cells()[si].is_blocking() {
        return seen;
    }
    let (w, h) = (inflated.width(), inflated.height());
    let mut queue = VecDeque::from([si]);
    seen[si] = true;
    while let Some(i) = queue.pop_front() {
        let (c, r) = (i % w, i / w);
        let mut visit = |j: usize| {
            if !seen[j] && !inflated.cells()[j].is_blocking() {
                seen[j] = true;
                queue.push_back(j);
            }
        };
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < w {
            visit(i + 1);
        }
        if r > 0 {
            visit(i - w);
        }
        if r + 1 < h {
            visit(i + w);
        }
    }
    seen
}

/// Collision-free candidate poses on a lattice of `spacing` meters, snapped
/// to cell centers.
pub fn candidate_poses(grid: &OccupancyGrid, spacing: f64, options: &PlannerOptions) -> Vec<Pose2D> {
    let inflated = grid.inflate(options.robot_radius);
    let reachable = options.start.map(|s| reachable_from(&inflated, s));
    let stride = (libm::round(spacing / grid.resolution()) as usize).max(1);
    let headings = options.headings.max(1);
    let mut out = Vec::new();
    let mut row = stride / 2;
    while row < grid.height() {
        let mut col = stride / 2;
        while col < grid.width() {
            let c = CellIndex::new(col, row);
            let idx = grid.index_of(c);
            let ok = !inflated.cells()[idx].is_blocking() && reachable.as_ref().is_none_or(|r| r[idx]);
            if ok {
                let p = grid.cell_center(c);
                for k in 0..headings {
                    let theta = -PI + 2.0 * PI * (k as f64 + 1.0) / headings as f64;
                    out.push(Pose2D::new(p.x, p.y, theta));
                }
            }
            col += stride;
        }
        row += stride;
    }
    out
}

/// Irradiance on each target cell (by target position) from one pose.
fn target_rates(
    grid: &OccupancyGrid,
    pose: &Pose2D,
    lamps: &LampArray,
    targets: &[(CellIndex, Point2)],
    cutoff: f64,
) -> Vec<(usize, f64)> {
    let lamp_points = lamps.positions(pose);
    let cutoff2 = cutoff * cutoff;
    let mut out = Vec::new();
    for (k, &(c, p)) in targets.iter().enumerate() {
        if !receives_dose(grid.get(c).unwrap_or(Cell::Unknown)) {
            continue;
        }
        if !lamp_points.iter().any(|l| {
            let d = p - *l;
            d.dot(d) <= cutoff2
        }) {
            continue;
        }
        let e: f64 = lamp_points.iter().map(|&l| irradiance_at(l, lamps.uvc_power, p, grid).unwrap_or(0.0)).sum();
        if e > 0.0 {
            out.push((k, e));
        }
    }
    out
}

/// Greedy set-cover choice of stops and dwell times that bring every
/// coverable target cell to its required dose.
///
/// Each round scores every candidate by how many still-uncovered cells it
/// completes per second of (dwell + overhead), trying each dwell at which
/// one more cell completes. Partial dose delivered to cells that are not
/// completed still counts toward later stops. `initial` carries dose that
/// has already been delivered.
pub fn plan_disinfection_poses(
    grid: &OccupancyGrid,
    target: &DisinfectionTarget,
    lamps: &LampArray,
    candidate_spacing: f64,
    options: &PlannerOptions,
    initial: Option<&DoseGrid>,
) -> Result<DisinfectionPlan, DoseError> {
    positive("candidate_spacing", candidate_spacing)?;
    target.check_bounds(grid)?;
    let candidates = candidate_poses(grid, candidate_spacing, options);
    if candidates.is_empty() {
        return Err(DoseError::NoReachablePose);
    }
    let cells: Vec<(CellIndex, Point2)> = target.cells.iter().map(|&c| (c, grid.cell_center(c))).collect();
    let rates: Vec<Vec<(usize, f64)>> =
        candidates.iter().map(|p| target_rates(grid, p, lamps, &cells, options.cutoff)).collect();

    let required = target.required_dose;
    let tolerance = required * 1e-9;
    let mut remaining: Vec<f64> =
        target.cells.iter().map(|&c| (required - initial.map_or(0.0, |d| d.get(c))).max(0.0)).collect();
    for r in remaining.iter_mut() {
        if *r <= tolerance {
            *r = 0.0;
        }
    }
    let mut seen_by_any = vec![false; cells.len()];
    for list in &rates {
        for &(k, _) in list {
            seen_by_any[k] = true;
        }
    }
    let mut plan = DisinfectionPlan::default();
    for (k, &(c, _)) in cells.iter().enumerate() {
        if remaining[k] > 0.0 && !seen_by_any[k] {
            plan.uncoverable.push(c);
        }
    }

    let mut times = Vec::new();
    while plan.poses.len() < options.max_poses {
        // (score, dwell, candidate)
        let mut best: Option<(f64, f64, usize)> = None;
        for (ci, list) in rates.iter().enumerate() {
            times.clear();
            times.extend(list.iter().filter(|(k, _)| remaining[*k] > 0.0).map(|&(k, e)| remaining[k] / e));
            if times.is_empty() {
                continue;
            }
            times.sort_by(f64::total_cmp);
            for (n, &t) in times.iter().enumerate() {
                let score = (n + 1) as f64 / (t + options.pose_overhead);
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, t, ci));
                }
            }
        }
        let Some((_, dwell, ci)) = best else {
            break;
        };
        let mut completes = Vec::new();
        for &(k, e) in &rates[ci] {
            if remaining[k] <= 0.0 {
                continue;
            }
            remaining[k] -= e * dwell;
            if remaining[k] <= tolerance {
                remaining[k] = 0.0;
                completes.push(cells[k].0);
            }
        }
        plan.poses.push(PlannedPose { pose: candidates[ci], dwell, completes });
    }
    plan.covered = cells.iter().zip(&remaining).filter(|(_, r)| **r <= 0.0).map(|(c, _)| c.0).collect();
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    /// Share of all target cells at or above the required dose.
    pub covered_fraction: f64,
    /// Same share, over target cells not known to be uncoverable.
    pub coverable_fraction: f64,
    pub min_dose: f64,
    pub mean_dose: f64,
    pub uncovered: Vec<CellIndex>,
    pub uncoverable: Vec<CellIndex>,
}

pub fn coverage_report(dose: &DoseGrid, target: &DisinfectionTarget, uncoverable: &[CellIndex]) -> CoverageReport {
    let n = target.cells.len();
    let mut covered = 0usize;
    let mut coverable = 0usize;
    let mut coverable_covered = 0usize;
    let mut min_dose = f64::INFINITY;
    let mut sum = 0.0;
    let mut uncovered = Vec::new();
    for &c in &target.cells {
        let d = dose.get(c);
        min_dose = min_dose.min(d);
        sum += d;
        let ok = d >= target.required_dose;
        let counted = !uncoverable.contains(&c);
        if ok {
            covered += 1;
        } else {
            uncovered.push(c);
        }
        if counted {
            coverable += 1;
            if ok {
                coverable_covered += 1;
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    CoverageReport {
        covered_fraction: frac(covered, n),
        coverable_fraction: frac(coverable_covered, coverable),
        min_dose: if n == 0 { 0.0 } else { min_dose },
        mean_dose: if n == 0 { 0.0 } else { sum / n as f64 },
        uncovered,
        uncoverable: uncoverable.to_vec(),
    }
}

/// Stateless lamp rule: on only while requested over a live, fresh link.
pub fn interlock_tick(
    session_connected: bool,
    last_heartbeat_age: f64,
    lamp_requested: bool,
    heartbeat_timeout: f64,
) -> bool {
    lamp_requested && session_connected && last_heartbeat_age < heartbeat_timeout
}

/// Lamp interlock with latching: a link loss cancels the standing lamp
/// request, so the lamps stay dark after reconnection until a new command.
#[derive(Debug, Clone, PartialEq)]
pub struct LampInterlock {
    requested: bool,
    forced_off: bool,
    heartbeat_timeout: f64,
}

impl LampInterlock {
    pub fn new(heartbeat_timeout: f64) -> Self {
        Self { requested: false, forced_off: false, heartbeat_timeout }
    }

    /// An explicit operator command; clears any forced-off latch.
    pub fn command(&mut self, on: bool) {
        self.requested = on;
        self.forced_off = false;
    }

    /// Forces the lamps off for a reason other than the link, e.g. an empty battery.
    pub fn force_off(&mut self) {
        if self.requested {
            self.forced_off = true;
        }
        self.requested = false;
    }

    pub fn tick(&mut self, session_connected: bool, last_heartbeat_age: f64) -> bool {
        let on = interlock_tick(session_connected, last_heartbeat_age, self.requested, self.heartbeat_timeout);
        if !(session_connected && last_heartbeat_age < self.heartbeat_timeout) {
            self.force_off();
        }
        on
    }

    pub fn requested(&self) -> bool {
        self.requested
    }

    pub fn forced_off(&self) -> bool {
        self.forced_off
    }
}
