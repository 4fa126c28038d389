//! Adaptable autonomy: operator assist filters, grid planning and the
//! rotate-then-drive follower shared by click-to-drive and autonomous goals.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::{FRAC_PI_2, SQRT_2};
use core::fmt;
use core::str::FromStr;

use crate::geom::{normalize_angle, Point2, Pose2D};
use crate::robot::{LaserScan, Twist, VelocityLimits};
use crate::world::{CellIndex, OccupancyGrid};

/// Operator-selectable degree of autonomy. `AssistedSteer` includes the
/// deceleration behavior of `AssistedDecel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AutonomyLevel {
    #[default]
    Manual,
    AssistedDecel,
    AssistedSteer,
    Autonomous,
}

impl AutonomyLevel {
    pub const ALL: [AutonomyLevel; 4] =
        [AutonomyLevel::Manual, AutonomyLevel::AssistedDecel, AutonomyLevel::AssistedSteer, AutonomyLevel::Autonomous];

    pub fn as_str(self) -> &'static str {
        match self {
            AutonomyLevel::Manual => "manual",
            AutonomyLevel::AssistedDecel => "assisted_decel",
            AutonomyLevel::AssistedSteer => "assisted_steer",
            AutonomyLevel::Autonomous => "autonomous",
        }
    }

    pub fn is_assisted(self) -> bool {
        matches!(self, AutonomyLevel::AssistedDecel | AutonomyLevel::AssistedSteer)
    }
}

impl fmt::Display for AutonomyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown autonomy level")]
pub struct UnknownLevel;

impl FromStr for AutonomyLevel {
    type Err = UnknownLevel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AutonomyLevel::ALL.into_iter().find(|l| l.as_str() == s).ok_or(UnknownLevel)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NavError {
    #[error("assist parameters must satisfy 0 < d_stop < d_slow, 0 < cone <= pi/2, d_influence > 0")]
    BadAssistParams,
    #[error("target is {distance:.2} m away, beyond the manual drive range of {range:.2} m")]
    BeyondManualRange { distance: f64, range: f64 },
}

/// Thresholds for the assisted-teleoperation filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssistParams {
    pub d_stop: f64,
    pub d_slow: f64,
    pub cone_half_angle: f64,
    pub d_influence: f64,
    /// Yaw rate per unit repulsion, rad/s.
    pub k_steer: f64,
    pub w_max: f64,
}

impl Default for AssistParams {
    fn default() -> Self {
        Self {
            d_stop: 0.35,
            d_slow: 1.0,
            cone_half_angle: 30f64.to_radians(),
            d_influence: 1.2,
            k_steer: 0.8,
            w_max: VelocityLimits::default().w_max,
        }
    }
}

impl AssistParams {
    pub fn validate(&self) -> Result<(), NavError> {
        let ok = self.d_stop > 0.0
            && self.d_stop < self.d_slow
            && self.cone_half_angle > 0.0
            && self.cone_half_angle <= FRAC_PI_2
            && self.d_influence > 0.0
            && self.w_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NavError::BadAssistParams)
        }
    }
}

/// Shortest range among beams within `half_angle` of robot-frame `direction`,
/// or infinity when no beam falls in the cone.
pub fn min_range_in_cone(scan: &LaserScan, direction: f64, half_angle: f64) -> f64 {
    scan.beams()
        .filter(|&(a, _)| normalize_angle(a - direction).abs() <= half_angle)
        .map(|(_, r)| r)
        .fold(f64::INFINITY, f64::min)
}

/// Scales forward speed linearly from full at `d_slow` to zero at `d_stop`,
/// looking along the direction of motion. Yaw rate passes through.
pub fn assist_decelerate(cmd: Twist, scan: &LaserScan, p: &AssistParams) -> Twist {
    let direction = if cmd.v >= 0.0 { 0.0 } else { core::f64::consts::PI };
    let d = min_range_in_cone(scan, direction, p.cone_half_angle);
    let scale = ((d - p.d_stop) / (p.d_slow - p.d_stop)).clamp(0.0, 1.0);
    Twist::new(cmd.v * scale, cmd.w)
}

/// Signed repulsion from obstacles in the forward half-plane: positive when
/// the left side is more crowded.
///
/// Each side is summed separately in order of increasing bearing magnitude,
/// so mirroring a scan swaps the two partial sums bit for bit and the result
/// changes sign exactly.
pub fn steer_repulsion(scan: &LaserScan, p: &AssistParams) -> f64 {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (beta, r) in scan.beams() {
        let beta = normalize_angle(beta);
        // Bearings of mirrored beams agree only to a few ulps; snapping to a
        // nanoradian makes both sides see the same magnitude.
        let mag = libm::round(beta.abs() * 1e9) / 1e9;
        if mag >= FRAC_PI_2 || mag == 0.0 || !(r < p.d_influence) {
            continue;
        }
        let u = (p.d_influence - r) / p.d_influence;
        let term = (mag, u * libm::sin(mag));
        if beta > 0.0 {
            left.push(term);
        } else {
            right.push(term);
        }
    }
    let side_sum = |terms: &mut Vec<(f64, f64)>| {
        terms.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        terms.iter().map(|t| t.1).sum::<f64>()
    };
    side_sum(&mut left) - side_sum(&mut right)
}

/// Deceleration followed by a repulsive yaw correction away from nearby
/// obstacles on either side.
pub fn assist_steer(cmd: Twist, scan: &LaserScan, p: &AssistParams) -> Twist {
    let slowed = assist_decelerate(cmd, scan, p);
    let repulsion = steer_repulsion(scan, p);
    if repulsion == 0.0 {
        return slowed;
    }
    Twist::new(slowed.v, (slowed.w - p.k_steer * repulsion).clamp(-p.w_max, p.w_max))
}

/// Routes an operator command through the filter for `level`. Manual and
/// Autonomous commands pass through untouched.
pub fn apply_assist(level: AutonomyLevel, cmd: Twist, scan: Option<&LaserScan>, p: &AssistParams) -> Twist {
    match (level, scan) {
        (AutonomyLevel::AssistedDecel, Some(s)) if !s.ranges.is_empty() => assist_decelerate(cmd, s, p),
        (AutonomyLevel::AssistedSteer, Some(s)) if !s.ranges.is_empty() => assist_steer(cmd, s, p),
        _ => cmd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("start lies outside the map")]
    StartOutOfBounds,
    #[error("goal lies outside the map")]
    GoalOutOfBounds,
    #[error("start is inside an obstacle or its clearance zone")]
    StartOccupied,
    #[error("goal is inside an obstacle or its clearance zone")]
    GoalOccupied,
    #[error("no collision-free route reaches the goal")]
    GoalUnreachable,
}

/// A decimated route over cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Point2>,
    pub total_length: f64,
    /// Cost of the underlying 8-connected cell path, meters.
    pub cost: f64,
}

impl Path {
    pub fn from_waypoints(waypoints: Vec<Point2>, cost: f64) -> Self {
        let total_length = waypoints.windows(2).map(|w| w[0].distance(w[1])).sum();
        Self { waypoints, total_length, cost }
    }

    pub fn goal(&self) -> Option<Point2> {
        self.waypoints.last().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OpenEntry {
    f: f64,
    h: f64,
    index: usize,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    // Reversed so that BinaryHeap pops the smallest f, then smallest h,
    // then the lowest row-major index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.h.total_cmp(&self.h)).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)];

/// Inflates `grid` by `robot_radius` and plans on the result.
pub fn plan_path(grid: &OccupancyGrid, start: Point2, goal: Point2, robot_radius: f64) -> Result<Path, PlanError> {
    plan_on_inflated(&grid.inflate(robot_radius), start, goal)
}

/// A* over the 8-connected free cells of an already inflated grid.
///
/// Straight moves cost one resolution and diagonal moves √2 resolutions;
/// a diagonal is only allowed when both orthogonal neighbors are free so the
/// route never squeezes between two blocked corners.
pub fn plan_on_inflated(grid: &OccupancyGrid, start: Point2, goal: Point2) -> Result<Path, PlanError> {
    let s = grid.world_to_cell(start).ok_or(PlanError::StartOutOfBounds)?;
    let g = grid.world_to_cell(goal).ok_or(PlanError::GoalOutOfBounds)?;
    let blocked = |c: CellIndex| grid.cells()[grid.index_of(c)].is_blocking();
    if blocked(s) {
        return Err(PlanError::StartOccupied);
    }
    if blocked(g) {
        return Err(PlanError::GoalOccupied);
    }
    let res = grid.resolution();
    let (w, h) = (grid.width() as isize, grid.height() as isize);
    let start_i = grid.index_of(s);
    let goal_i = grid.index_of(g);
    if start_i == goal_i {
        return Ok(Path::from_waypoints(vec![grid.cell_center(s)], 0.0));
    }

    // Costs are kept as move counts so equal routes compare bit-identically.
    let cost_of = |straight: u32, diag: u32| (f64::from(straight) + f64::from(diag) * SQRT_2) * res;
    let heuristic = |i: usize| {
        let dc = (i % grid.width()) as f64 - g.col as f64;
        let dr = (i / grid.width()) as f64 - g.row as f64;
        libm::hypot(dc, dr) * res
    };

    let n = grid.len();
    let mut counts: Vec<(u32, u32)> = vec![(u32::MAX, u32::MAX); n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    counts[start_i] = (0, 0);
    best[start_i] = 0.0;
    let h0 = heuristic(start_i);
    open.push(OpenEntry { f: h0, h: h0, index: start_i });

    while let Some(OpenEntry { index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == goal_i {
            break;
        }
        let (col, row) = ((index % grid.width()) as isize, (index / grid.width()) as isize);
        let free = |c: isize, r: isize| {
            c >= 0 && r >= 0 && c < w && r < h && !grid.cells()[(r * w + c) as usize].is_blocking()
        };
        for &(dc, dr) in &NEIGHBORS {
            let (nc, nr) = (col + dc, row + dr);
            if !free(nc, nr) {
                continue;
            }
            let diagonal = dc != 0 && dr != 0;
            if diagonal && !(free(col + dc, row) && free(col, row + dr)) {
                continue;
            }
            let ni = (nr * w + nc) as usize;
            if closed[ni] {
                continue;
            }
            let (a, b) = counts[index];
            let next = if diagonal { (a, b + 1) } else { (a + 1, b) };
            let cost = cost_of(next.0, next.1);
            if cost < best[ni] {
                best[ni] = cost;
                counts[ni] = next;
                parent[ni] = index;
                let hn = heuristic(ni);
                open.push(OpenEntry { f: cost + hn, h: hn, index: ni });
            }
        }
    }

    if !closed[goal_i] {
        return Err(PlanError::GoalUnreachable);
    }
    let mut cells = Vec::new();
    let mut cur = goal_i;
    while cur != usize::MAX {
        cells.push(grid.cell_at_index(cur));
        cur = parent[cur];
    }
    cells.reverse();
    let waypoints = decimate(&cells).into_iter().map(|c| grid.cell_center(c)).collect();
    Ok(Path::from_waypoints(waypoints, best[goal_i]))
}

/// Greedy string pulling: keeps a waypoint only when the next one cannot be
/// seen directly over free cells of `inflated`. The graph cost is kept.
pub fn shortcut_path(path: &Path, inflated: &OccupancyGrid) -> Path {
    let pts = &path.waypoints;
    if pts.len() < 3 {
        return path.clone();
    }
    let clear = |a: Point2, b: Point2| inflated.line_of_sight(a, b).unwrap_or(false);
    let mut out = vec![pts[0]];
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut j = pts.len() - 1;
        while j > i + 1 && !clear(pts[i], pts[j]) {
            j -= 1;
        }
        out.push(pts[j]);
        i = j;
    }
    Path::from_waypoints(out, path.cost)
}

/// Center of the free cell of `inflated` nearest to `p` (by cell steps,
/// breadth first), searched up to `max_radius` meters.
pub fn nearest_free_cell(inflated: &OccupancyGrid, p: Point2, max_radius: f64) -> Option<Point2> {
    let start = inflated.world_to_cell(p)?;
    let reach = libm::ceil(max_radius / inflated.resolution()) as isize;
    let mut best: Option<(f64, usize)> = None;
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let (c, r) = (start.col as isize + dc, start.row as isize + dr);
            if c < 0 || r < 0 || c >= inflated.width() as isize || r >= inflated.height() as isize {
                continue;
            }
            let idx = r as usize * inflated.width() + c as usize;
            if inflated.cells()[idx].is_blocking() {
                continue;
            }
            let d = inflated.cell_center(CellIndex::new(c as usize, r as usize)).distance(p);
            if d <= max_radius && best.is_none_or(|(bd, bi)| d < bd || (d == bd && idx < bi)) {
                best = Some((d, idx));
            }
        }
    }
    best.map(|(_, i)| inflated.cell_center(inflated.cell_at_index(i)))
}

/// Drops interior cells that continue the previous step direction.
fn decimate(cells: &[CellIndex]) -> Vec<CellIndex> {
    if cells.len() < 3 {
        return cells.to_vec();
    }
    let dir = |a: CellIndex, b: CellIndex| (b.col as isize - a.col as isize, b.row as isize - a.row as isize);
    let mut out = vec![cells[0]];
    for w in cells.windows(3) {
        if dir(w[0], w[1]) != dir(w[1], w[2]) {
            out.push(w[1]);
        }
    }
    out.push(cells[cells.len() - 1]);
    out
}

/// Gains for the rotate-then-drive controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerParams {
    pub lookahead: f64,
    /// Heading errors beyond this turn in place.
    pub alpha_turn: f64,
    pub k_v: f64,
    pub k_omega: f64,
    pub goal_tolerance: f64,
    /// Furthest click-to-drive target accepted, meters.
    pub manual_range: f64,
    pub limits: VelocityLimits,
}

impl Default for FollowerParams {
    fn default() -> Self {
        Self {
            lookahead: 0.5,
            alpha_turn: 0.9,
            k_v: 1.0,
            k_omega: 2.0,
            goal_tolerance: 0.1,
            manual_range: 3.0,
            limits: VelocityLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowCommand {
    pub twist: Twist,
    pub reached: bool,
}

impl FollowCommand {
    const REACHED: FollowCommand = FollowCommand { twist: Twist::ZERO, reached: true };
}

/// Turn in place toward large heading errors, otherwise drive with speed
/// proportional to the remaining distance.
fn rotate_then_drive(alpha: f64, remaining: f64, p: &FollowerParams) -> Twist {
    let w = (p.k_omega * alpha).clamp(-p.limits.w_max, p.limits.w_max);
    if alpha.abs() > p.alpha_turn {
        Twist::new(0.0, w)
    } else {
        Twist::new((p.k_v * remaining).clamp(0.0, p.limits.v_max), w)
    }
}

/// Pure-pursuit step along `path` from `pose`.
pub fn follow_path(pose: &Pose2D, path: &Path, p: &FollowerParams) -> FollowCommand {
    let Some(goal) = path.goal() else {
        return FollowCommand::REACHED;
    };
    let here = pose.position();
    if here.distance(goal) <= p.goal_tolerance {
        return FollowCommand::REACHED;
    }
    let (along, _) = project_onto(&path.waypoints, here);
    let target = point_at(&path.waypoints, along + p.lookahead);
    let remaining = path.total_length - along;
    let local = pose.inverse_transform_point(target);
    let alpha = libm::atan2(local.y, local.x);
    FollowCommand { twist: rotate_then_drive(alpha, remaining.max(here.distance(goal)), p), reached: false }
}

/// Click-to-drive toward a robot-frame target.
pub fn drive_to_point(target: Point2, p: &FollowerParams) -> Result<FollowCommand, NavError> {
    let distance = target.norm();
    if distance > p.manual_range {
        return Err(NavError::BeyondManualRange { distance, range: p.manual_range });
    }
    if distance <= p.goal_tolerance {
        return Ok(FollowCommand::REACHED);
    }
    let alpha = libm::atan2(target.y, target.x);
    Ok(FollowCommand { twist: rotate_then_drive(alpha, distance, p), reached: false })
}

/// Arc-length position of the closest point on the polyline, and the distance to it.
fn project_onto(points: &[Point2], p: Point2) -> (f64, f64) {
    if points.len() < 2 {
        return (0.0, points.first().map_or(0.0, |q| q.distance(p)));
    }
    let mut best = (0.0, f64::INFINITY);
    let mut walked = 0.0;
    for seg in points.windows(2) {
        let d = seg[1] - seg[0];
        let len2 = d.dot(d);
        let t = if len2 > 0.0 { ((p - seg[0]).dot(d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let q = seg[0] + d * t;
        let dist = q.distance(p);
        let len = libm::sqrt(len2);
        if dist < best.1 {
            best = (walked + t * len, dist);
        }
        walked += len;
    }
    best
}

/// Point at arc length `s` along the polyline, clamped to its ends.
fn point_at(points: &[Point2], s: f64) -> Point2 {
    let mut remaining = s.max(0.0);
    for seg in points.windows(2) {
        let len = seg[0].distance(seg[1]);
        if remaining <= len && len > 0.0 {
            return seg[0] + (seg[1] - seg[0]) * (remaining / len);
        }
        remaining -= len;
    }
    points.last().copied().unwrap_or_default()
}
