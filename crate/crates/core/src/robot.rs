//! Simulated embodiment: differential-drive kinematics, a 360° planar LIDAR,
//! footprint collision checks and the battery.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_core::RngCore;
use rand_distr::{Distribution, Normal};

use crate::geom::{Point2, Pose2D};
use crate::world::{OccupancyGrid, WorldError};

/// Forward (`v`, m/s) and counterclockwise (`w`, rad/s) velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub v: f64,
    pub w: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist { v: 0.0, w: 0.0 };

    pub const fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    pub fn clamped(self, limits: &VelocityLimits) -> Twist {
        Twist { v: self.v.clamp(-limits.v_max, limits.v_max), w: self.w.clamp(-limits.w_max, limits.w_max) }
    }

    pub fn is_zero(&self) -> bool {
        self.v == 0.0 && self.w == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityLimits {
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self { v_max: 1.0, w_max: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RobotError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("beam count must be at least 1")]
    NoBeams,
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Exact unicycle integration of a constant twist over `dt`.
pub fn step_kinematics(pose: Pose2D, cmd: Twist, dt: f64) -> Result<Pose2D, RobotError> {
    if !(dt > 0.0) {
        return Err(RobotError::NonPositiveStep(dt));
    }
    let theta = pose.theta();
    let (x, y) = if cmd.w.abs() < 1e-9 {
        let (s, c) = libm::sincos(theta);
        (pose.x + cmd.v * c * dt, pose.y + cmd.v * s * dt)
    } else if cmd.v == 0.0 {
        (pose.x, pose.y)
    } else {
        let r = cmd.v / cmd.w;
        let (s0, c0) = libm::sincos(theta);
        let (s1, c1) = libm::sincos(theta + cmd.w * dt);
        (pose.x + r * (s1 - s0), pose.y - r * (c1 - c0))
    };
    Ok(Pose2D::new(x, y, theta + cmd.w * dt))
}

/// Rectangular footprint centered on the drive axis midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    /// Lateral extent, meters.
    pub width: f64,
    /// Longitudinal extent, meters.
    pub length: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self { width: 0.49, length: 0.62 }
    }
}

impl Footprint {
    /// Radius of the smallest circle around the center containing the footprint.
    pub fn circumscribed_radius(&self) -> f64 {
        0.5 * libm::hypot(self.width, self.length)
    }

    pub fn corners(&self, pose: &Pose2D) -> [Point2; 4] {
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [
            pose.transform_point(Point2::new(hl, hw)),
            pose.transform_point(Point2::new(-hl, hw)),
            pose.transform_point(Point2::new(-hl, -hw)),
            pose.transform_point(Point2::new(hl, -hw)),
        ]
    }
}

/// True iff the oriented footprint overlaps a blocked cell or leaves the grid.
pub fn check_collision(grid: &OccupancyGrid, pose: &Pose2D, footprint: &Footprint) -> bool {
    const EPS: f64 = 1e-9;
    let corners = footprint.corners(pose).map(|p| grid.to_grid_frame(p));
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(u, v) in &corners {
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    if umin < 0.0 || vmin < 0.0 || umax > grid.width() as f64 || vmax > grid.height() as f64 {
        return true;
    }
    // Rectangle axes in the grid frame.
    let heading = pose.theta() - grid.origin().theta();
    let (s, c) = libm::sincos(heading);
    let axes = [(c, s), (-s, c)];
    let project = |pts: &[(f64, f64)], axis: (f64, f64)| {
        pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &(u, v)| {
            let d = u * axis.0 + v * axis.1;
            (lo.min(d), hi.max(d))
        })
    };
    let rect_proj = axes.map(|a| project(&corners, a));

    let col_lo = libm::floor(umin) as usize;
    let col_hi = (libm::ceil(umax) as usize).min(grid.width());
    let row_lo = libm::floor(vmin) as usize;
    let row_hi = (libm::ceil(vmax) as usize).min(grid.height());
    for row in row_lo..row_hi {
        for col in col_lo..col_hi {
            let idx = row * grid.width() + col;
            if !grid.cells()[idx].is_blocking() {
                continue;
            }
            let (c0, r0) = (col as f64, row as f64);
            // Grid axes: the AABB of the rectangle against the cell square.
            if umax <= c0 + EPS || umin >= c0 + 1.0 - EPS || vmax <= r0 + EPS || vmin >= r0 + 1.0 - EPS {
                continue;
            }
            let square = [(c0, r0), (c0 + 1.0, r0), (c0 + 1.0, r0 + 1.0), (c0, r0 + 1.0)];
            let separated = axes.iter().zip(rect_proj.iter()).any(|(&axis, &(lo, hi))| {
                let (slo, shi) = project(&square, axis);
                shi <= lo + EPS || slo >= hi - EPS
            });
            if !separated {
                return true;
            }
        }
    }
    false
}

/// One sweep of the planar range finder. Beam angles are relative to the
/// robot heading.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    pub angle_min: f64,
    pub angle_increment: f64,
    pub ranges: Vec<f64>,
    pub range_max: f64,
    pub stamp: f64,
}

impl LaserScan {
    /// Robot-frame bearing of beam `i`.
    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment
    }

    pub fn beams(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ranges.iter().enumerate().map(|(i, &r)| (self.beam_angle(i), r))
    }

    /// Keeps every k-th beam so that at most `max_beams` remain.
    pub fn decimate(&self, max_beams: usize) -> LaserScan {
        let n = self.ranges.len();
        if max_beams == 0 || n <= max_beams {
            return self.clone();
        }
        let stride = n.div_ceil(max_beams);
        LaserScan {
            angle_min: self.angle_min,
            angle_increment: self.angle_increment * stride as f64,
            ranges: self.ranges.iter().step_by(stride).copied().collect(),
            range_max: self.range_max,
            stamp: self.stamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarConfig {
    pub beam_count: usize,
    pub range_max: f64,
    pub noise_sigma: f64,
    /// Shortest reportable range.
    pub range_min: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self { beam_count: 360, range_max: 10.0, noise_sigma: 0.01, range_min: 1e-3 }
    }
}

/// Casts `beam_count` rays evenly over a full turn starting at -π relative
/// to the heading. With zero noise the RNG is never touched.
pub fn simulate_lidar<R: RngCore + ?Sized>(
    grid: &OccupancyGrid,
    pose: &Pose2D,
    config: &LidarConfig,
    rng: &mut R,
    stamp: f64,
) -> Result<LaserScan, RobotError> {
    if config.beam_count == 0 {
        return Err(RobotError::NoBeams);
    }
    let angle_min = -PI;
    let angle_increment = 2.0 * PI / config.beam_count as f64;
    let noise = (config.noise_sigma > 0.0).then(|| Normal::new(0.0, config.noise_sigma).ok()).flatten();
    let origin = pose.position();
    let mut ranges = Vec::with_capacity(config.beam_count);
    for i in 0..config.beam_count {
        let angle = pose.theta() + angle_min + i as f64 * angle_increment;
        let mut r = grid.raycast(origin, angle, config.range_max)?;
        if let Some(n) = &noise {
            r += n.sample(rng);
        }
        ranges.push(r.clamp(config.range_min.min(config.range_max), config.range_max));
    }
    Ok(LaserScan { angle_min, angle_increment, ranges, range_max: config.range_max, stamp })
}

/// Electrical loads drawn from the pack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerModel {
    /// Drive, compute and telepresence load, W.
    pub base_load_w: f64,
    /// Total electrical draw of all lamps when lit, W.
    pub lamp_load_w: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        // Two 60 Wh packs over a three hour runtime give 40 W; four 16.7 W tubes.
        Self { base_load_w: 40.0, lamp_load_w: 4.0 * 16.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Battery {
    pub capacity_wh: f64,
    pub charge_wh: f64,
}

impl Default for Battery {
    fn default() -> Self {
        Self::full(120.0)
    }
}

impl Battery {
    pub fn full(capacity_wh: f64) -> Self {
        Self { capacity_wh, charge_wh: capacity_wh }
    }

    pub fn fraction(&self) -> f64 {
        if self.capacity_wh > 0.0 {
            self.charge_wh / self.capacity_wh
        } else {
            0.0
        }
    }

    pub fn is_empty(&self) -> bool {
        self.charge_wh <= 0.0
    }

    /// Drains the pack for `dt` seconds and returns the remaining charge.
    pub fn step(&mut self, dt: f64, lamp_on: bool, power: &PowerModel) -> f64 {
        self.charge_wh = step_battery(self.charge_wh, dt, lamp_on, power);
        self.charge_wh
    }
}

/// Charge after drawing the configured loads for `dt` seconds; never negative.
pub fn step_battery(charge_wh: f64, dt: f64, lamp_on: bool, power: &PowerModel) -> f64 {
    if !(dt > 0.0) {
        return charge_wh;
    }
    let load = power.base_load_w + if lamp_on { power.lamp_load_w } else { 0.0 };
    (charge_wh - load * dt / 3600.0).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Cell, CellIndex};
    use core::f64::consts::FRAC_PI_2;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: Pose2D, x: f64, y: f64, th: f64) -> bool {
        (a.x - x).abs() < 1e-12 && (a.y - y).abs() < 1e-12 && (a.theta() - th).abs() < 1e-12
    }

    #[test]
    fn kinematics_examples() {
        let o = Pose2D::default();
        assert!(close(step_kinematics(o, Twist::ZERO, 1.0).unwrap(), 0.0, 0.0, 0.0));
        assert!(close(step_kinematics(o, Twist::new(1.0, 0.0), 2.0).unwrap(), 2.0, 0.0, 0.0));
        let spun = step_kinematics(o, Twist::new(0.0, FRAC_PI_2), 1.0).unwrap();
        assert_eq!((spun.x, spun.y), (0.0, 0.0));
        assert!((spun.theta() - FRAC_PI_2).abs() < 1e-12);
        let arc = step_kinematics(o, Twist::new(1.0, 1.0), FRAC_PI_2).unwrap();
        assert!(close(arc, 1.0, 1.0, FRAC_PI_2));
        assert!(matches!(step_kinematics(o, Twist::ZERO, 0.0), Err(RobotError::NonPositiveStep(_))));
    }

    #[test]
    fn lidar_open_map_and_determinism() {
        let g = OccupancyGrid::new(200, 200, 0.05, Pose2D::default(), Cell::Free).unwrap();
        let cfg = LidarConfig { beam_count: 90, range_max: 3.0, noise_sigma: 0.0, ..LidarConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = Pose2D::new(5.0, 5.0, 0.3);
        let a = simulate_lidar(&g, &pose, &cfg, &mut rng, 0.0).unwrap();
        assert!(a.ranges.iter().all(|&r| r == 3.0));
        let b = simulate_lidar(&g, &pose, &cfg, &mut rng, 0.0).unwrap();
        assert_eq!(a, b);
        let none = LidarConfig { beam_count: 0, ..cfg };
        assert!(matches!(simulate_lidar(&g, &pose, &none, &mut rng, 0.0), Err(RobotError::NoBeams)));
    }

    #[test]
    fn lidar_noise_stays_in_range() {
        let g = OccupancyGrid::new(60, 60, 0.05, Pose2D::default(), Cell::Free).unwrap();
        let cfg = LidarConfig { beam_count: 360, range_max: 1.0, noise_sigma: 0.5, ..LidarConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scan = simulate_lidar(&g, &Pose2D::new(1.5, 1.5, 0.0), &cfg, &mut rng, 0.0).unwrap();
        assert!(scan.ranges.iter().all(|&r| r > 0.0 && r <= 1.0));
    }

    #[test]
    fn collision_basics() {
        let mut g = OccupancyGrid::new(100, 100, 0.05, Pose2D::default(), Cell::Free).unwrap();
        let fp = Footprint::default();
        assert!(!check_collision(&g, &Pose2D::new(2.5, 2.5, 0.4), &fp));
        g.fill_rect(Point2::new(2.4, 0.0), Point2::new(2.6, 5.0), Cell::Occupied);
        assert!(check_collision(&g, &Pose2D::new(2.5, 2.5, 0.0), &fp));
        assert!(check_collision(&g, &Pose2D::new(0.1, 1.0, 0.0), &fp));
        // Touching the grid edge exactly is not a collision; crossing it is.
        g.set(CellIndex::new(0, 0), Cell::Free);
        assert!(!check_collision(&g, &Pose2D::new(0.31, 0.245 + 1.0, 0.0), &fp));
    }

    #[test]
    fn decimate_scan() {
        let scan = LaserScan {
            angle_min: -PI,
            angle_increment: 2.0 * PI / 360.0,
            ranges: (0..360).map(|i| i as f64).collect(),
            range_max: 10.0,
            stamp: 0.0,
        };
        let d = scan.decimate(90);
        assert_eq!(d.ranges.len(), 90);
        assert_eq!(d.ranges[1], 4.0);
        assert!((d.beam_angle(1) - scan.beam_angle(4)).abs() < 1e-12);
    }

    #[test]
    fn battery_clamps_and_ignores_zero_step() {
        let p = PowerModel::default();
        assert_eq!(step_battery(10.0, 0.0, true, &p), 10.0);
        assert_eq!(step_battery(0.001, 3600.0, true, &p), 0.0);
        let mut b = Battery::full(120.0);
        b.step(3600.0, false, &p);
        assert!((b.charge_wh - 80.0).abs() < 1e-12);
        assert!((b.fraction() - 2.0 / 3.0).abs() < 1e-12);
    }
}
