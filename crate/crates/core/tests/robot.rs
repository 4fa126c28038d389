use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uvbot_core::robot::{
    check_collision, simulate_lidar, step_battery, step_kinematics, Battery, LidarConfig, PowerModel,
};
use uvbot_core::{Cell, CellIndex, Footprint, OccupancyGrid, Point2, Pose2D, Twist};

fn euler(pose: Pose2D, cmd: Twist, dt: f64, substeps: u32) -> (f64, f64, f64) {
    let h = dt / substeps as f64;
    let (mut x, mut y, mut th) = (pose.x, pose.y, pose.theta());
    for _ in 0..substeps {
        x += cmd.v * th.cos() * h;
        y += cmd.v * th.sin() * h;
        th += cmd.w * h;
    }
    (x, y, th)
}

#[test]
fn exact_integrator_matches_fine_euler() {
    use rand_chacha::rand_core::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut u = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let cmd = Twist::new(-1.0 + 2.0 * u(), -1.5 + 3.0 * u());
        let dt = 0.01 + 2.0 * u();
        let start = Pose2D::new(u(), u(), -3.0 + 6.0 * u());
        let exact = step_kinematics(start, cmd, dt).unwrap();
        let (x, y, _) = euler(start, cmd, dt, 1_000_000);
        worst = worst.max(Point2::new(x, y).distance(exact.position()));
    }
    assert!(worst < 1e-4, "worst {worst}");
}

#[test]
fn rotation_in_place_keeps_position_bits() {
    let start = Pose2D::new(0.1 + 0.2, -7.3, 0.4);
    let mut p = start;
    for _ in 0..1000 {
        p = step_kinematics(p, Twist::new(0.0, 1.3), 0.05).unwrap();
    }
    assert_eq!(p.x.to_bits(), start.x.to_bits());
    assert_eq!(p.y.to_bits(), start.y.to_bits());
}

#[test]
fn non_positive_step_is_rejected() {
    assert!(step_kinematics(Pose2D::default(), Twist::new(1.0, 0.0), 0.0).is_err());
    assert!(step_kinematics(Pose2D::default(), Twist::new(1.0, 0.0), -1.0).is_err());
}

proptest! {
    #[test]
    fn steps_compose(v in -1.0..1.0f64, w in -1.5..1.5f64, t1 in 0.01..1.0f64, t2 in 0.01..1.0f64, th in -3.0..3.0f64) {
        let p = Pose2D::new(1.0, 2.0, th);
        let cmd = Twist::new(v, w);
        let two = step_kinematics(step_kinematics(p, cmd, t1).unwrap(), cmd, t2).unwrap();
        let one = step_kinematics(p, cmd, t1 + t2).unwrap();
        prop_assert!(two.position().distance(one.position()) < 1e-9);
        prop_assert!(uvbot_core::normalize_angle(two.theta() - one.theta()).abs() < 1e-9);
    }

    /// Chord of a circular arc of length |v|·dt and turning angle w·dt.
    #[test]
    fn displacement_is_the_arc_chord(v in -1.0..1.0f64, w in -1.5..1.5f64, dt in 0.01..2.0f64) {
        let p = Pose2D::new(0.0, 0.0, 0.3);
        let q = step_kinematics(p, Twist::new(v, w), dt).unwrap();
        let phi = w * dt;
        let chord = if phi.abs() < 1e-6 {
            v.abs() * dt
        } else {
            2.0 * (v / w).abs() * (phi / 2.0).sin().abs()
        };
        prop_assert!((q.position().norm() - chord).abs() < 1e-9);
    }
}

fn walled(width: usize, height: usize, res: f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(width, height, res, Pose2D::default(), Cell::Free).unwrap();
    for col in 0..width {
        g.set(CellIndex::new(col, 0), Cell::Occupied);
        g.set(CellIndex::new(col, height - 1), Cell::Occupied);
    }
    for row in 0..height {
        g.set(CellIndex::new(0, row), Cell::Occupied);
        g.set(CellIndex::new(width - 1, row), Cell::Occupied);
    }
    g
}

#[test]
fn lidar_sees_a_flat_wall_at_d_over_cos() {
    // East wall face at x = 3.95 m; robot at x = 2.0 facing east.
    let g = walled(80, 80, 0.05);
    let pose = Pose2D::new(2.0, 2.0, 0.0);
    let cfg = LidarConfig { noise_sigma: 0.0, ..LidarConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scan = simulate_lidar(&g, &pose, &cfg, &mut rng, 0.0).unwrap();
    assert_eq!(scan.ranges.len(), 360);
    assert_eq!(scan.angle_min, -std::f64::consts::PI);
    let d = 3.95 - 2.0;
    for (alpha, r) in scan.beams() {
        if alpha.abs() < 40f64.to_radians() {
            assert!((r - d / alpha.cos()).abs() < 1e-9, "alpha {alpha} r {r}");
        }
    }
}

#[test]
fn lidar_noise_is_seeded() {
    let g = walled(80, 80, 0.05);
    let pose = Pose2D::new(2.0, 2.0, 0.7);
    let cfg = LidarConfig::default();
    let a = simulate_lidar(&g, &pose, &cfg, &mut ChaCha8Rng::seed_from_u64(9), 0.0).unwrap();
    let b = simulate_lidar(&g, &pose, &cfg, &mut ChaCha8Rng::seed_from_u64(9), 0.0).unwrap();
    let c = simulate_lidar(&g, &pose, &cfg, &mut ChaCha8Rng::seed_from_u64(10), 0.0).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.ranges.iter().all(|r| (cfg.range_min..=cfg.range_max).contains(r)));
}

/// Separating-axis-free overlap test for two convex quadrilaterals: they
/// intersect iff a vertex of one lies inside the other or two edges cross.
fn quads_overlap(a: &[Point2; 4], b: &[Point2; 4]) -> bool {
    fn cross(o: Point2, p: Point2, q: Point2) -> f64 {
        (p.x - o.x) * (q.y - o.y) - (p.y - o.y) * (q.x - o.x)
    }
    fn inside(poly: &[Point2; 4], p: Point2) -> bool {
        let s: Vec<f64> = (0..4).map(|i| cross(poly[i], poly[(i + 1) % 4], p)).collect();
        s.iter().all(|v| *v > 0.0) || s.iter().all(|v| *v < 0.0)
    }
    fn segments_cross(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
        let d1 = cross(q1, q2, p1);
        let d2 = cross(q1, q2, p2);
        let d3 = cross(p1, p2, q1);
        let d4 = cross(p1, p2, q2);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    }
    a.iter().any(|p| inside(b, *p))
        || b.iter().any(|p| inside(a, *p))
        || (0..4).any(|i| (0..4).any(|j| segments_cross(a[i], a[(i + 1) % 4], b[j], b[(j + 1) % 4])))
}

fn collision_oracle(g: &OccupancyGrid, pose: &Pose2D, fp: &Footprint) -> bool {
    let corners = fp.corners(pose);
    if corners.iter().any(|c| !g.contains(*c)) {
        return true;
    }
    let res = g.resolution();
    (0..g.len()).any(|i| {
        if !g.cells()[i].is_blocking() {
            return false;
        }
        let c = g.cell_at_index(i);
        let (x0, y0) = (c.col as f64 * res, c.row as f64 * res);
        let square = [
            Point2::new(x0, y0),
            Point2::new(x0 + res, y0),
            Point2::new(x0 + res, y0 + res),
            Point2::new(x0, y0 + res),
        ];
        quads_overlap(&corners, &square)
    })
}

/// Samples the footprint on a res/4 lattice plus its outline.
fn sampled_collision(g: &OccupancyGrid, pose: &Pose2D, fp: &Footprint) -> bool {
    let step = g.resolution() / 4.0;
    let nx = (fp.length / step).ceil() as usize;
    let ny = (fp.width / step).ceil() as usize;
    (0..=nx).any(|i| {
        (0..=ny).any(|j| {
            let local = Point2::new(
                -fp.length / 2.0 + fp.length * i as f64 / nx as f64,
                -fp.width / 2.0 + fp.width * j as f64 / ny as f64,
            );
            g.cell_at(pose.transform_point(local)).is_none_or(|c| c.is_blocking())
        })
    })
}

#[test]
fn corner_clip_at_45_degrees_is_detected() {
    // A single blocked cell just inside the reach of a 45° corner but well
    // outside the inscribed circle.
    let mut g = OccupancyGrid::new(60, 60, 0.05, Pose2D::default(), Cell::Free).unwrap();
    let fp = Footprint::default();
    let pose = Pose2D::new(1.5, 1.5, std::f64::consts::FRAC_PI_4);
    let corner = fp.corners(&pose)[0];
    let cell = g.world_to_cell(corner + Point2::new(-0.01, -0.01)).unwrap();
    g.set(cell, Cell::Occupied);
    assert!(check_collision(&g, &pose, &fp));
    assert!(collision_oracle(&g, &pose, &fp));
    // Nudged away along the heading diagonal, the corner clears it.
    let away = Pose2D::new(1.45, 1.45, std::f64::consts::FRAC_PI_4);
    assert!(!check_collision(&g, &away, &fp));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]
    #[test]
    fn collision_matches_exact_polygon_oracle(
        x in 0.6..2.4f64, y in 0.6..2.4f64, th in -3.2..3.2f64,
        blocks in proptest::collection::vec((0usize..60, 0usize..60), 1..6),
    ) {
        let mut g = OccupancyGrid::new(60, 60, 0.05, Pose2D::default(), Cell::Free).unwrap();
        for (c, r) in blocks {
            g.set(CellIndex::new(c, r), Cell::Occupied);
        }
        let fp = Footprint::default();
        let pose = Pose2D::new(x, y, th);
        let sat = check_collision(&g, &pose, &fp);
        prop_assert_eq!(sat, collision_oracle(&g, &pose, &fp));
        if sampled_collision(&g, &pose, &fp) {
            prop_assert!(sat);
        }
    }
}

#[test]
fn battery_drains_at_base_load_for_three_hours() {
    let power = PowerModel::default();
    let mut b = Battery::default();
    let mut ticks = 0u64;
    while !b.is_empty() {
        b.step(0.05, false, &power);
        ticks += 1;
    }
    assert!(ticks.abs_diff(216_000) <= 1, "{ticks}");
}

#[test]
fn lamps_shorten_runtime() {
    let power = PowerModel::default();
    assert!((power.lamp_load_w - 66.8).abs() < 1e-12);
    // 120 Wh / 106.8 W in seconds.
    let expected = 120.0 / 106.8 * 3600.0;
    let mut charge = 120.0;
    let mut t: f64 = 0.0;
    while charge > 0.0 {
        charge = step_battery(charge, 1.0, true, &power);
        t += 1.0;
    }
    assert!((t - expected).abs() <= 1.0, "{t} vs {expected}");
    assert_eq!(step_battery(0.0, 1.0, true, &power), 0.0);
    assert_eq!(step_battery(5.0, 0.0, true, &power), 5.0);
}
