use std::fs;
use std::path::Path;

use uvbot::run::{run_scenario, simulate, CoverageFile, Outcome, EXIT_COLLISION, EXIT_OK, EXIT_PLANNER};
use uvbot::scenario::Scenario;
use uvbot_core::fixtures::two_rooms;
use uvbot_core::Point2;

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text, Path::new("test.yaml")).unwrap()
}

#[test]
fn empty_script_leaves_zero_dose() {
    let r = simulate(&scenario("map: { walled_room: [4, 3] }\nstart: [2, 1.5, 0]\nduration: 5\n")).unwrap();
    assert_eq!(r.summary.outcome, Outcome::Completed);
    assert_eq!(r.summary.ticks, 100);
    assert!(r.sim.dose().values().iter().all(|d| *d == 0.0));
    assert_eq!(r.summary.max_dose, 0.0);
    // Header, the initial pose, then one row per tick.
    assert_eq!(r.trace.rows(), 101);
    assert!(matches!(r.coverage, CoverageFile::NoTargets { .. }));
}

#[test]
fn single_lamp_at_one_meter_from_a_wall_cell_reaches_the_hand_computed_dose() {
    // 100 J/m² · 4π (1 m)² / 4.5 W = 279.25 s. The west wall's inner cells
    // are centered on x = 0.075.
    let text = "map: { walled_room: [6, 4] }\nstart: [1.075, 2.025, 0]\n\
                lamps: { uvc_power: 4.5, count: 1 }\n\
                targets: { required_dose: 100, points: [[0.075, 2.025]] }\n\
                script:\n  - { at: 0, lamp: true }\nduration: 279.25\n";
    let r = simulate(&scenario(text)).unwrap();
    let g = r.sim.grid();
    let cell = g.world_to_cell(Point2::new(0.075, 2.025)).unwrap();
    assert_eq!(g.get(cell), Some(uvbot_core::Cell::Occupied));
    let got = r.sim.dose().get(cell);
    assert!((got - 100.0).abs() / 100.0 < 0.01, "{got}");
    let CoverageFile::Targets(cov) = &r.coverage else {
        panic!("targets expected");
    };
    assert_eq!(cov.cells.len(), 1);
    assert!((cov.min_dose - got).abs() < 1e-12);
}

#[test]
fn runs_are_byte_identical() {
    let text = "seed: 42\nmap: { walled_room: [5, 4] }\nstart: [1, 2, 0]\nautonomy: assisted_steer\n\
                script:\n  - { at: 0, lamp: true }\n  - { at: 0, velocity: { v: 0.3, w: 0.2 } }\n\
                \x20 - { at: 4, stop: null }\n  - { at: 4.5, autonomy: autonomous }\n\
                \x20 - { at: 4.5, goal: { x: 3.5, y: 2.5 } }\n\
                \x20 - { at: 4.5, wait_goal: { timeout: 30 } }\nduration: 10\n";
    let s = scenario(text);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = run_scenario(&s, a.path()).unwrap();
    let sb = run_scenario(&s, b.path()).unwrap();
    assert_eq!(sa.exit_code, EXIT_OK, "{:?}", sa.reason);
    assert_eq!(sa.goal_status, "reached");
    assert_eq!(sa.rejected_commands, 0);
    assert_eq!(sa, sb);
    for name in ["trace.csv", "dose.pgm", "coverage.json", "summary.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs");
    }
    let trace = fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,x,y,theta,v,w,mode,lamp\n"));
}

#[test]
fn driving_into_a_wall_is_a_collision() {
    let text = "map: { walled_room: [3, 3] }\nstart: [1.5, 1.5, 0]\n\
                script:\n  - { at: 0, velocity: { v: 0.5, w: 0 } }\nduration: 20\n";
    let out = tempfile::tempdir().unwrap();
    let summary = run_scenario(&scenario(text), out.path()).unwrap();
    assert_eq!(summary.outcome, Outcome::Collision);
    assert_eq!(summary.exit_code, EXIT_COLLISION);
    assert!(summary.time < 20.0, "a collision ends the run early");
    // Artifacts are still written for post-mortems.
    assert!(out.path().join("trace.csv").exists());
}

#[test]
fn unreachable_goal_is_a_planner_failure() {
    let fx = two_rooms();
    let inside = fx.grid.cell_center(fx.occluded);
    let text = format!(
        "map: {{ fixture: two_rooms }}\nautonomy: autonomous\nscript:\n  - {{ at: 0, goal: {{ x: {}, y: {} }} }}\n\
         \x20 - {{ at: 0, wait_goal: {{ timeout: 60 }} }}\n",
        inside.x, inside.y
    );
    let r = simulate(&scenario(&text)).unwrap();
    assert_eq!(r.summary.outcome, Outcome::PlannerFailure, "{:?}", r.summary.reason);
    assert_eq!(r.summary.exit_code, EXIT_PLANNER);
    // The cabinet is too small for the robot, so its inside is blocked once inflated.
    assert_eq!(r.summary.goal_status, "rejected_goal_occupied");
}

#[test]
fn dropping_the_session_cuts_the_lamps_at_once() {
    let text = "map: { walled_room: [4, 4] }\nstart: [2, 2, 0]\nscript:\n  - { at: 0, lamp: true }\n\
                \x20 - { at: 1, disconnect: null }\nduration: 6\n";
    let r = simulate(&scenario(text)).unwrap();
    assert!(!r.summary.lamp_on);
    assert!(r.sim.state().lamp_forced_off);
    let lit_rows = r.trace.as_str().lines().skip(1).filter(|l| l.ends_with(",1")).count();
    assert_eq!(lit_rows, 20);
}
