use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use uvbot::mapio::save_map;
use uvbot_core::fixtures::{two_rooms, walled_room};

fn uvbot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvbot")).args(args).env("UVBOT_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_artifacts_and_reports_through_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let ok = write(
        dir.path(),
        "ok.yaml",
        "map: { walled_room: [4, 4] }\nstart: [2, 2, 0]\nscript:\n  - { at: 0, lamp: true }\nduration: 2\n",
    );
    let o = uvbot(&["run", &ok, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["dose.pgm", "coverage.json", "trace.csv", "summary.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["outcome"], "completed");
    assert_eq!(summary["exit_code"], 0);

    let crash = write(
        dir.path(),
        "crash.yaml",
        "map: { walled_room: [3, 3] }\nstart: [1.5, 1.5, 0]\nscript:\n  - { at: 0, velocity: { v: 0.5, w: 0 } }\nduration: 20\n",
    );
    assert_eq!(code(&uvbot(&["run", &crash, "--out", out.to_str().unwrap()])), 3);
}

#[test]
fn config_errors_exit_2_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.yaml", "map: { walled_room: [4, 4] }\nstart: [2, 2, 0]\nautonomy: warp_speed\n");
    let o = uvbot(&["run", &bad, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.yaml:3:"), "{}", stderr(&o));

    let missing_map = write(dir.path(), "m.yaml", "map: { file: nowhere.yaml }\nstart: [1, 1, 0]\n");
    assert_eq!(code(&uvbot(&["run", &missing_map])), 2);
    // Argument errors are usage errors too.
    assert_eq!(code(&uvbot(&["run"])), 2);
    assert_eq!(code(&uvbot(&["plan", "--map", "x.yaml"])), 2);
}

#[test]
fn plan_prints_one_pose_for_one_visible_target() {
    let dir = tempfile::tempdir().unwrap();
    let map = save_map(&walled_room(4.0, 4.0), dir.path(), "room").unwrap();
    let targets = write(dir.path(), "t.yaml", "required_dose: 20\npoints: [[0.075, 2.025]]\n");
    let o = uvbot(&["plan", "--map", map.to_str().unwrap(), "--targets", &targets, "--start", "2,2,0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows = text.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count();
    assert_eq!(rows, 1, "{text}");
    assert!(text.contains("total dwell"), "{text}");
}

#[test]
fn plan_flags_occluded_targets_and_rejects_empty_sets() {
    let dir = tempfile::tempdir().unwrap();
    let fx = two_rooms();
    let map = save_map(&fx.grid, dir.path(), "ward").unwrap();
    let map = map.to_str().unwrap();
    let hidden = fx.grid.cell_center(fx.occluded);
    let open = fx.grid.cell_center(fx.targets[0]);
    let targets = write(
        dir.path(),
        "t.yaml",
        &format!("required_dose: 20\npoints: [[{}, {}], [{}, {}]]\n", hidden.x, hidden.y, open.x, open.y),
    );
    let o = uvbot(&["plan", "--map", map, "--targets", &targets]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("uncoverable (1)"), "{text}");
    assert!(text.contains(&format!("cell ({}, {})", fx.occluded.col, fx.occluded.row)), "{text}");

    let empty = write(dir.path(), "e.yaml", "required_dose: 20\npoints: []\n");
    let o = uvbot(&["plan", "--map", map, "--targets", &empty]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
}

#[test]
fn plan_execute_runs_the_plan() {
    let dir = tempfile::tempdir().unwrap();
    let map = save_map(&walled_room(4.0, 4.0), dir.path(), "room").unwrap();
    let targets = write(dir.path(), "t.yaml", "required_dose: 10\nrects: [[0.05, 1.0, 0.1, 3.0]]\n");
    let out = dir.path().join("out");
    let o = uvbot(&[
        "plan",
        "--map",
        map.to_str().unwrap(),
        "--targets",
        &targets,
        "--start",
        "2,2,0",
        "--execute",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cov: serde_json::Value = serde_json::from_slice(&fs::read(out.join("coverage.json")).unwrap()).unwrap();
    assert_eq!(cov["covered_fraction"], 1.0);
    assert!(stdout(&o).contains("covered 1.0000"), "{}", stdout(&o));
}

#[test]
fn serve_reports_startup_failures() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = uvbot(&["serve", "--port", &port, "--id", "r1"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("cannot listen"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.yaml", "image: nope.pgm\nresolution: 0.05\norigin: [0, 0, 0]\n");
    let o = uvbot(&["serve", "--port", "0", "--map", &bad, "--start", "1,1,0"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&uvbot(&["serve", "--id", "not a valid id!"])), 2);
}

#[test]
fn plan_without_room_for_the_robot_is_a_planner_failure() {
    let dir = tempfile::tempdir().unwrap();
    // A closet narrower than the robot.
    let map = save_map(&walled_room(0.5, 0.5), dir.path(), "closet").unwrap();
    let targets = write(dir.path(), "t.yaml", "required_dose: 10\npoints: [[0.075, 0.25]]\n");
    let o = uvbot(&["plan", "--map", map.to_str().unwrap(), "--targets", &targets]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}
