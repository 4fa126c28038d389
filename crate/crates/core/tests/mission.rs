use uvbot_core::disinfection::{coverage_report, DisinfectionTarget, PlannerOptions};
use uvbot_core::fixtures::two_rooms;
use uvbot_core::mission::{execute_disinfection, MissionConfig};
use uvbot_core::{SimConfig, Simulator};

fn run(seed: u64) -> (uvbot_core::mission::MissionReport, Vec<f64>) {
    let fx = two_rooms();
    let target = DisinfectionTarget::new(fx.targets.clone(), 20.0).unwrap();
    let mut sim = Simulator::new(fx.grid.clone(), fx.start, SimConfig::default(), seed).unwrap();
    let cfg = MissionConfig {
        planner: PlannerOptions { headings: 4, ..PlannerOptions::default() },
        ..MissionConfig::default()
    };
    let report = execute_disinfection(&mut sim, &target, &cfg, |_, _| {}).unwrap();
    let cov = coverage_report(sim.dose(), &target, &report.uncoverable);
    assert_eq!(cov, report.coverage);
    (report, sim.dose().values().to_vec())
}

#[test]
fn two_room_mission_covers_everything_coverable() {
    let fx = two_rooms();
    let (report, dose) = run(3);
    println!("rounds={} stops={} failed={:?}", report.rounds, report.stops.len(), report.failed_stops);
    assert!(!report.collided);
    assert_eq!(report.uncoverable, vec![fx.occluded]);
    assert_eq!(report.coverage.coverable_fraction, 1.0);
    assert_eq!(dose[fx.grid.index_of(fx.occluded)], 0.0);
}
