//! Closed-loop execution of a disinfection plan on the simulator.
//!
//! Stops are driven to autonomously and the dwell at each is recomputed
//! from the pose actually reached and the dose already delivered, so small
//! arrival errors never leave a claimed cell short. Cells still short after
//! a round (e.g. one that became occluded from the reached pose) are
//! replanned from the current dose, up to `max_rounds` times.

use alloc::vec::Vec;

use crate::disinfection::{
    coverage_report, plan_disinfection_poses, CoverageReport, DisinfectionTarget, DoseError, IrradianceField,
    PlannerOptions,
};
use crate::geom::Pose2D;
use crate::navigation::AutonomyLevel;
use crate::sim::{Command, GoalStatus, Simulator, TickReport};
use crate::world::CellIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct MissionConfig {
    pub candidate_spacing: f64,
    pub planner: PlannerOptions,
    pub max_rounds: usize,
    /// Extra time allowed to reach a stop beyond driving its path at full speed.
    pub travel_slack: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self { candidate_spacing: 0.5, planner: PlannerOptions::default(), max_rounds: 3, travel_slack: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutedStop {
    pub planned: Pose2D,
    pub reached: Pose2D,
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionReport {
    pub rounds: usize,
    pub stops: Vec<ExecutedStop>,
    /// Stops that could not be reached, with the final goal status.
    pub failed_stops: Vec<(Pose2D, GoalStatus)>,
    pub uncoverable: Vec<CellIndex>,
    pub coverage: CoverageReport,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MissionError {
    #[error(transparent)]
    Plan(#[from] DoseError),
}

/// Runs plan-and-execute rounds until every coverable target cell holds the
/// required dose. `on_tick` sees every tick, e.g. to record a trace. The
/// operator link is kept alive with a heartbeat on every tick.
pub fn execute_disinfection<F>(
    sim: &mut Simulator,
    target: &DisinfectionTarget,
    config: &MissionConfig,
    mut on_tick: F,
) -> Result<MissionReport, MissionError>
where
    F: FnMut(&Simulator, &TickReport),
{
    let mut report = MissionReport {
        rounds: 0,
        stops: Vec::new(),
        failed_stops: Vec::new(),
        uncoverable: Vec::new(),
        coverage: coverage_report(sim.dose(), target, &[]),
        collided: false,
    };
    let mut step = |sim: &mut Simulator, report: &mut MissionReport| {
        sim.submit(Command::Heartbeat);
        let r = sim.step();
        report.collided |= r.collided();
        on_tick(sim, &r);
    };

    if sim.state().autonomy != AutonomyLevel::Autonomous {
        sim.submit(Command::SetAutonomy(AutonomyLevel::Autonomous));
    }
    sim.submit(Command::Lamp(false));
    step(sim, &mut report);

    for round in 0..config.max_rounds {
        let options = PlannerOptions {
            start: Some(sim.state().pose.position()),
            robot_radius: config.planner.robot_radius.max(sim.config().inflation_radius),
            ..config.planner.clone()
        };
        let plan = plan_disinfection_poses(
            sim.grid(),
            target,
            &sim.config().lamps,
            config.candidate_spacing,
            &options,
            Some(sim.dose()),
        )?;
        if round == 0 {
            report.uncoverable = plan.uncoverable.clone();
        }
        if plan.poses.is_empty() {
            break;
        }
        report.rounds += 1;

        for stop in &plan.poses {
            sim.submit(Command::Goal { target: stop.pose.position(), heading: Some(stop.pose.theta()) });
            step(sim, &mut report);
            let budget = sim.active_path().map_or(0.0, |p| 2.0 * p.total_length / sim.config().limits.v_max)
                + config.travel_slack;
            let deadline = sim.time() + budget;
            while sim.goal_status() == GoalStatus::Active && sim.time() < deadline {
                step(sim, &mut report);
            }
            if sim.goal_status() != GoalStatus::Reached {
                if sim.goal_status() == GoalStatus::Active {
                    sim.submit(Command::Stop);
                    step(sim, &mut report);
                }
                report.failed_stops.push((stop.pose, sim.goal_status()));
                continue;
            }

            let reached = sim.state().pose;
            let field = IrradianceField::compute(sim.grid(), &reached, &sim.config().lamps, sim.config().dose_cutoff);
            let needed = stop
                .completes
                .iter()
                .filter_map(|&c| {
                    let rate = field.rate_at(sim.grid().index_of(c));
                    (rate > 0.0).then(|| (target.required_dose - sim.dose().get(c)).max(0.0) / rate)
                })
                .fold(0.0, f64::max);
            if needed <= 0.0 {
                continue;
            }
            // One spare tick absorbs rounding in the per-tick sums.
            let ticks = libm::ceil(needed / sim.config().dt) as u64 + 1;
            sim.submit(Command::Lamp(true));
            for _ in 0..ticks {
                step(sim, &mut report);
            }
            sim.submit(Command::Lamp(false));
            step(sim, &mut report);
            report.stops.push(ExecutedStop { planned: stop.pose, reached, dwell: ticks as f64 * sim.config().dt });
        }

        let cov = coverage_report(sim.dose(), target, &report.uncoverable);
        if cov.coverable_fraction >= 1.0 {
            break;
        }
    }
    report.coverage = coverage_report(sim.dose(), target, &report.uncoverable);
    Ok(report)
}
