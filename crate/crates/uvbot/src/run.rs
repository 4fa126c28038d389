//! Headless scenario execution. Runs as fast as the CPU allows and is
//! deterministic for a given scenario and seed.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use serde::Serialize;
use uvbot_core::mission::{execute_disinfection, MissionConfig};
use uvbot_core::robot::Battery;
use uvbot_core::sim::{AbortReason, GoalStatus, SimError, SimEvent, TickReport};
use uvbot_core::{CellIndex, Command, Simulator};

use crate::export::{coverage_json, dose_heatmap, CoverageJson, PlanStop, Trace};
use crate::scenario::{Action, Resolved, Scenario, ScenarioError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_COLLISION: u8 = 3;
pub const EXIT_PLANNER: u8 = 4;
/// `plan` only: a plan exists but some targets are visible from nowhere.
pub const EXIT_UNCOVERABLE: u8 = 5;

pub const DOSE_PGM: &str = "dose.pgm";
pub const COVERAGE_JSON: &str = "coverage.json";
pub const TRACE_CSV: &str = "trace.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot start the simulation: {0}")]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Scenario(_) | RunError::Sim(_) => EXIT_CONFIG,
            RunError::Io { .. } => EXIT_IO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Collision,
    PlannerFailure,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Completed => EXIT_OK,
            Outcome::Collision => EXIT_COLLISION,
            Outcome::PlannerFailure => EXIT_PLANNER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageSummary {
    pub required_dose: f64,
    pub covered_fraction: f64,
    pub coverable_fraction: f64,
    pub min_dose: f64,
    pub mean_dose: f64,
    pub uncoverable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub outcome: Outcome,
    pub exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub seed: u64,
    pub ticks: u64,
    pub time: f64,
    pub final_pose: FinalPose,
    pub battery_wh: f64,
    pub lamp_on: bool,
    pub goal_status: String,
    pub rejected_commands: usize,
    pub max_dose: f64,
    pub coverage: Option<CoverageSummary>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum CoverageFile {
    Targets(CoverageJson),
    NoTargets { targets: Option<()>, max_dose: f64 },
}

/// A finished run held in memory.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: Summary,
    pub trace: Trace,
    pub coverage: CoverageFile,
    pub heatmap: Vec<u8>,
    pub sim: Simulator,
}

struct Runner {
    sim: Simulator,
    trace: Trace,
    operator: bool,
    abort: Option<(Outcome, String)>,
    rejected: usize,
    plan: Vec<PlanStop>,
    uncoverable: Vec<CellIndex>,
}

/// Looks at one tick's events; returns the abort they imply, if any.
fn judge(report: &TickReport, rejected: &mut usize) -> Option<(Outcome, String)> {
    let mut abort = None;
    for e in &report.events {
        match e {
            SimEvent::Collision => {
                abort = Some((Outcome::Collision, format!("collision at t = {:.2} s", report.time)));
            }
            SimEvent::GoalStatus(GoalStatus::Rejected(err)) if abort.is_none() => {
                abort = Some((Outcome::PlannerFailure, format!("goal rejected: {err}")));
            }
            SimEvent::CommandRejected(r) => {
                *rejected += 1;
                warn!("t = {:.2} s: command rejected: {r:?}", report.time);
            }
            _ => {}
        }
    }
    abort
}

impl Runner {
    fn tick(&mut self) {
        if self.operator {
            self.sim.submit(Command::Heartbeat);
        }
        let r = self.sim.step();
        self.trace.record(&self.sim, &r);
        if let Some(a) = judge(&r, &mut self.rejected) {
            self.abort.get_or_insert(a);
        }
    }

    fn apply(&mut self, action: &Action, resolved: &Resolved) {
        debug!("t = {:.2} s: {action:?}", self.sim.time());
        match *action {
            Action::Lamp(on) => self.sim.submit(Command::Lamp(on)),
            Action::Velocity(t) => self.sim.submit(Command::Velocity(t)),
            Action::ManualTarget(p) => self.sim.submit(Command::ManualTarget(p)),
            Action::Goal { target, heading } => self.sim.submit(Command::Goal { target, heading }),
            Action::Autonomy(level) => self.sim.submit(Command::SetAutonomy(level)),
            Action::Stop => self.sim.submit(Command::Stop),
            Action::Disconnect => {
                self.operator = false;
                self.sim.submit(Command::SetConnected(false));
            }
            Action::Reconnect => {
                self.operator = true;
                self.sim.submit(Command::SetConnected(true));
            }
            Action::WaitGoal { timeout } => self.wait_goal(timeout),
            Action::Disinfect { spacing, max_rounds } => self.disinfect(spacing, max_rounds, resolved),
        }
    }

    fn wait_goal(&mut self, timeout: f64) {
        // Let a goal queued at this instant take effect first.
        self.tick();
        let deadline = self.sim.time() + timeout;
        while self.abort.is_none() && self.sim.goal_status() == GoalStatus::Active && self.sim.time() < deadline {
            self.tick();
        }
        if self.abort.is_some() {
            return;
        }
        match self.sim.goal_status() {
            GoalStatus::Active => {
                self.abort = Some((Outcome::PlannerFailure, format!("goal not reached within {timeout} s")));
            }
            GoalStatus::Aborted(AbortReason::Blocked) => {
                self.abort = Some((Outcome::PlannerFailure, "goal aborted: path blocked".into()));
            }
            GoalStatus::Aborted(AbortReason::Collision) => {
                self.abort = Some((Outcome::Collision, "goal aborted by a collision".into()));
            }
            s => info!("goal finished: {}", s.as_str()),
        }
    }

    fn disinfect(&mut self, spacing: f64, max_rounds: usize, resolved: &Resolved) {
        let target = resolved.target.as_ref().expect("checked when the scenario was resolved");
        let config = MissionConfig { candidate_spacing: spacing, max_rounds, ..MissionConfig::default() };
        let (trace, rejected, abort) = (&mut self.trace, &mut self.rejected, &mut self.abort);
        let result = execute_disinfection(&mut self.sim, target, &config, |sim, r| {
            trace.record(sim, r);
            if let Some(a) = judge(r, rejected) {
                abort.get_or_insert(a);
            }
        });
        self.operator = true;
        match result {
            Ok(report) => {
                info!(
                    "disinfection: {} rounds, {} stops, covered {:.3}",
                    report.rounds,
                    report.stops.len(),
                    report.coverage.covered_fraction
                );
                self.plan.extend(report.stops.iter().map(|s| PlanStop::new(&s.reached, s.dwell)));
                self.uncoverable = report.uncoverable.clone();
                if report.collided {
                    self.abort.get_or_insert((Outcome::Collision, "collision during disinfection".into()));
                } else if !report.failed_stops.is_empty() {
                    self.abort.get_or_insert((
                        Outcome::PlannerFailure,
                        format!("{} disinfection stops could not be reached", report.failed_stops.len()),
                    ));
                }
            }
            Err(e) => {
                self.abort.get_or_insert((Outcome::PlannerFailure, format!("disinfection planning failed: {e}")));
            }
        }
    }
}

/// Runs a scenario entirely in memory.
pub fn simulate(scenario: &Scenario) -> Result<RunResult, RunError> {
    let resolved = scenario.resolve()?;
    let mut sim = Simulator::new(resolved.grid.clone(), resolved.start, resolved.config.clone(), scenario.seed)?;
    if let Some(wh) = scenario.battery_wh {
        sim.set_battery(Battery { capacity_wh: resolved.config.battery_capacity_wh, charge_wh: wh });
    }
    if scenario.autonomy != sim.state().autonomy {
        sim.submit(Command::SetAutonomy(scenario.autonomy));
    }
    let mut runner = Runner {
        sim,
        trace: Trace::default(),
        operator: true,
        abort: None,
        rejected: 0,
        plan: Vec::new(),
        uncoverable: Vec::new(),
    };
    runner.trace.record_initial(&runner.sim);

    let steps = &scenario.script.0;
    let end = scenario.end_time();
    let mut next = 0;
    while runner.abort.is_none() {
        while next < steps.len() && steps[next].at <= runner.sim.time() + 1e-9 && runner.abort.is_none() {
            runner.apply(&steps[next].action, &resolved);
            next += 1;
        }
        if runner.abort.is_some() || (next >= steps.len() && runner.sim.time() >= end - 1e-9) {
            break;
        }
        runner.tick();
    }

    let sim = runner.sim;
    let max_dose = sim.dose().values().iter().copied().fold(0.0, f64::max);
    let (coverage, coverage_summary, scale) = match &resolved.target {
        Some(t) => {
            let c = coverage_json(&sim, t, &runner.uncoverable, runner.plan, resolved.d90);
            let s = CoverageSummary {
                required_dose: c.required_dose,
                covered_fraction: c.covered_fraction,
                coverable_fraction: c.coverable_fraction,
                min_dose: c.min_dose,
                mean_dose: c.mean_dose,
                uncoverable: c.uncoverable.len(),
            };
            (CoverageFile::Targets(c), Some(s), t.required_dose)
        }
        None => (CoverageFile::NoTargets { targets: None, max_dose }, None, max_dose),
    };
    let (outcome, reason) = match runner.abort {
        Some((o, r)) => (o, Some(r)),
        None => (Outcome::Completed, None),
    };
    let st = sim.state();
    let summary = Summary {
        outcome,
        exit_code: outcome.exit_code(),
        reason,
        seed: scenario.seed,
        ticks: sim.tick_count(),
        time: sim.time(),
        final_pose: FinalPose { x: st.pose.x, y: st.pose.y, theta: st.pose.theta() },
        battery_wh: st.battery.charge_wh,
        lamp_on: st.lamp_on,
        goal_status: sim.goal_status().as_str().to_string(),
        rejected_commands: runner.rejected,
        max_dose,
        coverage: coverage_summary,
        artifacts: [DOSE_PGM, COVERAGE_JSON, TRACE_CSV, SUMMARY_JSON].map(String::from).to_vec(),
    };
    Ok(RunResult { summary, trace: runner.trace, coverage, heatmap: dose_heatmap(sim.dose(), scale), sim })
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), RunError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| RunError::Io { path, source })
}

/// Runs a scenario and writes every artifact into `out_dir`. Collisions and
/// planner failures still write artifacts; the summary's exit code tells.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<Summary, RunError> {
    let result = simulate(scenario)?;
    fs::create_dir_all(out_dir).map_err(|source| RunError::Io { path: out_dir.to_path_buf(), source })?;
    write(out_dir, DOSE_PGM, &result.heatmap)?;
    write(out_dir, COVERAGE_JSON, pretty(&result.coverage).as_bytes())?;
    write(out_dir, TRACE_CSV, result.trace.as_str().as_bytes())?;
    write(out_dir, SUMMARY_JSON, pretty(&result.summary).as_bytes())?;
    info!("{} ticks, outcome {:?}, artifacts in {}", result.summary.ticks, result.summary.outcome, out_dir.display());
    Ok(result.summary)
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports always serialize");
    s.push('\n');
    s
}
