//! Command-line front end: `run`, `serve` and `plan`.

use std::fs;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use uvbot_core::disinfection::{plan_disinfection_poses, DisinfectionPlan, DoseError, PlannerOptions};
use uvbot_core::fixtures;
use uvbot_core::{OccupancyGrid, Pose2D, SimConfig, Simulator};

use crate::endpoint::{RobotEndpoint, TelemetryRates};
use crate::mapio;
use crate::protocol::PeerId;
use crate::robot_client::run_sim_robot;
use crate::run::{run_scenario, Summary, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_PLANNER, EXIT_UNCOVERABLE};
use crate::scenario::{Action, MapSource, Scenario, ScenarioError, Script, Step, TargetSpec};
use crate::server::{Relay, RelayConfig};

/// Environment variable holding the log filter, e.g. `debug` or `uvbot=trace`.
pub const LOG_ENV: &str = "UVBOT_LOG";

#[derive(Debug, Parser)]
#[command(name = "uvbot", version, about = "Simulated teleoperated UVC disinfection robot")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a scenario headless and write its artifacts.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Start the relay with one simulated robot registered on it.
    Serve(ServeArgs),
    /// Plan disinfection poses for a target set, optionally executing them.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Map metadata file; the built-in two-room ward when omitted.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, default_value = "uvbot-1")]
    pub id: PeerId,
    /// Start pose `x,y,theta`; required with --map.
    #[arg(long, value_parser = parse_pose)]
    pub start: Option<Pose2D>,
    /// Targets file whose coverage is published as /telemetry/dose.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Map metadata file.
    #[arg(long)]
    pub map: PathBuf,
    /// Targets file (required_dose or log_reduction + d90, and cells, points or rects).
    #[arg(long)]
    pub targets: PathBuf,
    /// Robot position to plan reachability from, `x,y,theta`; required by --execute.
    #[arg(long, value_parser = parse_pose)]
    pub start: Option<Pose2D>,
    #[arg(long, default_value_t = 0.5)]
    pub spacing: f64,
    /// Drive the plan in the simulator and write run artifacts.
    #[arg(long)]
    pub execute: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_pose(s: &str) -> Result<Pose2D, String> {
    let v: Vec<f64> =
        s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    match v[..] {
        [x, y] => Ok(Pose2D::new(x, y, 0.0)),
        [x, y, th] => Ok(Pose2D::new(x, y, th)),
        _ => Err("expected x,y or x,y,theta".into()),
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> u8 {
    match cli.command {
        Cmd::Run { scenario, out } => run_cmd(&scenario, &out),
        Cmd::Serve(args) => serve_cmd(args),
        Cmd::Plan(args) => plan_cmd(&args),
    }
}

fn report(summary: &Summary) -> u8 {
    match &summary.reason {
        Some(r) => error!("{r}"),
        None => info!("completed after {:.2} s simulated", summary.time),
    }
    if let Some(c) = &summary.coverage {
        println!(
            "covered {:.4} of targets ({:.4} of coverable), min dose {:.3} J/m2",
            c.covered_fraction, c.coverable_fraction, c.min_dose
        );
    }
    summary.exit_code
}

fn run_cmd(path: &Path, out: &Path) -> u8 {
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => {
            error!("{e}");
            return EXIT_CONFIG;
        }
    };
    match run_scenario(&scenario, out) {
        Ok(summary) => report(&summary),
        Err(e) => {
            error!("{e}");
            e.exit_code()
        }
    }
}

fn load_targets(path: &Path) -> Result<TargetSpec, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let spec: TargetSpec = serde_yaml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if spec.is_empty() {
        return Err(format!("{}: the target set is empty", path.display()));
    }
    Ok(spec)
}

#[derive(Debug, thiserror::Error)]
pub enum PlanCmdError {
    #[error(transparent)]
    Targets(#[from] ScenarioError),
    #[error("planner: {0}")]
    Planner(#[from] DoseError),
}

impl PlanCmdError {
    pub fn exit_code(&self) -> u8 {
        match self {
            PlanCmdError::Planner(DoseError::NoReachablePose) => EXIT_PLANNER,
            _ => EXIT_CONFIG,
        }
    }
}

/// Plans on `grid` with the simulator's clearance and lamp defaults.
pub fn plan_targets(
    grid: &OccupancyGrid,
    spec: &TargetSpec,
    start: Option<Pose2D>,
    spacing: f64,
) -> Result<DisinfectionPlan, PlanCmdError> {
    let target = spec.resolve(grid, &[])?;
    let config = SimConfig::default();
    let options = PlannerOptions {
        robot_radius: config.inflation_radius,
        start: start.map(|p| p.position()),
        ..PlannerOptions::default()
    };
    Ok(plan_disinfection_poses(grid, &target, &config.lamps, spacing, &options, None)?)
}

fn plan_cmd(args: &PlanArgs) -> u8 {
    let spec = match load_targets(&args.targets) {
        Ok(s) => s,
        Err(e) => {
            error!("{e}");
            return EXIT_CONFIG;
        }
    };
    let grid = match mapio::load_map_meta(&args.map) {
        Ok(g) => g,
        Err(e) => {
            error!("{}: {e}", args.map.display());
            return EXIT_CONFIG;
        }
    };
    if !(args.spacing > 0.0) {
        error!("--spacing must be positive");
        return EXIT_CONFIG;
    }
    let plan = match plan_targets(&grid, &spec, args.start, args.spacing) {
        Ok(p) => p,
        Err(e) => {
            error!("{e}");
            return e.exit_code();
        }
    };
    println!("{:>3}  {:>8}  {:>8}  {:>7}  {:>9}  {:>5}", "#", "x", "y", "theta", "dwell_s", "cells");
    for (i, p) in plan.poses.iter().enumerate() {
        println!(
            "{:>3}  {:>8.3}  {:>8.3}  {:>7.3}  {:>9.2}  {:>5}",
            i + 1,
            p.pose.x,
            p.pose.y,
            p.pose.theta(),
            p.dwell,
            p.completes.len()
        );
    }
    println!("total dwell {:.2} s over {} poses", plan.total_dwell(), plan.poses.len());
    if !plan.uncoverable.is_empty() {
        println!("uncoverable ({}):", plan.uncoverable.len());
        for c in &plan.uncoverable {
            let p = grid.cell_center(*c);
            println!("  cell ({}, {}) at ({:.3}, {:.3})", c.col, c.row, p.x, p.y);
        }
    }
    let partial = if plan.uncoverable.is_empty() { EXIT_OK } else { EXIT_UNCOVERABLE };
    if !args.execute {
        return partial;
    }

    let Some(start) = args.start else {
        error!("--execute needs --start");
        return EXIT_CONFIG;
    };
    let map = match std::path::absolute(&args.map) {
        Ok(p) => p,
        Err(e) => {
            error!("{}: {e}", args.map.display());
            return EXIT_IO;
        }
    };
    let scenario = Scenario {
        seed: args.seed,
        map: MapSource::File(map),
        start: Some([start.x, start.y, start.theta()]),
        autonomy: Default::default(),
        lamps: Default::default(),
        assist: Default::default(),
        lidar: Default::default(),
        battery_wh: None,
        targets: Some(spec),
        script: Script(vec![Step { at: 0.0, action: Action::Disinfect { spacing: args.spacing, max_rounds: 3 } }]),
        duration: None,
        base_dir: PathBuf::new(),
    };
    match run_scenario(&scenario, &args.out) {
        Ok(summary) => match report(&summary) {
            EXIT_OK => partial,
            code => code,
        },
        Err(e) => {
            error!("{e}");
            e.exit_code()
        }
    }
}

fn serve_cmd(args: ServeArgs) -> u8 {
    let (grid, start) = match &args.map {
        None => {
            let f = fixtures::two_rooms();
            (f.grid, args.start.unwrap_or(f.start))
        }
        Some(m) => match (mapio::load_map_meta(m), args.start) {
            (Ok(g), Some(s)) => (g, s),
            (Ok(_), None) => {
                error!("--start is required with --map");
                return EXIT_CONFIG;
            }
            (Err(e), _) => {
                error!("{}: {e}", m.display());
                return EXIT_CONFIG;
            }
        },
    };
    let target = match &args.targets {
        None => None,
        Some(path) => match load_targets(path).and_then(|s| s.resolve(&grid, &[]).map_err(|e| e.to_string())) {
            Ok(t) => Some(t),
            Err(e) => {
                error!("{e}");
                return EXIT_CONFIG;
            }
        },
    };
    let sim = match Simulator::new(grid, start, SimConfig::default(), args.seed) {
        Ok(s) => s,
        Err(e) => {
            error!("cannot start the simulation: {e}");
            return EXIT_CONFIG;
        }
    };
    let endpoint = RobotEndpoint::new(TelemetryRates::default(), target);

    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            error!("{e}");
            return EXIT_IO;
        }
    };
    rt.block_on(async move {
        let relay = Relay::new(RelayConfig::default());
        let addr = match relay.spawn(SocketAddr::from((Ipv4Addr::UNSPECIFIED, args.port))).await {
            Ok(a) => a,
            Err(e) => {
                error!("cannot listen on port {}: {e}", args.port);
                return EXIT_IO;
            }
        };
        let url = format!("ws://127.0.0.1:{}/ws/robot", addr.port());
        let robot = run_sim_robot(&url, args.id, sim, endpoint, Duration::from_secs(1));
        tokio::select! {
            r = robot => {
                match r {
                    Ok(()) => EXIT_OK,
                    Err(e) => {
                        error!("robot stopped: {e}");
                        EXIT_IO
                    }
                }
            }
            _ = tokio::signal::ctrl_c() => {
                info!("shutting down");
                EXIT_OK
            }
        }
    })
}
