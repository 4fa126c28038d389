//! Fixed-step simulator: the single writer of robot, dose and autonomy state.
//!
//! Commands are queued with [`Simulator::submit`] and applied in order at
//! the start of the next tick, so a mode switch or lamp toggle never lands
//! mid-tick. One tick:
//!
//! 1. apply queued commands (mode changes are acknowledged here);
//! 2. evaluate the link watchdog and the lamp interlock;
//! 3. compute the twist from the active mode (operator intent through the
//!    assist filter, or the path follower);
//! 4. integrate kinematics, rejecting any step whose footprint collides;
//! 5. accumulate dose and drain the battery;
//! 6. advance the clock and refresh the LIDAR on its period.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::disinfection::{DoseGrid, IrradianceField, LampArray, LampInterlock, DEFAULT_CUTOFF};
use crate::geom::{normalize_angle, Point2, Pose2D};
use crate::navigation::{
    apply_assist, drive_to_point, follow_path, min_range_in_cone, nearest_free_cell, plan_on_inflated, shortcut_path,
    AssistParams, AutonomyLevel, FollowerParams, NavError, Path, PlanError,
};
use crate::robot::{
    check_collision, simulate_lidar, step_kinematics, Battery, Footprint, LaserScan, LidarConfig, PowerModel,
    RobotError, Twist, VelocityLimits,
};
use crate::world::OccupancyGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Tick length, seconds.
    pub dt: f64,
    pub lidar: LidarConfig,
    /// A new scan is taken every this many ticks.
    pub lidar_period_ticks: u64,
    pub footprint: Footprint,
    pub limits: VelocityLimits,
    pub power: PowerModel,
    pub battery_capacity_wh: f64,
    pub lamps: LampArray,
    pub assist: AssistParams,
    pub follower: FollowerParams,
    /// Clearance used for planning; at least the circumscribed radius so the
    /// robot may turn in place anywhere along a route.
    pub inflation_radius: f64,
    pub dose_cutoff: f64,
    pub heartbeat_timeout: f64,
    /// Heading error accepted when aligning to a goal heading, radians.
    pub heading_tolerance: f64,
    /// Relative sigma of multiplicative wheel slip; zero disables it.
    pub odometry_slip_sigma: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let footprint = Footprint::default();
        let lamps = LampArray::default();
        let power = PowerModel { lamp_load_w: lamps.electrical_load(), ..PowerModel::default() };
        Self {
            dt: 0.05,
            lidar: LidarConfig::default(),
            lidar_period_ticks: 2,
            footprint,
            limits: VelocityLimits::default(),
            power,
            battery_capacity_wh: 120.0,
            lamps,
            assist: AssistParams::default(),
            follower: FollowerParams { limits: VelocityLimits { v_max: 0.5, w_max: 1.5 }, ..FollowerParams::default() },
            inflation_radius: footprint.circumscribed_radius() + 0.1,
            dose_cutoff: DEFAULT_CUTOFF,
            heartbeat_timeout: 3.0,
            heading_tolerance: 0.02,
            odometry_slip_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("tick length must be positive")]
    BadTick,
    #[error("start pose collides with the map or leaves it")]
    StartInCollision,
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Robot(#[from] RobotError),
}

/// Operator and session inputs, applied at the next tick boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Velocity(Twist),
    /// Click-to-drive target in the robot frame at the time of the click.
    ManualTarget(Point2),
    /// Autonomous navigation goal in the map frame, optionally with a final heading.
    Goal {
        target: Point2,
        heading: Option<f64>,
    },
    SetAutonomy(AutonomyLevel),
    Lamp(bool),
    Heartbeat,
    SetConnected(bool),
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    Cancelled,
    Blocked,
    Collision,
    LinkLost,
    BatteryEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GoalStatus {
    #[default]
    Idle,
    Active,
    Reached,
    Rejected(PlanError),
    Aborted(AbortReason),
}

impl GoalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            GoalStatus::Idle => "idle",
            GoalStatus::Active => "active",
            GoalStatus::Reached => "reached",
            GoalStatus::Rejected(PlanError::StartOutOfBounds | PlanError::StartOccupied) => "rejected_start_occupied",
            GoalStatus::Rejected(PlanError::GoalOutOfBounds) => "rejected_goal_out_of_bounds",
            GoalStatus::Rejected(PlanError::GoalOccupied) => "rejected_goal_occupied",
            GoalStatus::Rejected(PlanError::GoalUnreachable) => "rejected_goal_unreachable",
            GoalStatus::Aborted(AbortReason::Cancelled) => "cancelled",
            GoalStatus::Aborted(AbortReason::Blocked) => "aborted_blocked",
            GoalStatus::Aborted(AbortReason::Collision) => "aborted_collision",
            GoalStatus::Aborted(AbortReason::LinkLost) => "aborted_link_lost",
            GoalStatus::Aborted(AbortReason::BatteryEmpty) => "aborted_battery_empty",
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, GoalStatus::Idle | GoalStatus::Active)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    /// Goals are only accepted in Autonomous mode.
    GoalRequiresAutonomous,
    /// Operator drive commands are ignored while Autonomous.
    OperatorInAutonomous,
    ManualRange(NavError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    /// Echo of every applied autonomy command, including no-op ones.
    ModeAck(AutonomyLevel),
    GoalStatus(GoalStatus),
    LampChanged {
        on: bool,
        forced_off: bool,
    },
    CommandRejected(Rejection),
    /// A commanded step would have overlapped an obstacle and was refused.
    Collision,
    BatteryDepleted,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickReport {
    pub tick: u64,
    /// Simulation time at the end of the tick.
    pub time: f64,
    pub events: Vec<SimEvent>,
    pub scanned: bool,
}

impl TickReport {
    pub fn collided(&self) -> bool {
        self.events.contains(&SimEvent::Collision)
    }
}

/// Snapshot handed to telemetry publishers.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub pose: Pose2D,
    pub twist: Twist,
    pub lamp_on: bool,
    pub lamp_forced_off: bool,
    pub autonomy: AutonomyLevel,
    pub battery: Battery,
    pub footprint: Footprint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Intent {
    Idle,
    Velocity(Twist),
    Target(Point2),
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveGoal {
    path: Path,
    heading: Option<f64>,
    aligning: bool,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    grid: OccupancyGrid,
    inflated: OccupancyGrid,
    config: SimConfig,
    tick: u64,
    state: RobotState,
    dose: DoseGrid,
    interlock: LampInterlock,
    rng: ChaCha8Rng,
    scan: LaserScan,
    queue: VecDeque<Command>,
    intent: Intent,
    goal: Option<ActiveGoal>,
    goal_status: GoalStatus,
    connected: bool,
    last_heartbeat: f64,
    /// Keyed by lamp positions, so turning in place under a centered lamp hits.
    field_cache: Option<(Vec<Point2>, IrradianceField)>,
}

impl Simulator {
    pub fn new(grid: OccupancyGrid, start: Pose2D, config: SimConfig, seed: u64) -> Result<Self, SimError> {
        if !(config.dt > 0.0) {
            return Err(SimError::BadTick);
        }
        config.assist.validate()?;
        if check_collision(&grid, &start, &config.footprint) {
            return Err(SimError::StartInCollision);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scan = simulate_lidar(&grid, &start, &config.lidar, &mut rng, 0.0)?;
        let inflated = grid.inflate(config.inflation_radius);
        Ok(Self {
            dose: DoseGrid::new(&grid),
            interlock: LampInterlock::new(config.heartbeat_timeout),
            state: RobotState {
                pose: start,
                twist: Twist::ZERO,
                lamp_on: false,
                lamp_forced_off: false,
                autonomy: AutonomyLevel::Manual,
                battery: Battery::full(config.battery_capacity_wh),
                footprint: config.footprint,
            },
            grid,
            inflated,
            config,
            tick: 0,
            rng,
            scan,
            queue: VecDeque::new(),
            intent: Intent::Idle,
            goal: None,
            goal_status: GoalStatus::Idle,
            connected: true,
            last_heartbeat: 0.0,
            field_cache: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn inflated(&self) -> &OccupancyGrid {
        &self.inflated
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    /// Current simulation time, seconds.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn scan(&self) -> &LaserScan {
        &self.scan
    }

    pub fn dose(&self) -> &DoseGrid {
        &self.dose
    }

    pub fn goal_status(&self) -> GoalStatus {
        self.goal_status
    }

    pub fn active_path(&self) -> Option<&Path> {
        self.goal.as_ref().map(|g| &g.path)
    }

    pub fn heartbeat_age(&self) -> f64 {
        self.time() - self.last_heartbeat
    }

    pub fn link_ok(&self) -> bool {
        self.connected && self.heartbeat_age() < self.config.heartbeat_timeout
    }

    pub fn submit(&mut self, cmd: Command) {
        self.queue.push_back(cmd);
    }

    /// Lets the battery be preset, e.g. to start a run partially discharged.
    pub fn set_battery(&mut self, battery: Battery) {
        self.state.battery = battery;
    }

    pub fn run_for(&mut self, seconds: f64) -> Vec<TickReport> {
        let ticks = libm::round(seconds / self.config.dt) as u64;
        (0..ticks).map(|_| self.step()).collect()
    }

    fn set_goal_status(&mut self, status: GoalStatus, events: &mut Vec<SimEvent>) {
        self.goal_status = status;
        events.push(SimEvent::GoalStatus(status));
    }

    fn abort_goal(&mut self, reason: AbortReason, events: &mut Vec<SimEvent>) {
        if self.goal.take().is_some() {
            self.set_goal_status(GoalStatus::Aborted(reason), events);
        }
    }

    fn apply(&mut self, cmd: Command, now: f64, events: &mut Vec<SimEvent>) {
        let autonomous = self.state.autonomy == AutonomyLevel::Autonomous;
        match cmd {
            Command::SetAutonomy(level) => {
                if level != self.state.autonomy {
                    if autonomous {
                        self.abort_goal(AbortReason::Cancelled, events);
                    }
                    self.intent = Intent::Idle;
                    self.state.autonomy = level;
                }
                events.push(SimEvent::ModeAck(level));
            }
            Command::Velocity(t) if !autonomous => self.intent = Intent::Velocity(t.clamped(&self.config.limits)),
            Command::ManualTarget(p) if !autonomous => match drive_to_point(p, &self.config.follower) {
                Ok(_) => self.intent = Intent::Target(self.state.pose.transform_point(p)),
                Err(e) => events.push(SimEvent::CommandRejected(Rejection::ManualRange(e))),
            },
            Command::Velocity(_) | Command::ManualTarget(_) => {
                events.push(SimEvent::CommandRejected(Rejection::OperatorInAutonomous));
            }
            Command::Stop => {
                self.intent = Intent::Idle;
                self.abort_goal(AbortReason::Cancelled, events);
            }
            Command::Goal { target, heading } => {
                if !autonomous {
                    events.push(SimEvent::CommandRejected(Rejection::GoalRequiresAutonomous));
                    return;
                }
                self.goal = None;
                match self.plan_route(target) {
                    Ok(path) => {
                        self.goal = Some(ActiveGoal { path, heading, aligning: false });
                        self.set_goal_status(GoalStatus::Active, events);
                    }
                    Err(e) => self.set_goal_status(GoalStatus::Rejected(e), events),
                }
            }
            Command::Lamp(on) => self.interlock.command(on),
            Command::Heartbeat => self.last_heartbeat = now,
            Command::SetConnected(c) => self.connected = c,
        }
    }

    /// Plans on the inflated map and straightens the result. A robot that
    /// ended up inside the clearance zone first backs out to the nearest
    /// free cell.
    fn plan_route(&self, target: Point2) -> Result<Path, PlanError> {
        let here = self.state.pose.position();
        match plan_on_inflated(&self.inflated, here, target) {
            Err(PlanError::StartOccupied) => {
                let exit = nearest_free_cell(&self.inflated, here, self.config.inflation_radius + 0.5)
                    .ok_or(PlanError::StartOccupied)?;
                let path = plan_on_inflated(&self.inflated, exit, target)?;
                let mut waypoints = alloc::vec![here];
                waypoints.extend(shortcut_path(&path, &self.inflated).waypoints);
                Ok(Path::from_waypoints(waypoints, path.cost))
            }
            other => other.map(|p| shortcut_path(&p, &self.inflated)),
        }
    }

    /// Twist requested by the active mode before collision checking.
    fn desired_twist(&mut self, events: &mut Vec<SimEvent>) -> Twist {
        let pose = self.state.pose;
        if self.state.autonomy == AutonomyLevel::Autonomous {
            let Some(goal) = self.goal.as_mut() else {
                return Twist::ZERO;
            };
            if !goal.aligning {
                let cmd = follow_path(&pose, &goal.path, &self.config.follower);
                if !cmd.reached {
                    let ahead = min_range_in_cone(&self.scan, 0.0, self.config.assist.cone_half_angle);
                    if cmd.twist.v > 0.0 && ahead < self.config.assist.d_stop {
                        self.abort_goal(AbortReason::Blocked, events);
                        return Twist::ZERO;
                    }
                    return cmd.twist;
                }
                goal.aligning = true;
            }
            if let Some(h) = goal.heading {
                let err = normalize_angle(h - pose.theta());
                if err.abs() > self.config.heading_tolerance {
                    let f = &self.config.follower;
                    let w = (f.k_omega * err).clamp(-f.limits.w_max, f.limits.w_max);
                    // Do not overshoot the target heading within one tick.
                    let w = w.clamp(-err.abs() / self.config.dt, err.abs() / self.config.dt);
                    return Twist::new(0.0, w);
                }
            }
            self.goal = None;
            self.set_goal_status(GoalStatus::Reached, events);
            return Twist::ZERO;
        }
        let raw = match self.intent {
            Intent::Idle => Twist::ZERO,
            Intent::Velocity(t) => t,
            Intent::Target(p) => {
                let local = pose.inverse_transform_point(p);
                let mut f = self.config.follower;
                f.manual_range = f64::INFINITY;
                match drive_to_point(local, &f) {
                    Ok(cmd) if cmd.reached => {
                        self.intent = Intent::Idle;
                        Twist::ZERO
                    }
                    Ok(cmd) => cmd.twist,
                    Err(_) => Twist::ZERO,
                }
            }
        };
        apply_assist(self.state.autonomy, raw, Some(&self.scan), &self.config.assist)
    }

    fn irradiance_field(&mut self) -> &IrradianceField {
        let pose = self.state.pose;
        let lamps = self.config.lamps.positions(&pose);
        let stale = self.field_cache.as_ref().is_none_or(|(k, _)| *k != lamps);
        if stale {
            let field = IrradianceField::compute(&self.grid, &pose, &self.config.lamps, self.config.dose_cutoff);
            self.field_cache = Some((lamps, field));
        }
        &self.field_cache.as_ref().expect("cache filled above").1
    }

    /// Advances the simulation by one tick.
    pub fn step(&mut self) -> TickReport {
        let now = self.time();
        let dt = self.config.dt;
        let mut events = Vec::new();

        while let Some(cmd) = self.queue.pop_front() {
            self.apply(cmd, now, &mut events);
        }

        let link_ok = self.link_ok();
        let was = (self.state.lamp_on, self.state.lamp_forced_off);
        if self.state.battery.is_empty() {
            self.interlock.force_off();
        }
        let lamp_on = self.interlock.tick(self.connected, now - self.last_heartbeat);
        self.state.lamp_on = lamp_on;
        self.state.lamp_forced_off = self.interlock.forced_off();
        if (lamp_on, self.state.lamp_forced_off) != was {
            events.push(SimEvent::LampChanged { on: lamp_on, forced_off: self.state.lamp_forced_off });
        }

        let twist = if !link_ok || self.state.battery.is_empty() {
            self.intent = Intent::Idle;
            let reason = if link_ok { AbortReason::BatteryEmpty } else { AbortReason::LinkLost };
            self.abort_goal(reason, &mut events);
            Twist::ZERO
        } else {
            self.desired_twist(&mut events).clamped(&self.config.limits)
        };

        let mut applied = Twist::ZERO;
        if !twist.is_zero() {
            let mut executed = twist;
            if self.config.odometry_slip_sigma > 0.0 {
                if let Ok(n) = Normal::new(1.0, self.config.odometry_slip_sigma) {
                    executed.v *= n.sample(&mut self.rng);
                    executed.w *= n.sample(&mut self.rng);
                }
            }
            match step_kinematics(self.state.pose, executed, dt) {
                Ok(next) if !check_collision(&self.grid, &next, &self.config.footprint) => {
                    self.state.pose = next;
                    applied = twist;
                }
                _ => {
                    events.push(SimEvent::Collision);
                    self.intent = Intent::Idle;
                    self.abort_goal(AbortReason::Collision, &mut events);
                }
            }
        }
        self.state.twist = applied;

        if lamp_on {
            let field = self.irradiance_field().clone();
            self.dose.expose(&field, dt);
        }

        let had_charge = !self.state.battery.is_empty();
        self.state.battery.step(dt, lamp_on, &self.config.power);
        if had_charge && self.state.battery.is_empty() {
            events.push(SimEvent::BatteryDepleted);
        }

        self.tick += 1;
        let time = self.time();
        let mut scanned = false;
        if self.config.lidar_period_ticks > 0 && self.tick % self.config.lidar_period_ticks == 0 {
            if let Ok(scan) = simulate_lidar(&self.grid, &self.state.pose, &self.config.lidar, &mut self.rng, time) {
                self.scan = scan;
                scanned = true;
            }
        }
        TickReport { tick: self.tick, time, events, scanned }
    }
}
