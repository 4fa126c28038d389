//! Robot side of a session: turns command envelopes into simulator
//! commands and simulator ticks into telemetry envelopes.

use uvbot_core::disinfection::{coverage_report, DisinfectionTarget};
use uvbot_core::session::SessionState;
use uvbot_core::sim::{SimEvent, TickReport};
use uvbot_core::{Command, LaserScan, Simulator};

use crate::protocol::{
    BatteryPayload, DosePayload, Envelope, GoalStatusPayload, LampPayload, LevelPayload, LinkPayload, OperatorCommand,
    PayloadError, PosePayload, ScanPayload, Topic,
};

/// Telemetry cadence, in simulator ticks at the default 50 ms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRates {
    pub pose_ticks: u64,
    pub scan_ticks: u64,
    pub scan_beams: usize,
    /// Mode, lamp, battery and dose are repeated at this period even
    /// without changes so a late joiner catches up.
    pub status_ticks: u64,
}

impl Default for TelemetryRates {
    fn default() -> Self {
        Self { pose_ticks: 2, scan_ticks: 4, scan_beams: 90, status_ticks: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EndpointError {
    #[error("no open session; command dropped")]
    SessionClosed,
    #[error("seq {got} does not follow {last}")]
    StaleSeq { last: u64, got: u64 },
    #[error(transparent)]
    Payload(#[from] PayloadError),
}

#[derive(Debug, Clone)]
pub struct RobotEndpoint {
    rates: TelemetryRates,
    target: Option<DisinfectionTarget>,
    open: bool,
    seq: u64,
    last_cmd_seq: Option<u64>,
    gaps: u64,
    pending_link: Option<LinkPayload>,
    full_scan: bool,
}

impl RobotEndpoint {
    pub fn new(rates: TelemetryRates, target: Option<DisinfectionTarget>) -> Self {
        Self { rates, target, open: false, seq: 0, last_cmd_seq: None, gaps: 0, pending_link: None, full_scan: false }
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn total_gaps(&self) -> u64 {
        self.gaps
    }

    /// Session changes as reported by the relay.
    pub fn on_session(&mut self, state: SessionState, sim: &mut Simulator) {
        match state {
            SessionState::Paired if !self.open => {
                self.open = true;
                self.last_cmd_seq = None;
                sim.submit(Command::SetConnected(true));
                sim.submit(Command::Heartbeat);
            }
            SessionState::Closed => {
                self.open = false;
                sim.submit(Command::SetConnected(false));
            }
            _ => {}
        }
    }

    /// Applies one inbound command envelope. Nothing is applied once the
    /// session closed.
    pub fn on_command(&mut self, env: &Envelope, sim: &mut Simulator) -> Result<OperatorCommand, EndpointError> {
        if !self.open {
            return Err(EndpointError::SessionClosed);
        }
        let cmd = OperatorCommand::parse(env)?;
        match self.last_cmd_seq {
            Some(last) if env.seq <= last => return Err(EndpointError::StaleSeq { last, got: env.seq }),
            Some(last) if env.seq > last + 1 => {
                self.gaps += env.seq - last - 1;
                self.pending_link =
                    Some(LinkPayload { expected_seq: last + 1, received_seq: env.seq, total_gaps: self.gaps });
            }
            _ => {}
        }
        self.last_cmd_seq = Some(env.seq);
        sim.submit(match cmd {
            OperatorCommand::Vel(t) => Command::Velocity(t),
            OperatorCommand::ManualTarget(p) => Command::ManualTarget(p),
            OperatorCommand::Goal { target, heading } => Command::Goal { target, heading },
            OperatorCommand::Autonomy(level) => Command::SetAutonomy(level),
            OperatorCommand::Lamp(on) => Command::Lamp(on),
            OperatorCommand::Heartbeat => Command::Heartbeat,
            OperatorCommand::FullScan => {
                self.full_scan = true;
                return Ok(cmd);
            }
        });
        Ok(cmd)
    }

    fn push<P: serde::Serialize>(&mut self, out: &mut Vec<Envelope>, topic: Topic, stamp: f64, payload: &P) {
        self.seq += 1;
        out.push(Envelope::new(topic, self.seq, stamp, payload));
    }

    fn scan_payload(scan: &LaserScan) -> ScanPayload {
        ScanPayload { angle_min: scan.angle_min, increment: scan.angle_increment, ranges: scan.ranges.clone() }
    }

    /// Telemetry due after `report`. Emits nothing while no session is open.
    pub fn telemetry(&mut self, sim: &Simulator, report: &TickReport) -> Vec<Envelope> {
        let mut out = Vec::new();
        if !self.open {
            return out;
        }
        let t = report.time;
        let tick = report.tick;
        let st = sim.state();
        let every = |n: u64| n > 0 && tick % n == 0;
        let status = every(self.rates.status_ticks);

        if let Some(link) = self.pending_link.take() {
            self.push(&mut out, Topic::Link, t, &link);
        }
        for e in &report.events {
            match e {
                SimEvent::ModeAck(level) => {
                    self.push(&mut out, Topic::Mode, t, &LevelPayload { level: level.as_str().into() })
                }
                SimEvent::LampChanged { on, forced_off } => {
                    self.push(&mut out, Topic::Lamp, t, &LampPayload { on: *on, forced_off: *forced_off })
                }
                SimEvent::GoalStatus(s) => {
                    self.push(&mut out, Topic::GoalStatus, t, &GoalStatusPayload { state: s.as_str().into() })
                }
                _ => {}
            }
        }
        if every(self.rates.pose_ticks) {
            let p = PosePayload { x: st.pose.x, y: st.pose.y, theta: st.pose.theta() };
            self.push(&mut out, Topic::Pose, t, &p);
        }
        if std::mem::take(&mut self.full_scan) {
            let p = Self::scan_payload(sim.scan());
            self.push(&mut out, Topic::Scan, t, &p);
        } else if every(self.rates.scan_ticks) {
            let p = Self::scan_payload(&sim.scan().decimate(self.rates.scan_beams));
            self.push(&mut out, Topic::Scan, t, &p);
        }
        if status {
            let mode = LevelPayload { level: st.autonomy.as_str().into() };
            self.push(&mut out, Topic::Mode, t, &mode);
            let lamp = LampPayload { on: st.lamp_on, forced_off: st.lamp_forced_off };
            self.push(&mut out, Topic::Lamp, t, &lamp);
            let battery = BatteryPayload { wh: st.battery.charge_wh, fraction: st.battery.fraction() };
            self.push(&mut out, Topic::Battery, t, &battery);
            if let Some(target) = &self.target {
                let r = coverage_report(sim.dose(), target, &[]);
                let dose = DosePayload { covered_fraction: r.covered_fraction, min: r.min_dose, mean: r.mean_dose };
                self.push(&mut out, Topic::Dose, t, &dose);
            }
        }
        out
    }
}
