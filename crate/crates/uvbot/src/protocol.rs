//! Wire format of the teleoperation channel.
//!
//! Every WebSocket text frame is one JSON object tagged by `type`. Signaling
//! uses `register`/`connect`/`paired`/`error`; everything after pairing
//! travels as `data` frames wrapping a topic-addressed [`Envelope`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use uvbot_core::{AutonomyLevel, Point2, Twist};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PeerIdError {
    #[error("peer id must be 1-64 characters, got {0}")]
    Length(usize),
    #[error("peer id may only use A-Z a-z 0-9 - _ . ~")]
    Alphabet,
}

/// Robot identifier a client logs on with.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PeerId(String);

impl PeerId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PeerId {
    type Error = PeerIdError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let n = s.chars().count();
        if !(1..=64).contains(&n) {
            return Err(PeerIdError::Length(n));
        }
        if !s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~')) {
            return Err(PeerIdError::Alphabet);
        }
        Ok(PeerId(s))
    }
}

impl FromStr for PeerId {
    type Err = PeerIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PeerId::try_from(s.to_string())
    }
}

impl From<PeerId> for String {
    fn from(id: PeerId) -> String {
        id.0
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub topic: String,
    /// Strictly increasing per sender within a session.
    pub seq: u64,
    /// Sender clock, seconds.
    pub stamp: f64,
    pub payload: Value,
}

impl Envelope {
    pub fn new<P: Serialize>(topic: Topic, seq: u64, stamp: f64, payload: &P) -> Self {
        Self {
            topic: topic.path().to_string(),
            seq,
            stamp,
            payload: serde_json::to_value(payload).expect("payload types always serialize"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Client to robot.
    Command,
    /// Robot to client.
    Telemetry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topic {
    CmdVel,
    CmdManualTarget,
    CmdGoal,
    CmdAutonomy,
    CmdLamp,
    CmdHeartbeat,
    CmdFullScan,
    Pose,
    Scan,
    Mode,
    Lamp,
    Battery,
    Dose,
    GoalStatus,
    Link,
}

impl Topic {
    pub const ALL: [Topic; 15] = [
        Topic::CmdVel,
        Topic::CmdManualTarget,
        Topic::CmdGoal,
        Topic::CmdAutonomy,
        Topic::CmdLamp,
        Topic::CmdHeartbeat,
        Topic::CmdFullScan,
        Topic::Pose,
        Topic::Scan,
        Topic::Mode,
        Topic::Lamp,
        Topic::Battery,
        Topic::Dose,
        Topic::GoalStatus,
        Topic::Link,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Topic::CmdVel => "/cmd/vel",
            Topic::CmdManualTarget => "/cmd/manual_target",
            Topic::CmdGoal => "/cmd/goal",
            Topic::CmdAutonomy => "/cmd/autonomy",
            Topic::CmdLamp => "/cmd/lamp",
            Topic::CmdHeartbeat => "/cmd/heartbeat",
            Topic::CmdFullScan => "/cmd/full_scan",
            Topic::Pose => "/telemetry/pose",
            Topic::Scan => "/telemetry/scan",
            Topic::Mode => "/telemetry/mode",
            Topic::Lamp => "/telemetry/lamp",
            Topic::Battery => "/telemetry/battery",
            Topic::Dose => "/telemetry/dose",
            Topic::GoalStatus => "/telemetry/goal_status",
            Topic::Link => "/telemetry/link",
        }
    }

    pub fn from_path(path: &str) -> Option<Topic> {
        Topic::ALL.into_iter().find(|t| t.path() == path)
    }

    pub fn direction(self) -> Direction {
        if self.path().starts_with("/cmd/") {
            Direction::Command
        } else {
            Direction::Telemetry
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    DuplicateId,
    UnknownRobot,
    RobotBusy,
    NotRegistered,
    UnknownTopic,
    WrongDirection,
    BadPayload,
    StaleSeq,
    SessionDegraded,
    SessionClosed,
    PeerLeft,
}

/// One WebSocket text frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Register {
        id: PeerId,
    },
    /// Acknowledges `register`.
    Registered {
        id: PeerId,
    },
    /// Robot liveness while no session carries heartbeats.
    Keepalive,
    Connect {
        robot_id: PeerId,
    },
    Paired {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        robot_id: Option<PeerId>,
    },
    Error {
        code: ErrorCode,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        message: String,
    },
    Data {
        envelope: Envelope,
    },
}

impl WireMessage {
    pub fn error(code: ErrorCode, message: impl fmt::Display) -> Self {
        WireMessage::Error { code, message: message.to_string() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

// Command payloads.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelPayload {
    pub v: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointPayload {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalPayload {
    pub x: f64,
    pub y: f64,
    /// Optional final heading, radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelPayload {
    pub level: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LampCmdPayload {
    pub on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

// Telemetry payloads.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosePayload {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPayload {
    pub angle_min: f64,
    pub increment: f64,
    pub ranges: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LampPayload {
    pub on: bool,
    pub forced_off: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryPayload {
    pub wh: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DosePayload {
    pub covered_fraction: f64,
    pub min: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalStatusPayload {
    pub state: String,
}

/// Reported when inbound command sequence numbers skip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPayload {
    pub expected_seq: u64,
    pub received_seq: u64,
    pub total_gaps: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PayloadError {
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("{0} is not a command topic")]
    NotACommand(&'static str),
    #[error("bad payload for {topic}: {reason}")]
    Schema { topic: &'static str, reason: String },
}

/// A schema-checked command envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorCommand {
    Vel(Twist),
    ManualTarget(Point2),
    Goal { target: Point2, heading: Option<f64> },
    Autonomy(AutonomyLevel),
    Lamp(bool),
    Heartbeat,
    FullScan,
}

fn payload<T: for<'de> Deserialize<'de>>(topic: Topic, v: &Value) -> Result<T, PayloadError> {
    serde_json::from_value(v.clone()).map_err(|e| PayloadError::Schema { topic: topic.path(), reason: e.to_string() })
}

fn finite(topic: Topic, values: &[f64]) -> Result<(), PayloadError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PayloadError::Schema { topic: topic.path(), reason: "numbers must be finite".into() })
    }
}

impl OperatorCommand {
    pub fn parse(env: &Envelope) -> Result<Self, PayloadError> {
        let topic = Topic::from_path(&env.topic).ok_or_else(|| PayloadError::UnknownTopic(env.topic.clone()))?;
        let p = &env.payload;
        Ok(match topic {
            Topic::CmdVel => {
                let v: VelPayload = payload(topic, p)?;
                finite(topic, &[v.v, v.w])?;
                OperatorCommand::Vel(Twist::new(v.v, v.w))
            }
            Topic::CmdManualTarget => {
                let v: PointPayload = payload(topic, p)?;
                finite(topic, &[v.x, v.y])?;
                OperatorCommand::ManualTarget(Point2::new(v.x, v.y))
            }
            Topic::CmdGoal => {
                let v: GoalPayload = payload(topic, p)?;
                finite(topic, &[v.x, v.y, v.theta.unwrap_or(0.0)])?;
                OperatorCommand::Goal { target: Point2::new(v.x, v.y), heading: v.theta }
            }
            Topic::CmdAutonomy => {
                let v: LevelPayload = payload(topic, p)?;
                let level = v.level.parse().map_err(|_| PayloadError::Schema {
                    topic: topic.path(),
                    reason: format!("unknown level {:?}", v.level),
                })?;
                OperatorCommand::Autonomy(level)
            }
            Topic::CmdLamp => OperatorCommand::Lamp(payload::<LampCmdPayload>(topic, p)?.on),
            Topic::CmdHeartbeat => {
                payload::<Empty>(topic, p)?;
                OperatorCommand::Heartbeat
            }
            Topic::CmdFullScan => {
                payload::<Empty>(topic, p)?;
                OperatorCommand::FullScan
            }
            t => return Err(PayloadError::NotACommand(t.path())),
        })
    }

    pub fn topic(&self) -> Topic {
        match self {
            OperatorCommand::Vel(_) => Topic::CmdVel,
            OperatorCommand::ManualTarget(_) => Topic::CmdManualTarget,
            OperatorCommand::Goal { .. } => Topic::CmdGoal,
            OperatorCommand::Autonomy(_) => Topic::CmdAutonomy,
            OperatorCommand::Lamp(_) => Topic::CmdLamp,
            OperatorCommand::Heartbeat => Topic::CmdHeartbeat,
            OperatorCommand::FullScan => Topic::CmdFullScan,
        }
    }

    pub fn to_envelope(&self, seq: u64, stamp: f64) -> Envelope {
        let topic = self.topic();
        match *self {
            OperatorCommand::Vel(t) => Envelope::new(topic, seq, stamp, &VelPayload { v: t.v, w: t.w }),
            OperatorCommand::ManualTarget(p) => Envelope::new(topic, seq, stamp, &PointPayload { x: p.x, y: p.y }),
            OperatorCommand::Goal { target, heading } => {
                Envelope::new(topic, seq, stamp, &GoalPayload { x: target.x, y: target.y, theta: heading })
            }
            OperatorCommand::Autonomy(l) => {
                Envelope::new(topic, seq, stamp, &LevelPayload { level: l.as_str().to_string() })
            }
            OperatorCommand::Lamp(on) => Envelope::new(topic, seq, stamp, &LampCmdPayload { on }),
            OperatorCommand::Heartbeat | OperatorCommand::FullScan => Envelope::new(topic, seq, stamp, &Empty {}),
        }
    }
}
