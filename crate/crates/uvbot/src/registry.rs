//! Relay bookkeeping: registered robots, their single client session, and
//! per-direction ordering. Pure and clock-driven so timing is testable; the
//! WebSocket server wraps it in a mutex.

use std::collections::BTreeMap;

use uvbot_core::session::{LinkTimers, Session, SessionState};

use crate::protocol::{Direction, Envelope, ErrorCode, PeerId, Topic};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("robot {0} is already registered")]
    DuplicateId(PeerId),
    #[error("no robot registered as {0}")]
    UnknownRobot(PeerId),
    #[error("robot {0} already has a client")]
    RobotBusy(PeerId),
}

impl RegistryError {
    pub fn code(&self) -> ErrorCode {
        match self {
            RegistryError::DuplicateId(_) => ErrorCode::DuplicateId,
            RegistryError::UnknownRobot(_) => ErrorCode::UnknownRobot,
            RegistryError::RobotBusy(_) => ErrorCode::RobotBusy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("{topic} may not be sent by the {from:?} side")]
    WrongDirection { topic: &'static str, from: Side },
    #[error("session is closed")]
    SessionClosed,
    #[error("session is degraded; only heartbeats are accepted from the client")]
    Degraded,
    #[error("seq {got} does not follow {last}")]
    StaleSeq { last: u64, got: u64 },
}

impl RouteError {
    pub fn code(&self) -> ErrorCode {
        match self {
            RouteError::UnknownTopic(_) => ErrorCode::UnknownTopic,
            RouteError::WrongDirection { .. } => ErrorCode::WrongDirection,
            RouteError::SessionClosed => ErrorCode::SessionClosed,
            RouteError::Degraded => ErrorCode::SessionDegraded,
            RouteError::StaleSeq { .. } => ErrorCode::StaleSeq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Robot,
    Client,
}

impl Side {
    pub fn peer(self) -> Side {
        match self {
            Side::Robot => Side::Client,
            Side::Client => Side::Robot,
        }
    }

    fn index(self) -> usize {
        match self {
            Side::Robot => 0,
            Side::Client => 1,
        }
    }
}

/// Names one pairing; a later pairing with the same robot gets a new
/// generation, so handles of a closed session never route again.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SessionId {
    pub robot: PeerId,
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqGap {
    pub expected: u64,
    pub got: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub to: Side,
    pub envelope: Envelope,
    pub gap: Option<SeqGap>,
}

/// A state change found by [`Registry::heartbeat_monitor`].
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorEvent {
    pub robot: PeerId,
    pub session: Option<SessionId>,
    pub state: SessionState,
    /// The robot's registration lapsed and it was dropped.
    pub removed: bool,
}

#[derive(Debug, Clone)]
struct RobotEntry {
    registration: u64,
    last_keepalive: f64,
    session: Session,
    /// Generation of the client pairing, if one was ever made.
    paired: Option<u64>,
    last_seq: [Option<u64>; 2],
}

#[derive(Debug, Clone)]
pub struct Registry {
    timers: LinkTimers,
    robots: BTreeMap<PeerId, RobotEntry>,
    next_generation: u64,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(LinkTimers::default())
    }
}

impl Registry {
    pub fn new(timers: LinkTimers) -> Self {
        Self { timers, robots: BTreeMap::new(), next_generation: 1 }
    }

    pub fn timers(&self) -> &LinkTimers {
        &self.timers
    }

    fn expired(&self, e: &RobotEntry, now: f64) -> bool {
        now - e.last_keepalive > self.timers.heartbeat_timeout
    }

    fn generation(&mut self) -> u64 {
        let g = self.next_generation;
        self.next_generation += 1;
        g
    }

    /// Returns a registration token for [`Registry::unregister_robot`].
    pub fn register_robot(&mut self, id: &PeerId, now: f64) -> Result<u64, RegistryError> {
        if let Some(e) = self.robots.get(id) {
            if !self.expired(e, now) {
                return Err(RegistryError::DuplicateId(id.clone()));
            }
        }
        let registration = self.generation();
        self.robots.insert(
            id.clone(),
            RobotEntry {
                registration,
                last_keepalive: now,
                session: Session::registered(now, self.timers),
                paired: None,
                last_seq: [None; 2],
            },
        );
        Ok(registration)
    }

    /// Removes the robot if `registration` is still the live one; a stale
    /// socket of an expired robot must not evict its successor.
    pub fn unregister_robot(&mut self, id: &PeerId, registration: u64) -> Option<SessionId> {
        match self.robots.get(id) {
            Some(e) if e.registration == registration => {
                let e = self.robots.remove(id).expect("checked above");
                e.paired.map(|generation| SessionId { robot: id.clone(), generation })
            }
            _ => None,
        }
    }

    pub fn is_registered(&self, id: &PeerId, now: f64) -> bool {
        self.robots.get(id).is_some_and(|e| !self.expired(e, now))
    }

    pub fn robot_keepalive(&mut self, id: &PeerId, registration: u64, now: f64) {
        if let Some(e) = self.robots.get_mut(id).filter(|e| e.registration == registration) {
            e.last_keepalive = e.last_keepalive.max(now);
            e.session.robot_heartbeat(now);
        }
    }

    pub fn connect_client(&mut self, robot: &PeerId, now: f64) -> Result<SessionId, RegistryError> {
        let expired = match self.robots.get(robot) {
            None => true,
            Some(e) => self.expired(e, now),
        };
        if expired {
            return Err(RegistryError::UnknownRobot(robot.clone()));
        }
        let generation = self.generation();
        let timers = self.timers;
        let e = self.robots.get_mut(robot).expect("checked above");
        if e.session.state() == SessionState::Closed {
            e.session = Session::registered(now, timers);
        }
        if e.session.begin_connect(now).is_err() {
            return Err(RegistryError::RobotBusy(robot.clone()));
        }
        e.session.robot_heartbeat(now);
        e.session.pair(now).expect("connecting session pairs");
        e.paired = Some(generation);
        e.last_seq = [None; 2];
        Ok(SessionId { robot: robot.clone(), generation })
    }

    pub fn disconnect_client(&mut self, session: &SessionId) -> bool {
        match self.entry_mut(session) {
            Some(e) if e.session.state() != SessionState::Closed => {
                e.session.close();
                true
            }
            _ => false,
        }
    }

    fn entry_mut(&mut self, session: &SessionId) -> Option<&mut RobotEntry> {
        self.robots.get_mut(&session.robot).filter(|e| e.paired == Some(session.generation))
    }

    pub fn session_state(&self, session: &SessionId) -> SessionState {
        self.robots
            .get(&session.robot)
            .filter(|e| e.paired == Some(session.generation))
            .map_or(SessionState::Closed, |e| e.session.state())
    }

    /// The live pairing of a robot, if any.
    pub fn current_session(&self, robot: &PeerId) -> Option<SessionId> {
        let e = self.robots.get(robot)?;
        match (e.paired, e.session.state()) {
            (Some(generation), SessionState::Paired | SessionState::Degraded) => {
                Some(SessionId { robot: robot.clone(), generation })
            }
            _ => None,
        }
    }

    /// Checks an envelope against the session and topic rules and returns
    /// where it goes. Any accepted envelope counts as a heartbeat from its
    /// sender.
    pub fn route(&mut self, session: &SessionId, from: Side, env: &Envelope, now: f64) -> Result<Delivery, RouteError> {
        let e = self.entry_mut(session).ok_or(RouteError::SessionClosed)?;
        let state = e.session.state();
        if !matches!(state, SessionState::Paired | SessionState::Degraded) {
            return Err(RouteError::SessionClosed);
        }
        let topic = Topic::from_path(&env.topic).ok_or_else(|| RouteError::UnknownTopic(env.topic.clone()))?;
        let allowed = match topic.direction() {
            Direction::Command => from == Side::Client,
            Direction::Telemetry => from == Side::Robot,
        };
        if !allowed {
            return Err(RouteError::WrongDirection { topic: topic.path(), from });
        }
        if state == SessionState::Degraded && from == Side::Client && topic != Topic::CmdHeartbeat {
            return Err(RouteError::Degraded);
        }
        let slot = &mut e.last_seq[from.index()];
        let gap = match *slot {
            Some(last) if env.seq <= last => return Err(RouteError::StaleSeq { last, got: env.seq }),
            Some(last) if env.seq > last + 1 => Some(SeqGap { expected: last + 1, got: env.seq }),
            _ => None,
        };
        *slot = Some(env.seq);
        match from {
            Side::Client => e.session.client_heartbeat(now),
            Side::Robot => {
                e.last_keepalive = e.last_keepalive.max(now);
                e.session.robot_heartbeat(now);
            }
        }
        Ok(Delivery { to: from.peer(), envelope: env.clone(), gap })
    }

    /// Re-evaluates every session and drops robots whose keep-alive lapsed
    /// while unpaired. Returns only changes.
    pub fn heartbeat_monitor(&mut self, now: f64) -> Vec<MonitorEvent> {
        let mut events = Vec::new();
        let timeout = self.timers.heartbeat_timeout;
        self.robots.retain(|id, e| {
            let before = e.session.state();
            let after = e.session.heartbeat_monitor(now);
            let live = matches!(after, SessionState::Paired | SessionState::Degraded);
            let keep = live || now - e.last_keepalive <= timeout;
            if before != after || !keep {
                events.push(MonitorEvent {
                    robot: id.clone(),
                    session: e.paired.map(|generation| SessionId { robot: id.clone(), generation }),
                    state: if keep { after } else { SessionState::Closed },
                    removed: !keep,
                });
            }
            keep
        });
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn id(s: &str) -> PeerId {
        s.parse().unwrap()
    }

    fn env(topic: &str, seq: u64) -> Envelope {
        Envelope { topic: topic.into(), seq, stamp: 0.0, payload: json!({}) }
    }

    #[test]
    fn unregister_needs_the_live_token() {
        let mut r = Registry::default();
        let a = r.register_robot(&id("r"), 0.0).unwrap();
        let b = r.register_robot(&id("r"), 10.0).unwrap();
        assert_eq!(r.unregister_robot(&id("r"), a), None);
        assert!(r.is_registered(&id("r"), 10.0));
        r.unregister_robot(&id("r"), b);
        assert!(!r.is_registered(&id("r"), 10.0));
    }

    #[test]
    fn stale_and_repeated_seq_are_refused() {
        let mut r = Registry::default();
        r.register_robot(&id("r"), 0.0).unwrap();
        let s = r.connect_client(&id("r"), 0.0).unwrap();
        r.route(&s, Side::Client, &env("/cmd/heartbeat", 4), 0.1).unwrap();
        assert_eq!(
            r.route(&s, Side::Client, &env("/cmd/heartbeat", 4), 0.2),
            Err(RouteError::StaleSeq { last: 4, got: 4 })
        );
        // Directions are sequenced independently.
        r.route(&s, Side::Robot, &env("/telemetry/link", 1), 0.2).unwrap();
    }
}
