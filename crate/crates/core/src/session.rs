//! Session lifecycle and the heartbeat watchdog, driven by an explicit clock.

use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTimers {
    pub heartbeat_interval: f64,
    pub heartbeat_timeout: f64,
    pub close_timeout: f64,
}

impl Default for LinkTimers {
    fn default() -> Self {
        Self { heartbeat_interval: 1.0, heartbeat_timeout: 3.0, close_timeout: 15.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionState {
    RobotRegistered,
    ClientConnecting,
    Paired,
    /// A heartbeat went stale; telemetry still flows, commands do not.
    Degraded,
    Closed,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::RobotRegistered => "robot_registered",
            SessionState::ClientConnecting => "client_connecting",
            SessionState::Paired => "paired",
            SessionState::Degraded => "degraded",
            SessionState::Closed => "closed",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot {action} while the session is {state}")]
pub struct TransitionError {
    pub action: &'static str,
    pub state: SessionState,
}

/// One robot/client pairing as seen by either end or the relay.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    state: SessionState,
    timers: LinkTimers,
    last_client_heartbeat: f64,
    last_robot_heartbeat: f64,
}

impl Session {
    pub fn registered(now: f64, timers: LinkTimers) -> Self {
        Self { state: SessionState::RobotRegistered, timers, last_client_heartbeat: now, last_robot_heartbeat: now }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn timers(&self) -> &LinkTimers {
        &self.timers
    }

    pub fn begin_connect(&mut self, now: f64) -> Result<(), TransitionError> {
        match self.state {
            SessionState::RobotRegistered => {
                self.state = SessionState::ClientConnecting;
                self.last_client_heartbeat = now;
                Ok(())
            }
            state => Err(TransitionError { action: "connect", state }),
        }
    }

    pub fn pair(&mut self, now: f64) -> Result<(), TransitionError> {
        match self.state {
            SessionState::ClientConnecting => {
                self.state = SessionState::Paired;
                self.last_client_heartbeat = now;
                self.last_robot_heartbeat = now;
                Ok(())
            }
            state => Err(TransitionError { action: "pair", state }),
        }
    }

    pub fn client_heartbeat(&mut self, now: f64) {
        if self.state != SessionState::Closed {
            self.last_client_heartbeat = self.last_client_heartbeat.max(now);
        }
    }

    pub fn robot_heartbeat(&mut self, now: f64) {
        if self.state != SessionState::Closed {
            self.last_robot_heartbeat = self.last_robot_heartbeat.max(now);
        }
    }

    /// Age of the staler of the two heartbeats.
    pub fn heartbeat_age(&self, now: f64) -> f64 {
        now - self.last_client_heartbeat.min(self.last_robot_heartbeat)
    }

    pub fn client_heartbeat_age(&self, now: f64) -> f64 {
        now - self.last_client_heartbeat
    }

    /// Re-evaluates the state against the clock. Both directions are
    /// watched with the same timers.
    pub fn heartbeat_monitor(&mut self, now: f64) -> SessionState {
        let age = self.heartbeat_age(now);
        self.state = match self.state {
            SessionState::Paired | SessionState::Degraded if age > self.timers.close_timeout => SessionState::Closed,
            SessionState::Paired if age > self.timers.heartbeat_timeout => SessionState::Degraded,
            SessionState::Degraded if age <= self.timers.heartbeat_timeout => SessionState::Paired,
            s => s,
        };
        self.state
    }

    pub fn close(&mut self) {
        self.state = SessionState::Closed;
    }

    pub fn accepts_commands(&self) -> bool {
        self.state == SessionState::Paired
    }

    pub fn accepts_telemetry(&self) -> bool {
        matches!(self.state, SessionState::Paired | SessionState::Degraded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paired() -> Session {
        let mut s = Session::registered(0.0, LinkTimers::default());
        s.begin_connect(0.0).unwrap();
        s.pair(0.0).unwrap();
        s
    }

    #[test]
    fn lifecycle() {
        let mut s = Session::registered(0.0, LinkTimers::default());
        assert!(s.pair(0.0).is_err());
        s.begin_connect(0.0).unwrap();
        assert!(s.begin_connect(0.0).is_err());
        s.pair(0.0).unwrap();
        assert_eq!(s.state(), SessionState::Paired);
        assert!(s.accepts_commands());
    }

    #[test]
    fn fresh_heartbeats_stay_paired() {
        let mut s = paired();
        for k in 1..100 {
            let t = k as f64 * 0.5;
            s.client_heartbeat(t);
            s.robot_heartbeat(t);
            assert_eq!(s.heartbeat_monitor(t), SessionState::Paired);
        }
    }

    #[test]
    fn silent_client_degrades_then_recovers_then_closes() {
        let mut s = paired();
        s.robot_heartbeat(6.0);
        assert_eq!(s.heartbeat_monitor(6.0), SessionState::Degraded);
        assert!(!s.accepts_commands());
        assert!(s.accepts_telemetry());
        s.client_heartbeat(7.0);
        s.robot_heartbeat(7.0);
        assert_eq!(s.heartbeat_monitor(7.0), SessionState::Paired);
        s.robot_heartbeat(30.0);
        assert_eq!(s.heartbeat_monitor(30.0), SessionState::Closed);
        s.client_heartbeat(31.0);
        assert_eq!(s.heartbeat_monitor(31.0), SessionState::Closed);
    }

    #[test]
    fn silent_robot_is_watched_too() {
        let mut s = paired();
        s.client_heartbeat(4.0);
        assert_eq!(s.heartbeat_monitor(4.0), SessionState::Degraded);
    }
}
