use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use tokio::net::TcpStream;
use tokio::time::{sleep, timeout, Instant};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use uvbot::endpoint::{RobotEndpoint, TelemetryRates};
use uvbot::protocol::{Envelope, ErrorCode, LampPayload, OperatorCommand, PeerId, Topic, WireMessage};
use uvbot::robot_client::run_sim_robot;
use uvbot::server::{Relay, RelayConfig};
use uvbot_core::fixtures::walled_room;
use uvbot_core::session::{LinkTimers, SessionState};
use uvbot_core::{Pose2D, SimConfig, Simulator};

struct Peer(WebSocketStream<MaybeTlsStream<TcpStream>>);

impl Peer {
    async fn open(addr: SocketAddr, path: &str) -> Peer {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}{path}")).await.unwrap();
        Peer(ws)
    }

    async fn send(&mut self, m: &WireMessage) {
        self.0.send(Message::Text(m.to_json().into())).await.unwrap();
    }

    /// Next protocol message; `None` once the socket closes or nothing
    /// arrives within `wait`.
    async fn recv_within(&mut self, wait: Duration) -> Option<WireMessage> {
        loop {
            match timeout(wait, self.0.next()).await {
                Ok(Some(Ok(Message::Text(t)))) => return Some(WireMessage::from_json(&t).unwrap()),
                Ok(Some(Ok(Message::Close(_)))) | Ok(None) | Ok(Some(Err(_))) | Err(_) => return None,
                Ok(Some(Ok(_))) => {}
            }
        }
    }

    async fn recv(&mut self) -> Option<WireMessage> {
        self.recv_within(Duration::from_secs(2)).await
    }

    async fn robot(addr: SocketAddr, id: &str) -> Peer {
        let mut p = Peer::open(addr, "/ws/robot").await;
        p.send(&WireMessage::Register { id: pid(id) }).await;
        assert_eq!(p.recv().await, Some(WireMessage::Registered { id: pid(id) }));
        p
    }

    async fn client(addr: SocketAddr, robot: &str) -> (Peer, Option<WireMessage>) {
        let mut p = Peer::open(addr, "/ws/client").await;
        p.send(&WireMessage::Connect { robot_id: pid(robot) }).await;
        let reply = p.recv().await;
        (p, reply)
    }
}

fn pid(s: &str) -> PeerId {
    s.parse().unwrap()
}

fn code(m: &Option<WireMessage>) -> Option<ErrorCode> {
    match m {
        Some(WireMessage::Error { code, .. }) => Some(*code),
        _ => None,
    }
}

fn data(topic: &str, seq: u64, payload: serde_json::Value) -> WireMessage {
    WireMessage::Data { envelope: Envelope { topic: topic.into(), seq, stamp: 0.0, payload } }
}

async fn relay(config: RelayConfig) -> (Relay, SocketAddr) {
    let relay = Relay::new(config);
    let addr = relay.spawn(([127, 0, 0, 1], 0).into()).await.unwrap();
    (relay, addr)
}

#[tokio::test(flavor = "multi_thread")]
async fn registration_and_pairing_errors() {
    let (_relay, addr) = relay(RelayConfig::default()).await;
    let _r = Peer::robot(addr, "ward-1").await;

    let mut dup = Peer::open(addr, "/ws/robot").await;
    dup.send(&WireMessage::Register { id: pid("ward-1") }).await;
    assert_eq!(code(&dup.recv().await), Some(ErrorCode::DuplicateId));
    assert_eq!(dup.recv().await, None, "refused robots are disconnected");

    let (_, reply) = Peer::client(addr, "ward-9").await;
    assert_eq!(code(&reply), Some(ErrorCode::UnknownRobot));

    let mut rude = Peer::open(addr, "/ws/client").await;
    rude.send(&data("/cmd/lamp", 1, json!({"on": true}))).await;
    assert_eq!(code(&rude.recv().await), Some(ErrorCode::BadMessage));

    let mut unregistered = Peer::open(addr, "/ws/robot").await;
    unregistered.send(&WireMessage::Keepalive).await;
    assert_eq!(code(&unregistered.recv().await), Some(ErrorCode::NotRegistered));

    let mut garbage = Peer::open(addr, "/ws/robot").await;
    garbage.0.send(Message::Text("{\"type\":\"warp\"}".into())).await.unwrap();
    assert_eq!(code(&garbage.recv().await), Some(ErrorCode::BadMessage));
}

#[tokio::test(flavor = "multi_thread")]
async fn connect_storm_pairs_exactly_one_client() {
    let (_relay, addr) = relay(RelayConfig::default()).await;
    let mut robot = Peer::robot(addr, "storm").await;
    let tasks: Vec<_> = (0..100).map(|_| tokio::spawn(Peer::client(addr, "storm"))).collect();
    let (mut paired, mut busy, mut keep) = (0, 0, Vec::new());
    for t in tasks {
        let (peer, reply) = t.await.unwrap();
        match reply {
            Some(WireMessage::Paired { robot_id }) => {
                assert_eq!(robot_id, Some(pid("storm")));
                paired += 1;
                keep.push(peer);
            }
            r if code(&r) == Some(ErrorCode::RobotBusy) => busy += 1,
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!((paired, busy), (1, 99));
    assert_eq!(robot.recv().await, Some(WireMessage::Paired { robot_id: None }));
}

#[tokio::test(flavor = "multi_thread")]
async fn frames_arrive_in_order_despite_forwarding_jitter() {
    let config = RelayConfig { max_forward_delay: Duration::from_millis(3), ..RelayConfig::default() };
    let (_relay, addr) = relay(config).await;
    let mut robot = Peer::robot(addr, "r").await;
    let (mut client, reply) = Peer::client(addr, "r").await;
    assert!(matches!(reply, Some(WireMessage::Paired { .. })));
    assert!(matches!(robot.recv().await, Some(WireMessage::Paired { .. })));

    const N: u64 = 200;
    for seq in 1..=N {
        let cmd = OperatorCommand::Vel(uvbot_core::Twist::new(0.001 * seq as f64, 0.0));
        client.send(&WireMessage::Data { envelope: cmd.to_envelope(seq, 0.0) }).await;
        robot
            .send(&WireMessage::Data {
                envelope: Envelope::new(Topic::Lamp, seq, 0.0, &LampPayload { on: false, forced_off: false }),
            })
            .await;
    }
    for (peer, topic) in [(&mut robot, "/cmd/vel"), (&mut client, "/telemetry/lamp")] {
        for seq in 1..=N {
            match peer.recv().await {
                Some(WireMessage::Data { envelope }) => {
                    assert_eq!((envelope.topic.as_str(), envelope.seq), (topic, seq));
                }
                other => panic!("{topic} #{seq}: {other:?}"),
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn wrong_direction_and_stale_frames_are_bounced() {
    let (_relay, addr) = relay(RelayConfig::default()).await;
    let mut robot = Peer::robot(addr, "r").await;
    let (mut client, _) = Peer::client(addr, "r").await;
    robot.recv().await;
    client.send(&data("/telemetry/pose", 1, json!({}))).await;
    assert_eq!(code(&client.recv().await), Some(ErrorCode::WrongDirection));
    robot.send(&data("/cmd/lamp", 1, json!({"on": true}))).await;
    assert_eq!(code(&robot.recv().await), Some(ErrorCode::WrongDirection));
    client.send(&data("/cmd/teleport", 1, json!({}))).await;
    assert_eq!(code(&client.recv().await), Some(ErrorCode::UnknownTopic));
    client.send(&data("/cmd/heartbeat", 4, json!({}))).await;
    assert!(matches!(robot.recv().await, Some(WireMessage::Data { .. })));
    client.send(&data("/cmd/heartbeat", 4, json!({}))).await;
    assert_eq!(code(&client.recv().await), Some(ErrorCode::StaleSeq));
}

#[tokio::test(flavor = "multi_thread")]
async fn nothing_is_forwarded_after_the_session_closes() {
    let config = RelayConfig {
        timers: LinkTimers { heartbeat_interval: 0.1, heartbeat_timeout: 0.3, close_timeout: 0.8 },
        monitor_period: Duration::from_millis(20),
        max_forward_delay: Duration::ZERO,
    };
    let (relay, addr) = relay(config).await;
    let mut robot = Peer::robot(addr, "r").await;
    let (mut client, _) = Peer::client(addr, "r").await;
    assert!(matches!(robot.recv().await, Some(WireMessage::Paired { .. })));

    // The robot keeps the registration alive; the client says nothing.
    let keepalive = tokio::spawn(async move {
        let started = Instant::now();
        let mut seen = Vec::new();
        while started.elapsed() < Duration::from_millis(1500) {
            robot.send(&WireMessage::Keepalive).await;
            if let Some(m) = robot.recv_within(Duration::from_millis(50)).await {
                seen.push(m);
            }
        }
        (robot, seen)
    });
    let degraded = client.recv_within(Duration::from_secs(3)).await;
    assert_eq!(code(&degraded), Some(ErrorCode::SessionDegraded));
    // Commands other than heartbeats bounce while degraded.
    client.send(&data("/cmd/lamp", 1, json!({"on": true}))).await;
    assert_eq!(code(&client.recv().await), Some(ErrorCode::SessionDegraded));
    let closed = client.recv_within(Duration::from_secs(3)).await;
    assert_eq!(code(&closed), Some(ErrorCode::SessionClosed));
    assert_eq!(client.recv().await, None, "the relay hangs up a closed session");

    let (mut robot, seen) = keepalive.await.unwrap();
    assert!(seen.iter().all(|m| !matches!(m, WireMessage::Data { .. })), "{seen:?}");
    assert!(seen.iter().any(|m| code(&Some(m.clone())) == Some(ErrorCode::SessionClosed)), "{seen:?}");
    assert_eq!(relay.session_state(&pid("r")), None);

    // Telemetry into a closed session goes nowhere; a new client starts clean.
    robot.send(&data("/telemetry/pose", 1, json!({"x": 0, "y": 0, "theta": 0}))).await;
    let (mut next, reply) = Peer::client(addr, "r").await;
    assert!(matches!(reply, Some(WireMessage::Paired { .. })));
    assert_eq!(next.recv_within(Duration::from_millis(200)).await, None);
    assert_eq!(relay.session_state(&pid("r")), Some(SessionState::Paired));
}

#[tokio::test(flavor = "multi_thread")]
async fn robot_leaving_tells_the_client() {
    let (_relay, addr) = relay(RelayConfig::default()).await;
    let robot = Peer::robot(addr, "r").await;
    let (mut client, _) = Peer::client(addr, "r").await;
    drop(robot);
    assert_eq!(code(&client.recv().await), Some(ErrorCode::PeerLeft));
    assert_eq!(client.recv().await, None);
    // The name is free again.
    let _again = Peer::robot(addr, "r").await;
}

/// First `/telemetry/lamp` report satisfying `want` within `wait`.
async fn lamp_report(client: &mut Peer, wait: Duration, want: impl Fn(&LampPayload) -> bool) -> Option<LampPayload> {
    let deadline = Instant::now() + wait;
    while Instant::now() < deadline {
        if let Some(WireMessage::Data { envelope }) = client.recv_within(deadline - Instant::now()).await {
            if envelope.topic == "/telemetry/lamp" {
                let lamp: LampPayload = serde_json::from_value(envelope.payload).unwrap();
                if want(&lamp) {
                    return Some(lamp);
                }
            }
        }
    }
    None
}

#[tokio::test(flavor = "multi_thread")]
async fn simulated_robot_obeys_and_trips_its_watchdog() {
    let (_relay, addr) = relay(RelayConfig::default()).await;
    let sim = Simulator::new(walled_room(4.0, 4.0), Pose2D::new(2.0, 2.0, 0.0), SimConfig::default(), 1).unwrap();
    let endpoint = RobotEndpoint::new(TelemetryRates::default(), None);
    let url = format!("ws://{addr}/ws/robot");
    tokio::spawn(async move { run_sim_robot(&url, pid("sim"), sim, endpoint, Duration::from_millis(500)).await });

    let (mut client, reply) = loop {
        let (c, reply) = Peer::client(addr, "sim").await;
        if code(&reply) != Some(ErrorCode::UnknownRobot) {
            break (c, reply);
        }
        sleep(Duration::from_millis(20)).await;
    };
    assert!(matches!(reply, Some(WireMessage::Paired { .. })), "{reply:?}");

    let mut seq = 0;
    let mut cmd = async |client: &mut Peer, c: OperatorCommand| {
        seq += 1;
        client.send(&WireMessage::Data { envelope: c.to_envelope(seq, 0.0) }).await;
    };
    cmd(&mut client, OperatorCommand::Heartbeat).await;
    cmd(&mut client, OperatorCommand::Lamp(true)).await;
    let lit = lamp_report(&mut client, Duration::from_secs(2), |_| true).await;
    assert_eq!(lit, Some(LampPayload { on: true, forced_off: false }));

    // Silence: the robot's own watchdog must cut the lamps at 3 s plus a tick.
    let silent = Instant::now();
    let off = lamp_report(&mut client, Duration::from_secs(6), |l| !l.on).await;
    let after = silent.elapsed();
    assert_eq!(off, Some(LampPayload { on: false, forced_off: true }));
    assert!(after > Duration::from_millis(2800) && after < Duration::from_millis(4000), "{after:?}");
}
