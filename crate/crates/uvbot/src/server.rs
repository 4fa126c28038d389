//! WebSocket relay: robots register on `/ws/robot`, operator consoles pair
//! with them on `/ws/client`, and data frames are forwarded between the two
//! in order, after the registry has checked topic, direction and sequence.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use uvbot_core::session::{LinkTimers, SessionState};

use crate::protocol::{ErrorCode, PeerId, WireMessage};
use crate::registry::{Registry, SessionId, Side};

#[derive(Debug, Clone)]
pub struct RelayConfig {
    pub timers: LinkTimers,
    /// How often session watchdogs are evaluated.
    pub monitor_period: Duration,
    /// Artificial per-frame forwarding delay of up to this much, for tests
    /// of in-order delivery. Zero disables it.
    pub max_forward_delay: Duration,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            timers: LinkTimers::default(),
            monitor_period: Duration::from_millis(100),
            max_forward_delay: Duration::ZERO,
        }
    }
}

enum Out {
    Frame(WireMessage),
    Close,
}

type Tx = mpsc::UnboundedSender<Out>;

#[derive(Default)]
struct Peers {
    robots: HashMap<PeerId, (u64, Tx)>,
    clients: HashMap<SessionId, Tx>,
}

struct Shared {
    config: RelayConfig,
    start: Instant,
    registry: Mutex<Registry>,
    peers: Mutex<Peers>,
}

impl Shared {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn send_robot(&self, id: &PeerId, msg: Out) {
        if let Some((_, tx)) = self.peers.lock().unwrap().robots.get(id) {
            let _ = tx.send(msg);
        }
    }

    fn send_client(&self, session: &SessionId, msg: Out) {
        if let Some(tx) = self.peers.lock().unwrap().clients.get(session) {
            let _ = tx.send(msg);
        }
    }

    fn forward_delay(&self, seq: u64) -> Duration {
        let max = self.config.max_forward_delay.as_micros() as u64;
        if max == 0 {
            return Duration::ZERO;
        }
        // Knuth multiplicative hash: spread, repeatable delays.
        Duration::from_micros(seq.wrapping_mul(2_654_435_761) % max)
    }
}

/// A running relay; dropping it does not stop the server task.
#[derive(Clone)]
pub struct Relay {
    shared: Arc<Shared>,
}

impl Relay {
    pub fn new(config: RelayConfig) -> Self {
        Self {
            shared: Arc::new(Shared {
                registry: Mutex::new(Registry::new(config.timers)),
                config,
                start: Instant::now(),
                peers: Mutex::new(Peers::default()),
            }),
        }
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/ws/robot", get(robot_upgrade))
            .route("/ws/client", get(client_upgrade))
            .with_state(self.shared.clone())
    }

    /// Binds and serves in a background task, returning the bound address.
    pub async fn spawn(&self, addr: SocketAddr) -> std::io::Result<SocketAddr> {
        let listener = TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        let app = self.router();
        tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                warn!("relay stopped: {e}");
            }
        });
        tokio::spawn(monitor(self.shared.clone()));
        info!("relay listening on {local}");
        Ok(local)
    }

    pub fn session_state(&self, robot: &PeerId) -> Option<SessionState> {
        let reg = self.shared.registry.lock().unwrap();
        reg.current_session(robot).map(|s| reg.session_state(&s))
    }
}

async fn monitor(shared: Arc<Shared>) {
    let mut tick = tokio::time::interval(shared.config.monitor_period);
    loop {
        tick.tick().await;
        let events = shared.registry.lock().unwrap().heartbeat_monitor(shared.now());
        for e in events {
            info!("robot {}: session {}", e.robot, e.state);
            let session = e.session.as_ref();
            match e.state {
                SessionState::Closed => {
                    let msg = || WireMessage::error(ErrorCode::SessionClosed, "heartbeat lost");
                    shared.send_robot(&e.robot, Out::Frame(msg()));
                    if let Some(s) = session {
                        shared.send_client(s, Out::Frame(msg()));
                        shared.send_client(s, Out::Close);
                    }
                    if e.removed {
                        shared.send_robot(&e.robot, Out::Close);
                    }
                }
                SessionState::Degraded => {
                    let msg = || WireMessage::error(ErrorCode::SessionDegraded, "heartbeat stale");
                    shared.send_robot(&e.robot, Out::Frame(msg()));
                    if let Some(s) = session {
                        shared.send_client(s, Out::Frame(msg()));
                    }
                }
                SessionState::Paired => {
                    shared.send_robot(&e.robot, Out::Frame(WireMessage::Paired { robot_id: None }));
                    if let Some(s) = session {
                        shared.send_client(s, Out::Frame(WireMessage::Paired { robot_id: Some(e.robot.clone()) }));
                    }
                }
                _ => {}
            }
        }
    }
}

async fn robot_upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| robot_socket(socket, shared))
}

async fn client_upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| client_socket(socket, shared))
}

/// Splits the socket and starts its single writer; frames queued on the
/// returned sender go out in order.
fn writer(socket: WebSocket) -> (Tx, futures_util::stream::SplitStream<WebSocket>) {
    let (mut sink, stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Out>();
    tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            let r = match out {
                Out::Frame(m) => sink.send(Message::Text(m.to_json().into())).await,
                Out::Close => {
                    let _ = sink.send(Message::Close(None)).await;
                    break;
                }
            };
            if r.is_err() {
                break;
            }
        }
    });
    (tx, stream)
}

/// Next text frame parsed as a wire message; `None` once the socket ends.
async fn next_message(stream: &mut futures_util::stream::SplitStream<WebSocket>, tx: &Tx) -> Option<WireMessage> {
    while let Some(frame) = stream.next().await {
        match frame {
            Ok(Message::Text(t)) => match WireMessage::from_json(&t) {
                Ok(m) => return Some(m),
                Err(e) => {
                    let _ = tx.send(Out::Frame(WireMessage::error(ErrorCode::BadMessage, e)));
                }
            },
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => {}
        }
    }
    None
}

async fn robot_socket(socket: WebSocket, shared: Arc<Shared>) {
    let (tx, mut stream) = writer(socket);
    let id = match next_message(&mut stream, &tx).await {
        Some(WireMessage::Register { id }) => id,
        Some(_) => {
            let _ = tx.send(Out::Frame(WireMessage::error(ErrorCode::NotRegistered, "register first")));
            let _ = tx.send(Out::Close);
            return;
        }
        None => return,
    };
    let registration = match shared.registry.lock().unwrap().register_robot(&id, shared.now()) {
        Ok(r) => r,
        Err(e) => {
            warn!("{e}");
            let _ = tx.send(Out::Frame(WireMessage::error(e.code(), &e)));
            let _ = tx.send(Out::Close);
            return;
        }
    };
    shared.peers.lock().unwrap().robots.insert(id.clone(), (registration, tx.clone()));
    let _ = tx.send(Out::Frame(WireMessage::Registered { id: id.clone() }));
    info!("robot {id} registered");

    while let Some(msg) = next_message(&mut stream, &tx).await {
        match msg {
            WireMessage::Keepalive => shared.registry.lock().unwrap().robot_keepalive(&id, registration, shared.now()),
            WireMessage::Data { envelope } => {
                let delay = shared.forward_delay(envelope.seq);
                if !delay.is_zero() {
                    tokio::time::sleep(delay).await;
                }
                let routed = {
                    let mut reg = shared.registry.lock().unwrap();
                    let now = shared.now();
                    reg.robot_keepalive(&id, registration, now);
                    match reg.current_session(&id) {
                        Some(s) => reg.route(&s, Side::Robot, &envelope, now).map(|d| (s, d)),
                        None => Err(crate::registry::RouteError::SessionClosed),
                    }
                };
                match routed {
                    Ok((s, d)) => {
                        if let Some(gap) = d.gap {
                            warn!("robot {id}: telemetry seq jumped from {} to {}", gap.expected, gap.got);
                        }
                        shared.send_client(&s, Out::Frame(WireMessage::Data { envelope: d.envelope }));
                    }
                    // Telemetry without a listener is normal; say nothing.
                    Err(crate::registry::RouteError::SessionClosed) => {}
                    Err(e) => {
                        debug!("robot {id}: {e}");
                        let _ = tx.send(Out::Frame(WireMessage::error(e.code(), &e)));
                    }
                }
            }
            other => {
                let _ = tx.send(Out::Frame(WireMessage::error(
                    ErrorCode::BadMessage,
                    format!("unexpected {} from a robot", kind(&other)),
                )));
            }
        }
    }

    info!("robot {id} left");
    let session = shared.registry.lock().unwrap().unregister_robot(&id, registration);
    {
        let mut peers = shared.peers.lock().unwrap();
        if peers.robots.get(&id).is_some_and(|(r, _)| *r == registration) {
            peers.robots.remove(&id);
        }
    }
    if let Some(s) = session {
        shared.send_client(&s, Out::Frame(WireMessage::error(ErrorCode::PeerLeft, "robot disconnected")));
        shared.send_client(&s, Out::Close);
    }
}

async fn client_socket(socket: WebSocket, shared: Arc<Shared>) {
    let (tx, mut stream) = writer(socket);
    let robot = match next_message(&mut stream, &tx).await {
        Some(WireMessage::Connect { robot_id }) => robot_id,
        Some(_) => {
            let _ = tx.send(Out::Frame(WireMessage::error(ErrorCode::BadMessage, "connect first")));
            let _ = tx.send(Out::Close);
            return;
        }
        None => return,
    };
    let session = {
        // Both locks held so the robot cannot leave between pairing and
        // recording the client's sender.
        let mut reg = shared.registry.lock().unwrap();
        let mut peers = shared.peers.lock().unwrap();
        match reg.connect_client(&robot, shared.now()) {
            Ok(s) => {
                peers.clients.insert(s.clone(), tx.clone());
                s
            }
            Err(e) => {
                debug!("{e}");
                let _ = tx.send(Out::Frame(WireMessage::error(e.code(), &e)));
                let _ = tx.send(Out::Close);
                return;
            }
        }
    };
    info!("client paired with {robot}");
    let _ = tx.send(Out::Frame(WireMessage::Paired { robot_id: Some(robot.clone()) }));
    shared.send_robot(&robot, Out::Frame(WireMessage::Paired { robot_id: None }));

    while let Some(msg) = next_message(&mut stream, &tx).await {
        match msg {
            WireMessage::Data { envelope } => {
                let delay = shared.forward_delay(envelope.seq);
                if !delay.is_zero() {
                    tokio::time::sleep(delay).await;
                }
                let routed = shared.registry.lock().unwrap().route(&session, Side::Client, &envelope, shared.now());
                match routed {
                    Ok(d) => {
                        if let Some(gap) = d.gap {
                            warn!("client of {robot}: command seq jumped from {} to {}", gap.expected, gap.got);
                        }
                        shared.send_robot(&robot, Out::Frame(WireMessage::Data { envelope: d.envelope }));
                    }
                    Err(e) => {
                        debug!("client of {robot}: {e}");
                        let _ = tx.send(Out::Frame(WireMessage::error(e.code(), &e)));
                    }
                }
            }
            other => {
                let _ = tx.send(Out::Frame(WireMessage::error(
                    ErrorCode::BadMessage,
                    format!("unexpected {} from a client", kind(&other)),
                )));
            }
        }
    }

    let closed = shared.registry.lock().unwrap().disconnect_client(&session);
    shared.peers.lock().unwrap().clients.remove(&session);
    if closed {
        info!("client of {robot} left");
        shared.send_robot(&robot, Out::Frame(WireMessage::error(ErrorCode::PeerLeft, "client disconnected")));
    }
}

fn kind(m: &WireMessage) -> &'static str {
    match m {
        WireMessage::Register { .. } => "register",
        WireMessage::Registered { .. } => "registered",
        WireMessage::Keepalive => "keepalive",
        WireMessage::Connect { .. } => "connect",
        WireMessage::Paired { .. } => "paired",
        WireMessage::Error { .. } => "error",
        WireMessage::Data { .. } => "data",
    }
}
