//! A simulated robot attached to a relay the same way a real one would be:
//! it registers over `/ws/robot`, runs the simulator in real time, applies
//! commands between ticks and streams telemetry back.

use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tokio_tungstenite::tungstenite::Message;
use uvbot_core::session::SessionState;
use uvbot_core::Simulator;

use crate::endpoint::RobotEndpoint;
use crate::protocol::{ErrorCode, PeerId, WireMessage};

#[derive(Debug, thiserror::Error)]
pub enum RobotClientError {
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("relay refused registration: {0:?} {1}")]
    Refused(ErrorCode, String),
    #[error("relay closed the connection")]
    Closed,
}

/// Registers `id` at `url` (the relay's `/ws/robot`) and runs until the
/// relay goes away.
pub async fn run_sim_robot(
    url: &str,
    id: PeerId,
    mut sim: Simulator,
    mut endpoint: RobotEndpoint,
    keepalive: Duration,
) -> Result<(), RobotClientError> {
    let (ws, _) = tokio_tungstenite::connect_async(url).await?;
    let (mut sink, mut stream) = ws.split();
    let send = |m: &WireMessage| Message::Text(m.to_json().into());
    sink.send(send(&WireMessage::Register { id: id.clone() })).await?;
    loop {
        match stream.next().await {
            Some(Ok(Message::Text(t))) => match WireMessage::from_json(&t) {
                Ok(WireMessage::Registered { .. }) => break,
                Ok(WireMessage::Error { code, message }) => return Err(RobotClientError::Refused(code, message)),
                _ => {}
            },
            Some(Ok(_)) => {}
            Some(Err(e)) => return Err(e.into()),
            None => return Err(RobotClientError::Closed),
        }
    }
    info!("registered as {id}");

    let mut tick = tokio::time::interval(Duration::from_secs_f64(sim.config().dt));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut alive = tokio::time::interval(keepalive);
    loop {
        tokio::select! {
            _ = tick.tick() => {
                let report = sim.step();
                for env in endpoint.telemetry(&sim, &report) {
                    sink.send(send(&WireMessage::Data { envelope: env })).await?;
                }
            }
            _ = alive.tick() => {
                sink.send(send(&WireMessage::Keepalive)).await?;
            }
            frame = stream.next() => {
                let text = match frame {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None => {
                        endpoint.on_session(SessionState::Closed, &mut sim);
                        return Err(RobotClientError::Closed);
                    }
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => return Err(e.into()),
                };
                match WireMessage::from_json(&text) {
                    Ok(WireMessage::Paired { .. }) => {
                        info!("client paired");
                        endpoint.on_session(SessionState::Paired, &mut sim);
                    }
                    Ok(WireMessage::Data { envelope }) => {
                        if let Err(e) = endpoint.on_command(&envelope, &mut sim) {
                            warn!("command {} #{} dropped: {e}", envelope.topic, envelope.seq);
                        }
                    }
                    Ok(WireMessage::Error { code: ErrorCode::SessionClosed | ErrorCode::PeerLeft, message }) => {
                        info!("session ended: {message}");
                        endpoint.on_session(SessionState::Closed, &mut sim);
                    }
                    Ok(WireMessage::Error { code, message }) => debug!("relay: {code:?} {message}"),
                    Ok(other) => debug!("ignoring {other:?}"),
                    Err(e) => warn!("unparseable frame: {e}"),
                }
            }
        }
    }
}
