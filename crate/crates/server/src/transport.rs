//! WebSocket endpoint: one text frame per wire message.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use huddle_core::wire::{ErrorCode, WireMessage};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tracing::debug;

use crate::hub::{HubEvent, HubHandle};

/// Routes: `/ws` for clients, `/health` for probes.
pub fn router(hub: HubHandle) -> Router {
    Router::new().route("/ws", get(upgrade)).route("/health", get(|| async { "ok" })).with_state(hub)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    hub: HubHandle,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(hub)).with_graceful_shutdown(shutdown).await
}

async fn upgrade(ws: WebSocketUpgrade, State(hub): State<HubHandle>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, hub))
}

async fn connection(socket: WebSocket, hub: HubHandle) {
    let conn = hub.next_conn_id();
    let (outbox, mut outgoing) = mpsc::unbounded_channel::<WireMessage>();
    if !hub.send(HubEvent::Connected { conn, outbox: outbox.clone() }) {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(message) = outgoing.recv().await {
            if sink.send(Message::Text(message.to_json())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(frame)) = stream.next().await {
        match frame {
            Message::Text(text) => match WireMessage::from_json(&text) {
                Ok(message) => {
                    hub.send(HubEvent::Inbound { conn, message });
                }
                Err(e) => {
                    let _ = outbox.send(WireMessage::error(ErrorCode::BadMessage, e.to_string()));
                }
            },
            Message::Binary(_) => {
                let _ = outbox.send(WireMessage::error(ErrorCode::BadMessage, "frames must be JSON text"));
            }
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }
    debug!(conn, "connection closed");
    hub.send(HubEvent::Closed { conn });
    drop(outbox);
    // The writer stops once the hub has dropped its copy of the outbox.
    let _ = writer.await;
}
