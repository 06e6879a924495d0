//! Protocol-level client without a browser, for scripts, the host CLI and
//! tests.

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use huddle_core::modes::Mode;
use huddle_core::wire::{ErrorCode, WireMessage};
use huddle_core::ParticipantId;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("server closed the connection")]
    Closed,
    #[error("no matching message within {0:?}")]
    Timeout(Duration),
    #[error("server error {code:?}: {detail}")]
    Server { code: ErrorCode, detail: String },
    #[error("undecodable frame: {0}")]
    Decode(#[from] serde_json::Error),
}

#[derive(Debug)]
pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    /// Everything received so far, in arrival order.
    pub received: Vec<WireMessage>,
}

/// How long request/response helpers wait.
const REPLY_WAIT: Duration = Duration::from_secs(10);

impl Client {
    /// `url` is the WebSocket endpoint, e.g. `ws://127.0.0.1:8080/ws`.
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        Ok(Self { ws, received: Vec::new() })
    }

    /// Connects and joins `session` as `participant`; returns once the
    /// first snapshot arrives.
    pub async fn join(url: &str, session: &str, participant: ParticipantId) -> Result<Self, ClientError> {
        let mut c = Self::connect(url).await?;
        c.send(&WireMessage::ClientHello { session_id: session.into(), participant }).await?;
        c.expect(REPLY_WAIT, |m| matches!(m, WireMessage::StateSnapshot { .. })).await?;
        Ok(c)
    }

    pub async fn send(&mut self, message: &WireMessage) -> Result<(), ClientError> {
        self.ws.send(Message::Text(message.to_json())).await?;
        Ok(())
    }

    /// Next wire message, skipping control frames.
    pub async fn recv(&mut self) -> Result<WireMessage, ClientError> {
        loop {
            match self.ws.next().await {
                None | Some(Ok(Message::Close(_))) => return Err(ClientError::Closed),
                Some(Ok(Message::Text(text))) => {
                    let m = WireMessage::from_json(&text)?;
                    self.received.push(m.clone());
                    return Ok(m);
                }
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(e.into()),
            }
        }
    }

    /// Waits for the first message matching `want`.
    pub async fn wait_for(&mut self, within: Duration, want: impl Fn(&WireMessage) -> bool) -> Result<WireMessage, ClientError> {
        let deadline = tokio::time::Instant::now() + within;
        loop {
            let m = tokio::time::timeout_at(deadline, self.recv()).await.map_err(|_| ClientError::Timeout(within))??;
            if want(&m) {
                return Ok(m);
            }
        }
    }

    /// Like [`Client::wait_for`], but a server error arriving first is
    /// returned as [`ClientError::Server`].
    pub async fn expect(&mut self, within: Duration, want: impl Fn(&WireMessage) -> bool) -> Result<WireMessage, ClientError> {
        let m = self.wait_for(within, |m| want(m) || matches!(m, WireMessage::Error { .. })).await?;
        match m {
            WireMessage::Error { code, detail } if !want(&m) => Err(ClientError::Server { code, detail }),
            m => Ok(m),
        }
    }

    /// Sends a command and waits for its acknowledgement.
    pub async fn request(&mut self, message: &WireMessage) -> Result<String, ClientError> {
        self.send(message).await?;
        match self.expect(REPLY_WAIT, |m| matches!(m, WireMessage::Ack { .. })).await? {
            WireMessage::Ack { detail } => Ok(detail),
            _ => unreachable!("expect only returns acks here"),
        }
    }

    pub async fn create_session(&mut self, session: &str, mode: Mode) -> Result<String, ClientError> {
        self.request(&WireMessage::CreateSession { session_id: session.into(), mode }).await
    }

    /// Says `text` as one utterance.
    pub async fn say(&mut self, text: &str) -> Result<(), ClientError> {
        self.send(&WireMessage::Utterance { text: text.into(), started_at: None, ended_at: None }).await
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.ws.close(None).await?;
        Ok(())
    }
}
