//! Live session service: a WebSocket front end over the sans-IO session
//! core, a chat-completion backend, and a headless protocol client.

pub mod client;
pub mod config;
pub mod hub;
pub mod live;
pub mod transport;

pub use client::{Client, ClientError};
pub use config::{BackendChoice, ServerConfig};
pub use hub::HubHandle;
pub use live::{LiveBackend, LiveConfig};

use tokio::net::TcpListener;

/// A server bound to a local port and running in the background.
pub struct Running {
    pub addr: std::net::SocketAddr,
    pub hub: HubHandle,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Running {
    pub fn ws_url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }

    /// Stops accepting connections and flushes every log.
    pub async fn stop(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.hub.flush().await;
        self.task.await.map_err(std::io::Error::other)?
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in a background
/// task.
pub async fn start(config: &ServerConfig, addr: &str) -> Result<Running, Box<dyn std::error::Error + Send + Sync>> {
    let backend = config.build_backend()?;
    let hub = hub::spawn(config, backend)?;
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let task = tokio::spawn(transport::serve(listener, hub.clone(), async move {
        let _ = stopped.await;
    }));
    Ok(Running { addr, hub, stop: Some(stop), task })
}
