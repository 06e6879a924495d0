use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use huddle_core::modes::Mode;
use huddle_core::wire::WireMessage;
use huddle_core::ParticipantId;
use huddle_server::{Client, ServerConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "huddle", about = "Group discussion sessions with a turn-taking agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Target {
    /// WebSocket endpoint of a running server.
    #[arg(long, default_value = "ws://127.0.0.1:8080/ws")]
    url: String,
    #[arg(long)]
    session: String,
}

#[derive(clap::Args)]
struct HostTarget {
    #[command(flatten)]
    target: Target,
    /// Host identity used for the command.
    #[arg(long, default_value = "host")]
    host: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run the session server.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Create a session on a running server.
    CreateSession {
        #[command(flatten)]
        target: Target,
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
    },
    /// Move a participant to another room.
    Move {
        #[command(flatten)]
        host: HostTarget,
        #[arg(long)]
        participant: String,
        #[arg(long)]
        room: String,
    },
    /// Change the mode of the main room.
    SetMode {
        #[command(flatten)]
        host: HostTarget,
        #[arg(long, default_value = "main")]
        room: String,
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
    },
    /// Join as a participant, say one utterance and print what comes back.
    Say {
        #[command(flatten)]
        target: Target,
        #[arg(long = "as")]
        participant: String,
        /// Room to join before speaking; stays put when omitted.
        #[arg(long)]
        room: Option<String>,
        /// Stop printing after this long without a message.
        #[arg(long, default_value_t = 8000)]
        listen_ms: u64,
        text: String,
    },
}

fn parse_mode(raw: &str) -> Result<Mode, String> {
    serde_json::from_value(serde_json::Value::String(raw.to_string()))
        .map_err(|_| format!("unknown mode {raw:?}; use roundtable, peripheral or breakout"))
}

type Failure = Box<dyn std::error::Error + Send + Sync>;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into())).init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

async fn host_client(h: &HostTarget) -> Result<Client, Failure> {
    Ok(Client::join(&h.target.url, &h.target.session, ParticipantId::host(h.host.clone())).await?)
}

async fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Serve { config, port, bind } => {
            let config = ServerConfig::load(&config)?;
            let running = huddle_server::start(&config, &format!("{bind}:{port}")).await?;
            tracing::info!(url = running.ws_url(), logs = %config.log_dir.display(), "serving");
            tokio::signal::ctrl_c().await?;
            tracing::info!("shutting down");
            running.stop().await?;
        }
        Command::CreateSession { target, mode } => {
            let mut c = Client::connect(&target.url).await?;
            println!("{}", c.create_session(&target.session, mode).await?);
        }
        Command::Move { host, participant, room } => {
            let mut c = host_client(&host).await?;
            println!("{}", c.request(&WireMessage::HostMove { participant, room }).await?);
        }
        Command::SetMode { host, room, mode } => {
            let mut c = host_client(&host).await?;
            println!("{}", c.request(&WireMessage::SetMode { room, mode }).await?);
        }
        Command::Say { target, participant, room, listen_ms, text } => {
            let mut c = Client::join(&target.url, &target.session, ParticipantId::human(participant)).await?;
            if let Some(room) = room {
                c.send(&WireMessage::JoinRoom { room }).await?;
            }
            c.say(&text).await?;
            let listen = Duration::from_millis(listen_ms);
            while let Ok(m) = c.wait_for(listen, |_| true).await {
                println!("{}", m.to_json());
            }
        }
    }
    Ok(())
}
