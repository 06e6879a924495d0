//! Sans-IO core of a spoken group-discussion system with a proactive AI
//! participant: the turn-taking engine, per-room context, mode policy, the
//! backend boundary, and the multi-room session that ties them together.

pub mod backend;
pub mod config;
pub mod context;
pub mod engine;
pub mod log;
pub mod model;
pub mod modes;
pub mod room;
pub mod session;
pub mod text;
pub mod wire;

pub use config::ProtocolConfig;
pub use model::*;
