//! HTTP API and command-line front end for the atlas engine.

pub mod api;
pub mod commands;
pub mod config;
pub mod error;

pub use api::{router, AppState};
pub use config::GatewayConfig;
pub use error::{ApiError, ErrorCode};
