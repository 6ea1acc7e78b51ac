//! HTTP service for interactive scenario runs against stored baselines.
//!
//! Jobs are submitted, run in the background under a worker limit, stream
//! their per-step progress as server-sent events and persist their
//! snapshots, so any stored step can seed further branches.

pub mod api;
pub mod error;
pub mod registry;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::{router, AppState, BaselineRequest, ConfigOverrides, ScenarioRequest};
pub use error::{ApiError, ErrorBody};
pub use registry::JobState;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Jobs allowed to run at once; further jobs wait QUEUED.
    pub workers: usize,
    pub data_dir: PathBuf,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            workers: 2,
            data_dir: PathBuf::from("pollsmc-data"),
        }
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::open(&config.data_dir, config.workers).map_err(std::io::Error::other)?;
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
