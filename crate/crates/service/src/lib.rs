//! HTTP job service: a transfer job moves through
//! `created -> masked -> matched -> running -> done | failed`, one request
//! per stage, with progress streamed as server-sent events.

pub mod api;
pub mod app;
pub mod error;
pub mod events;
pub mod job;
pub mod store;

pub use api::router;
pub use app::{AppState, ServiceConfig};
pub use error::ApiError;
pub use job::{JobState, ProgressEvent, TransferJob};

/// Binds `0.0.0.0:{port}` and serves until the process exits.
pub async fn serve(config: ServiceConfig) -> Result<(), ApiError> {
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], config.port));
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
