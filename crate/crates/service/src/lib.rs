//! HTTP and WebSocket gateway for running switchboard tasks. Each session
//! replays a task on its own thread; clients send commands over HTTP and
//! follow the session on a WebSocket stream.

mod api;
mod error;
pub mod protocol;
mod session;
mod state;

use std::net::SocketAddr;

pub use api::router;
pub use error::ApiError;
pub use state::{valid_id, AppState, ModelSummary, PartSummary, RolloutSummary, ServiceConfig, TaskSummary};

pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";

/// Bind address from `SWITCHBOARD_ADDR`, or the default.
pub fn bind_addr() -> Result<SocketAddr, String> {
    let raw = std::env::var("SWITCHBOARD_ADDR").unwrap_or_else(|_| DEFAULT_ADDR.into());
    raw.parse().map_err(|e| format!("SWITCHBOARD_ADDR {raw:?}: {e}"))
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
