//! Stateful HTTP session service for interactive exploration of colourised
//! line density plots.

pub mod app;
pub mod openapi;
pub mod session;

use std::net::SocketAddr;

pub use app::{router, AppState, ServiceConfig};
pub use session::{Action, Dataset, Snapshot, StateView};

/// Port taken from the `PORT` environment variable, else `default`.
pub fn port_from_env(default: u16) -> u16 {
    std::env::var("PORT").ok().and_then(|p| p.parse().ok()).unwrap_or(default)
}

/// Serves the API on `addr` until ctrl-c.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    let evictor = state.spawn_evictor();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    evictor.abort();
    Ok(())
}
