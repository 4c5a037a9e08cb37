//! Live session host: launch API, state snapshots, server-sent event feed,
//! per-measure audio and durable session logs.

pub mod config;
pub mod http;
pub mod log;
pub mod session;

pub use config::SessionConfig;
pub use interlock_core::trace::run_trace;
pub use session::{spawn, Assets, LaunchDocument, Session, SessionError, SessionHandle, StreamMessage};

/// Builds the session described by `config` and starts its task.
pub fn start(config: SessionConfig) -> Result<SessionHandle, SessionError> {
    let exec = interlock_core::Exec::default();
    let assets = std::sync::Arc::new(Assets::for_config(&config, exec)?);
    let log = match &config.log_path {
        Some(path) => log::SessionLog::open(path)?,
        None => log::SessionLog::in_memory(),
    };
    Ok(spawn(Session::new(config, assets, log)?))
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve(
    handle: SessionHandle,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, http::router(handle))
        .with_graceful_shutdown(shutdown)
        .await
}
