//! HTTP service and command-line front end.

pub mod api;
pub mod cli;
pub mod config;
pub mod plots;
pub mod state;
pub mod store;
pub mod webhook;

use std::net::SocketAddr;
use std::sync::Arc;

use mhfa_core::cohort::read_bundles_jsonl;
use mhfa_core::report::FormatSpec;
use mhfa_core::Gateway;
use thiserror::Error;

use crate::api::AppState;
use crate::config::ServiceConfig;
use crate::state::BundleIndex;
use crate::store::Store;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("store: {0}")]
    Store(String),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Gateway(#[from] mhfa_core::GatewayError),
    #[error(transparent)]
    Cohort(#[from] mhfa_core::cohort::CohortError),
    #[error(transparent)]
    Synth(#[from] mhfa_core::synth::SynthError),
    #[error(transparent)]
    Report(#[from] mhfa_core::report::ReportError),
    #[error(transparent)]
    Analysis(#[from] mhfa_core::analysis::AnalysisError),
    #[error(transparent)]
    Forge(#[from] mhfa_core::forge::ForgeError),
    #[error(transparent)]
    Eval(#[from] mhfa_core::eval::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ServiceError {
    /// Short machine-readable name used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::Config(_) => "config",
            ServiceError::Store(_) => "store",
            ServiceError::Bind { .. } => "bind",
            ServiceError::Input(_) => "input",
            ServiceError::Gateway(_) => "backend",
            ServiceError::Cohort(_) => "cohort",
            ServiceError::Synth(_) => "synth",
            ServiceError::Report(_) => "report",
            ServiceError::Analysis(_) => "analysis",
            ServiceError::Forge(_) => "forge",
            ServiceError::Eval(_) => "eval",
            ServiceError::Io(_) => "io",
            ServiceError::Json(_) => "json",
        }
    }
}

/// Builds the shared application state from a config and an open gateway.
pub fn build_app(config: &ServiceConfig, gateway: Gateway) -> Result<Arc<AppState>, ServiceError> {
    let store = Store::open(&config.store_path, config.snapshot_every)?;
    let bundles = match &config.bundles_path {
        Some(p) => read_bundles_jsonl(p)?,
        None => Vec::new(),
    };
    let mut app = AppState::new(store, gateway, BundleIndex::new(bundles));
    if let Some(p) = &config.format_path {
        app.spec = FormatSpec::from_path(p)?;
    }
    app.auth_token = config.auth_token.clone();
    app.webhook_url = config.webhook_url.clone();
    app.default_local_hour = config.default_local_hour;
    Ok(Arc::new(app))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Runs the HTTP service until SIGINT/SIGTERM, then writes a final snapshot.
/// `on_ready` receives the bound address (useful with port 0).
pub async fn serve(
    config: ServiceConfig,
    gateway: Gateway,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<(), ServiceError> {
    let app = build_app(&config, gateway)?;
    let addr = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| ServiceError::Bind {
        addr: addr.clone(),
        message: e.to_string(),
    })?;
    on_ready(listener.local_addr()?);
    axum::serve(listener, api::router(app.clone()))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    app.store.lock().snapshot()?;
    log::info!("event log flushed, shutting down");
    Ok(())
}
