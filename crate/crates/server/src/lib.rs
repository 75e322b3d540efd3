pub mod api;
pub mod config;
pub mod error;
pub mod push;
pub mod seed;
pub mod views;

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;

use splitledger_core::auth::AuthConfig;
use splitledger_core::payments::MockGateway;
use splitledger_core::schema;
use splitledger_core::storage::{FileStore, FileStoreOptions, StoreError};
use splitledger_core::{Ledger, LedgerOptions};

pub use api::{router, AppState};
pub use config::{Config, StoreKind};
pub use push::PushHub;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("data directory {path} is not writable: {source}")]
    DataDirUnwritable { path: PathBuf, source: StoreError },
    #[error("startup repair failed: {0}")]
    Repair(String),
    #[error("demo seed failed: {0}")]
    Seed(anyhow::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Builds the ledger the configuration asks for and finishes any work a
/// previous crash interrupted.
pub fn open_ledger(config: &Config, hub: Arc<PushHub>) -> Result<Ledger, ServeError> {
    let gateway = MockGateway::default();
    gateway.set_delay(Duration::from_millis(config.gateway_delay_ms));
    let options = LedgerOptions {
        notifier: hub,
        gateway: Arc::new(gateway),
        auth: AuthConfig { kdf_iterations: config.kdf_iterations, ..AuthConfig::default() },
        fail_point: config.fault.map(Into::into),
        ..LedgerOptions::default()
    };
    let ledger = match config.store {
        StoreKind::Memory => Ledger::in_memory(options),
        StoreKind::File => {
            let store = FileStore::open(&config.data_dir, schema::indexes(), FileStoreOptions::default())
                .map_err(|source| ServeError::DataDirUnwritable { path: config.data_dir.clone(), source })?;
            Ledger::new(Arc::new(store), options)
        }
    };
    let report = ledger.repair().map_err(|e| ServeError::Repair(e.to_string()))?;
    if report.reapplied + report.released > 0 {
        log::warn!("repair: {} payment(s) re-applied, {} reservation(s) released", report.reapplied, report.released);
    }
    if config.seed_demo && seed::seed_demo(&ledger).map_err(ServeError::Seed)? {
        log::info!("seeded demo data");
    }
    Ok(ledger)
}

pub async fn bind(config: &Config) -> Result<TcpListener, ServeError> {
    let addr = SocketAddr::new(config.host, config.port);
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(addr),
        _ => ServeError::Io(e),
    })
}

/// Runs until SIGINT or SIGTERM, then flushes the store.
pub async fn run(config: Config) -> Result<(), ServeError> {
    let hub = Arc::new(PushHub::new());
    let ledger = {
        let config = config.clone();
        let hub = hub.clone();
        tokio::task::spawn_blocking(move || open_ledger(&config, hub)).await.expect("startup task")?
    };
    let ledger = Arc::new(ledger);
    let listener = bind(&config).await?;
    let addr = listener.local_addr()?;
    println!("splitledger listening on http://{addr} (store: {})", config.store.name());
    std::io::stdout().flush()?;

    let app = router(AppState { ledger: ledger.clone(), hub });
    axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).await?;
    log::info!("shutting down");
    ledger.flush()?;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}
