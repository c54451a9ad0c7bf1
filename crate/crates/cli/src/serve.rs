use std::sync::Arc;

use colmatch_service::{SessionStore, StoreConfig};

use crate::{CliError, CliResult, ServeArgs};

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
        _ = ctrl_c => {}
        _ = terminate => {}
    }
}

pub fn run(args: ServeArgs) -> CliResult<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.address)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {}: {e}", args.address)))?;
        let config = StoreConfig {
            session_dir: args.session_dir.clone(),
            ..StoreConfig::default()
        };
        let (store, failures) = tokio::task::spawn_blocking(move || SessionStore::open(config))
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        for (dir, e) in &failures {
            eprintln!("colmatch: skipped session {dir}: {e}");
        }
        let local = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        eprintln!("colmatch: {} sessions loaded; listening on http://{local}", store.len());
        colmatch_service::serve(listener, Arc::new(store), shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(format!("server error: {e}")))?;
        // Every mutation is written through, so nothing is pending here.
        eprintln!("colmatch: shut down");
        Ok(())
    })
}
