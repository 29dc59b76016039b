use swallow_service::{AppState, ServiceConfig};

use crate::{required, CliError, CliResult, ServeArgs};

pub fn serve(mut a: ServeArgs) -> CliResult<()> {
    let host = a.host.get_or_insert_with(|| "127.0.0.1".into()).clone();
    let port = *a.port.get_or_insert(8080);
    let cfg = ServiceConfig {
        data_dir: required(&a.data_dir, "data-dir")?,
        model_path: a.model.clone(),
        live_speed: *a.live_speed.get_or_insert(1.0),
    };
    if !(cfg.live_speed > 0.0 && cfg.live_speed.is_finite()) {
        return Err(CliError::Validation(format!("live speed must be positive, got {}", cfg.live_speed)));
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start runtime: {e}")))?;
    rt.block_on(async move {
        let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
        let (state, report) = AppState::open(&cfg)?;
        eprintln!(
            "store {}: {} sessions; dropped {} torn index bytes, {} entries without blob, {} stray files",
            cfg.data_dir.display(),
            report.sessions,
            report.torn_bytes_dropped,
            report.entries_without_blob,
            report.orphan_files_removed
        );
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| CliError::io(format!("cannot listen on {host}:{port}"), e))?;
        let addr = listener.local_addr().map_err(|e| CliError::io("listener", e))?;
        // Tests and scripts read the bound port from this line.
        println!("listening on http://{addr}");
        use std::io::Write;
        let _ = std::io::stdout().flush();
        swallow_service::serve(listener, state, shutdown_signal())
            .await
            .map_err(|e| CliError::io("server", e))?;
        eprintln!("shut down cleanly");
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
