use clap::Args;
use nl2api_core::config::Config;
use nl2api_core::runtime::Runtime;
use nl2api_core::service::Service;

use crate::failure::Failure;
use crate::Context;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address; defaults to `service.bind`.
    #[arg(long)]
    bind: Option<String>,
}

pub async fn run(ctx: Context, args: ServeArgs) -> Result<(), Failure> {
    let bind = args.bind.unwrap_or_else(|| ctx.config.service.bind.clone());
    let service = Service::new(Runtime::build(ctx.config.clone(), ctx.mode).await?);
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| Failure::general(format!("cannot bind {bind}: {e}")))?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr} ({} mode)", ctx.mode);

    #[cfg(unix)]
    if let Some(path) = ctx.config_path.clone() {
        tokio::spawn(reload_on_hangup(service.clone(), path, ctx.mode));
    }

    axum::serve(listener, service.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// SIGHUP re-reads the config file; a broken config keeps the running one.
#[cfg(unix)]
async fn reload_on_hangup(service: Service, path: std::path::PathBuf, mode: nl2api_core::executor::Mode) {
    use tokio::signal::unix::{signal, SignalKind};
    let Ok(mut hangup) = signal(SignalKind::hangup()) else {
        tracing::warn!("cannot install SIGHUP handler; reload disabled");
        return;
    };
    while hangup.recv().await.is_some() {
        let built = match Config::load(&path) {
            Ok(config) => Runtime::build(config, mode).await.map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        };
        match built {
            Ok(rt) => {
                service.reload(rt);
                tracing::info!(path = %path.display(), "configuration reloaded");
            }
            Err(e) => tracing::error!(error = %e, "reload failed; keeping previous configuration"),
        }
    }
}
