use std::net::SocketAddr;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use gridtoken_broker::HttpBroker;
use gridtoken_core::SystemClock;
use gridtoken_credstore::{http, CredStore, CredStoreSettings};

/// Credential store: keeps access tokens fresh in registered job sandboxes.
#[derive(Debug, Parser)]
#[command(name = "credstore", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8300")]
    listen: SocketAddr,
    /// Broker base URL.
    #[arg(long, env = "GETTOKEN_BROKER")]
    broker: String,
    /// Refresh a sandbox token this many seconds before it expires.
    #[arg(long, default_value_t = 600)]
    lead_time: i64,
    /// Seconds between refresh cycles.
    #[arg(long, default_value_t = 300)]
    cycle_period: i64,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let settings = CredStoreSettings {
        lead_time: args.lead_time,
        cycle_period: args.cycle_period,
        ..CredStoreSettings::default()
    };
    let store = match CredStore::new(
        Arc::new(HttpBroker::new(args.broker)),
        Arc::new(SystemClock),
        settings,
    ) {
        Ok(s) => Arc::new(s),
        Err(e) => {
            eprintln!("credstore: {e}");
            return ExitCode::from(2);
        }
    };
    let listener = match tokio::net::TcpListener::bind(args.listen).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("credstore: cannot listen on {}: {e}", args.listen);
            return ExitCode::FAILURE;
        }
    };
    let cycler = store.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(settings.cycle_period as u64));
        loop {
            tick.tick().await;
            cycler.refresh_cycle().await;
        }
    });
    match axum::serve(listener, http::router(store, None)).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("credstore: {e}");
            ExitCode::FAILURE
        }
    }
}
