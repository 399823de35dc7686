use std::net::SocketAddr;

use figac_service::{router, AppState};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let port: u16 = match std::env::var("FIGAC_PORT") {
        Ok(p) => p.parse().map_err(|e| format!("FIGAC_PORT: {e}"))?,
        Err(_) => 8080,
    };
    let data_dir = std::env::var("FIGAC_DATA_DIR").unwrap_or_else(|_| "./figac-data".to_string());
    let state = AppState::open(&data_dir)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {addr}, data in {data_dir}");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
