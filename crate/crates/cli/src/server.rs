//! Line-delimited JSON over TCP and the same requests over HTTP POST.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use p2c_core::service::Service;
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};

fn status_for(response: &Value) -> StatusCode {
    match response["error"].as_str() {
        None => StatusCode::OK,
        Some("not_found") => StatusCode::NOT_FOUND,
        Some("bad_request" | "unsegmentable") => StatusCode::BAD_REQUEST,
        Some("unsupported" | "empty_context") => StatusCode::UNPROCESSABLE_ENTITY,
        Some(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn answer(svc: Arc<Service>, request: String) -> Value {
    tokio::task::spawn_blocking(move || svc.handle_json(&request))
        .await
        .unwrap_or_else(|e| json!({"ok": false, "error": "internal", "message": e.to_string()}))
}

async fn api(State(svc): State<Arc<Service>>, body: String) -> (StatusCode, Json<Value>) {
    let v = answer(svc, body).await;
    (status_for(&v), Json(v))
}

async fn session_dump(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> (StatusCode, Json<Value>) {
    let v = answer(svc, json!({"op": "dump", "session": id}).to_string()).await;
    (status_for(&v), Json(v))
}

pub fn router(svc: Arc<Service>, ui: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/api", post(api))
        .route("/api/session/{id}", get(session_dump))
        .with_state(svc);
    match ui {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

async fn serve_line_client(svc: Arc<Service>, stream: TcpStream) -> std::io::Result<()> {
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let mut out = answer(svc.clone(), line).await.to_string();
        out.push('\n');
        write.write_all(out.as_bytes()).await?;
    }
    Ok(())
}

pub async fn serve_lines(svc: Arc<Service>, listener: TcpListener) -> Result<()> {
    loop {
        let (stream, _) = listener.accept().await?;
        let svc = svc.clone();
        tokio::spawn(async move {
            let _ = serve_line_client(svc, stream).await;
        });
    }
}

pub async fn run(svc: Arc<Service>, tcp: SocketAddr, http: SocketAddr, ui: Option<PathBuf>) -> Result<()> {
    let lines = TcpListener::bind(tcp).await?;
    let web = TcpListener::bind(http).await?;
    eprintln!("json lines on {}, http on {}", lines.local_addr()?, web.local_addr()?);
    let app = router(svc.clone(), ui);
    tokio::select! {
        r = serve_lines(svc, lines) => r,
        r = axum::serve(web, app) => r.map_err(Into::into),
        _ = tokio::signal::ctrl_c() => Ok(()),
    }
}
