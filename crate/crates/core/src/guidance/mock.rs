//! Reference guidance server for tests and local experiments.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use tokio::sync::oneshot;

use super::remote::{encode_raster, WireRequest, WireResponse};

#[derive(Clone, Debug, PartialEq)]
pub enum MockMode {
    /// Zero gradient of the request's shape.
    Zeros,
    /// The request image sent back verbatim as the gradient.
    Echo,
    /// A zero raster one column wider than requested.
    WrongResolution,
    /// Echo after sleeping on every request.
    Delay(Duration),
    /// Echo, but sleep on the first request only.
    SlowFirst(Duration),
    /// Fixed status code and body.
    Status(u16, String),
}

#[derive(Clone)]
struct MockState {
    mode: MockMode,
    hits: Arc<AtomicUsize>,
}

pub fn mock_router(mode: MockMode, hits: Arc<AtomicUsize>) -> Router {
    Router::new().route("/gradient", post(gradient)).with_state(MockState { mode, hits })
}

async fn gradient(State(st): State<MockState>, Json(req): Json<WireRequest>) -> Response {
    let n = st.hits.fetch_add(1, Ordering::SeqCst);
    let len = req.width * req.height * req.channels;
    let reply = |gradient: String| Json(WireResponse { gradient, scale: 1.0 }).into_response();
    match st.mode {
        MockMode::Zeros => reply(encode_raster(&vec![0.0; len])),
        MockMode::Echo => reply(req.image),
        MockMode::WrongResolution => reply(encode_raster(&vec![0.0; (req.width + 1) * req.height * req.channels])),
        MockMode::Delay(d) => {
            tokio::time::sleep(d).await;
            reply(req.image)
        }
        MockMode::SlowFirst(d) => {
            if n == 0 {
                tokio::time::sleep(d).await;
            }
            reply(req.image)
        }
        MockMode::Status(code, body) => {
            (StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), body).into_response()
        }
    }
}

/// A mock server on a background thread, bound to an ephemeral local port.
/// Stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    hits: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl MockServer {
    pub fn start(mode: MockMode) -> std::io::Result<Self> {
        let hits = Arc::new(AtomicUsize::new(0));
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let router = mock_router(mode, hits.clone());
        std::thread::spawn(move || {
            let rt = match tokio::runtime::Builder::new_current_thread().enable_all().build() {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = addr_tx.send(Err(e));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind("127.0.0.1:0").await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = addr_tx.send(Err(e));
                        return;
                    }
                };
                let _ = addr_tx.send(listener.local_addr());
                let _ = axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await;
            });
        });
        let addr = addr_rx.recv().map_err(std::io::Error::other)??;
        Ok(Self { addr, hits, shutdown: Some(stop_tx) })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
