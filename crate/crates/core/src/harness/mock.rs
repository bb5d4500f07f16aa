//! A scriptable OpenAI-compatible chat endpoint for tests and dry runs.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use regex::Regex;
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MockRequest {
    /// Zero-based arrival order across the server's lifetime.
    pub index: usize,
    pub model: String,
    pub prompt: String,
    pub max_tokens: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct MockReply {
    pub status: u16,
    pub content: String,
    pub delay: Duration,
}

impl MockReply {
    pub fn ok(content: impl Into<String>) -> Self {
        Self {
            status: 200,
            content: content.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            content: String::new(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

pub type Script = Arc<dyn Fn(&MockRequest) -> MockReply + Send + Sync>;

/// Replies with every needle value it can find in the prompt, so scoring
/// against it yields full marks.
pub fn oracle_script() -> Script {
    let re = Regex::new(r"(?:pass key is|magic numbers for \S+ is:) (\d+)").unwrap();
    Arc::new(move |req: &MockRequest| {
        let vals: Vec<&str> = re.captures_iter(&req.prompt).map(|c| c.get(1).unwrap().as_str()).collect();
        MockReply::ok(format!("The answer is {}.", vals.join(", ")))
    })
}

/// Always replies with `text`.
pub fn fixed_script(text: &str) -> Script {
    let text = text.to_string();
    Arc::new(move |_| MockReply::ok(text.clone()))
}

struct Shared {
    script: Script,
    token: Option<String>,
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

pub struct MockServer {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    /// Binds `127.0.0.1:port` (0 for any free port) and serves on a
    /// background thread until dropped. With `token`, requests must carry
    /// that bearer token or get 401.
    pub fn start(port: u16, script: Script, token: Option<String>) -> Result<Self> {
        let shared = Arc::new(Shared {
            script,
            token,
            requests: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        });
        let std_listener =
            std::net::TcpListener::bind(("127.0.0.1", port)).map_err(|e| Error::io(format!("127.0.0.1:{port}"), e))?;
        std_listener.set_nonblocking(true).map_err(|e| Error::io("mock listener", e))?;
        let addr = std_listener.local_addr().map_err(|e| Error::io("mock listener", e))?;
        let (tx, rx) = oneshot::channel::<()>();
        let state = shared.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("mock runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("mock listener");
                let app = Router::new()
                    .route("/v1/chat/completions", post(handle))
                    .route("/chat/completions", post(handle))
                    .with_state(state);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("mock server");
            });
        });
        Ok(Self {
            addr,
            shared,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    /// Base URL to put in an endpoint config.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak_in_flight.load(Ordering::SeqCst)
    }

    /// Blocks until the server thread exits (never, unless dropped elsewhere).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn handle(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let index = shared.requests.fetch_add(1, Ordering::SeqCst);
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    let out = respond(&shared, &headers, &body, index).await;
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    out
}

async fn respond(shared: &Shared, headers: &HeaderMap, body: &Value, index: usize) -> (StatusCode, Json<Value>) {
    if let Some(t) = &shared.token {
        let want = format!("Bearer {t}");
        if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some(want.as_str()) {
            return (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad token"})));
        }
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default().to_string();
    let req = MockRequest {
        index,
        model: body["model"].as_str().unwrap_or_default().to_string(),
        prompt,
        max_tokens: body["max_tokens"].as_u64(),
    };
    let reply = (shared.script)(&req);
    if !reply.delay.is_zero() {
        tokio::time::sleep(reply.delay).await;
    }
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    if !status.is_success() {
        return (status, Json(json!({"error": {"message": "scripted failure"}})));
    }
    let words = req.prompt.split_whitespace().count();
    (
        status,
        Json(json!({
            "id": format!("mock-{index}"),
            "object": "chat.completion",
            "model": req.model,
            "choices": [{"index": 0, "message": {"role": "assistant", "content": reply.content}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": words, "completion_tokens": reply.content.split_whitespace().count()}
        })),
    )
}
