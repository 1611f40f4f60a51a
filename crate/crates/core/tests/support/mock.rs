//! Scripted chat-completions server for exercising the HTTP client.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

#[derive(Default)]
pub struct MockState {
    /// Statuses to return, per last user message; 200 once exhausted.
    script: Mutex<HashMap<String, VecDeque<u16>>>,
    pub calls: AtomicUsize,
    in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub auth_headers: Mutex<Vec<String>>,
    delay: Duration,
}

impl MockState {
    pub fn script(&self, prompt: &str, statuses: &[u16]) {
        self.script
            .lock()
            .unwrap()
            .insert(prompt.to_string(), statuses.iter().copied().collect());
    }
}

pub struct MockServer {
    pub addr: SocketAddr,
    pub state: Arc<MockState>,
}

impl MockServer {
    pub fn endpoint(&self) -> String {
        format!("http://{}/v1", self.addr)
    }
}

async fn completions(
    State(state): State<Arc<MockState>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    state.calls.fetch_add(1, Ordering::SeqCst);
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(now, Ordering::SeqCst);
    if let Some(h) = headers.get("authorization").and_then(|v| v.to_str().ok()) {
        state.auth_headers.lock().unwrap().push(h.to_string());
    }
    tokio::time::sleep(state.delay).await;

    let prompt = body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string();
    let status = state
        .script
        .lock()
        .unwrap()
        .get_mut(&prompt)
        .and_then(VecDeque::pop_front)
        .unwrap_or(200);
    state.in_flight.fetch_sub(1, Ordering::SeqCst);

    let code = StatusCode::from_u16(status).unwrap();
    if status != 200 {
        return (code, Json(json!({"error": {"message": format!("scripted {status}")}})));
    }
    let reply = json!({
        "choices": [{"message": {"role": "assistant", "content": format!("echo: {prompt}")}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 2, "total_tokens": 5}
    });
    (code, Json(reply))
}

/// Starts a server on an ephemeral port; each request sleeps `delay`.
pub async fn start(delay: Duration) -> MockServer {
    let state = Arc::new(MockState {
        delay,
        ..MockState::default()
    });
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    MockServer { addr, state }
}
