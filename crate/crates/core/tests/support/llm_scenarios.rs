//! Client behaviours against the scripted server. Each returns a description
//! of the first violated expectation.

use std::sync::atomic::Ordering;
use std::time::Duration;

use textrich_core::llmclient::{
    batch_chat, ChatBackend, ChatMessage, ChatRequest, LlmClient, LlmConfig, LlmError, RetryPolicy,
};

use super::mock::{self, MockServer};

pub const SECRET: &str = "sk-test-SECRET-9f8e7d";

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn request(id: &str, prompt: &str) -> ChatRequest {
    ChatRequest {
        model: "mock-model".into(),
        messages: vec![ChatMessage::system("sys"), ChatMessage::user(prompt)],
        temperature: 0.2,
        max_tokens: Some(64),
        request_id: id.into(),
    }
}

fn client(server: &MockServer, budget: Option<u64>, audit: Option<std::path::PathBuf>) -> LlmClient {
    let mut cfg = LlmConfig::new(server.endpoint());
    cfg.api_key = Some(SECRET.into());
    cfg.model = "mock-model".into();
    cfg.timeout = Duration::from_secs(10);
    cfg.retry = RetryPolicy {
        max_attempts: 4,
        base_backoff: Duration::from_millis(10),
        max_backoff: Duration::from_millis(200),
        jitter: 0.2,
    };
    cfg.budget = budget;
    cfg.audit_path = audit;
    LlmClient::new(cfg).unwrap()
}

pub async fn first_try_success() -> Result<(), String> {
    let server = mock::start(Duration::ZERO).await;
    let c = client(&server, None, None);
    let r = c.chat(request("r1", "hello")).await.map_err(|e| e.to_string())?;
    ensure(r.text == "echo: hello", || format!("text {:?}", r.text))?;
    ensure(r.attempts == 1 && r.backoffs_ms.is_empty(), || {
        format!("attempts {}", r.attempts)
    })?;
    ensure(r.usage.map(|u| u.total_tokens) == Some(5), || "usage not parsed".into())?;
    let auth = server.state.auth_headers.lock().unwrap().clone();
    ensure(auth == [format!("Bearer {SECRET}")], || {
        format!("auth headers {auth:?}")
    })
}

pub async fn retries_transient_statuses() -> Result<(), String> {
    let server = mock::start(Duration::ZERO).await;
    server.state.script("flaky", &[429, 429]);
    server.state.script("broken", &[503]);
    let c = client(&server, None, None);
    let r = c.chat(request("r2", "flaky")).await.map_err(|e| e.to_string())?;
    ensure(r.attempts == 3, || format!("attempts {}", r.attempts))?;
    ensure(r.backoffs_ms.len() == 2, || format!("backoffs {:?}", r.backoffs_ms))?;
    ensure(r.backoffs_ms.windows(2).all(|w| w[0] <= w[1]), || {
        format!("backoffs decrease {:?}", r.backoffs_ms)
    })?;
    let r = c.chat(request("r3", "broken")).await.map_err(|e| e.to_string())?;
    ensure(r.attempts == 2, || format!("attempts after 503: {}", r.attempts))?;

    server.state.script("down", &[500, 500, 500, 500, 500]);
    match c.chat(request("r4", "down")).await {
        Err(LlmError::Exhausted { attempts: 4, .. }) => Ok(()),
        other => Err(format!("expected exhaustion after 4 attempts, got {other:?}")),
    }
}

pub async fn permanent_errors_not_retried() -> Result<(), String> {
    let server = mock::start(Duration::ZERO).await;
    server.state.script("bad", &[400]);
    let c = client(&server, None, None);
    match c.chat(request("r5", "bad")).await {
        Err(LlmError::Permanent { status: 400, .. }) => {}
        other => return Err(format!("expected permanent 400, got {other:?}")),
    }
    ensure(server.state.calls.load(Ordering::SeqCst) == 1, || {
        "400 was retried".into()
    })
}

pub async fn order_and_concurrency_ceiling() -> Result<(), String> {
    for ceiling in [1usize, 4] {
        let server = mock::start(Duration::from_millis(40)).await;
        let c = client(&server, None, None);
        let reqs: Vec<ChatRequest> = (0..10).map(|i| request(&format!("q{i}"), &format!("p{i}"))).collect();
        let out = batch_chat(&c, reqs, ceiling).await;
        for (i, r) in out.iter().enumerate() {
            let r = r.as_ref().map_err(|e| e.to_string())?;
            ensure(
                r.request_id == format!("q{i}") && r.text == format!("echo: p{i}"),
                || format!("result {i} out of order: {}", r.request_id),
            )?;
        }
        let peak = server.state.max_in_flight.load(Ordering::SeqCst);
        ensure(peak <= ceiling, || format!("peak {peak} above ceiling {ceiling}"))?;
        if ceiling > 1 {
            ensure(peak > 1, || "requests never overlapped".into())?;
        }
    }
    Ok(())
}

pub async fn failures_stay_per_item() -> Result<(), String> {
    let server = mock::start(Duration::ZERO).await;
    server.state.script("p2", &[404]);
    let c = client(&server, None, None);
    let reqs: Vec<ChatRequest> = (0..5).map(|i| request(&format!("q{i}"), &format!("p{i}"))).collect();
    let out = batch_chat(&c, reqs, 3).await;
    let failed: Vec<usize> = out
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_err())
        .map(|(i, _)| i)
        .collect();
    ensure(failed == [2], || format!("failed items {failed:?}"))
}

pub async fn budget_stops_sending() -> Result<(), String> {
    let server = mock::start(Duration::ZERO).await;
    let c = client(&server, Some(3), None);
    let reqs: Vec<ChatRequest> = (0..5).map(|i| request(&format!("q{i}"), &format!("p{i}"))).collect();
    let out = batch_chat(&c, reqs, 1).await;
    let ok = out.iter().filter(|r| r.is_ok()).count();
    let over = out
        .iter()
        .filter(|r| matches!(r, Err(LlmError::BudgetExceeded { budget: 3 })))
        .count();
    ensure(ok == 3 && over == 2, || format!("ok {ok}, over budget {over}"))?;
    let calls = server.state.calls.load(Ordering::SeqCst);
    ensure(calls == 3 && c.requests_sent() == 3, || {
        format!("server saw {calls} calls")
    })
}

pub async fn secret_never_logged() -> Result<(), String> {
    let server = mock::start(Duration::ZERO).await;
    // The server echoes prompts, so a prompt containing the key would leak
    // through the response body if redaction were missing.
    server.state.script(&format!("leak {SECRET}"), &[500, 401]);
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let c = client(&server, None, Some(audit.clone()));
    c.chat(request("r6", "hello")).await.map_err(|e| e.to_string())?;
    let err = c.chat(request("r7", &format!("leak {SECRET}"))).await.unwrap_err();
    ensure(!err.to_string().contains(SECRET), || "key in error message".into())?;
    ensure(!format!("{c:?}").contains(SECRET), || "key in Debug output".into())?;
    let log = std::fs::read_to_string(&audit).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    ensure(lines.len() == 3, || format!("{} audit lines", lines.len()))?;
    ensure(!log.contains(SECRET), || "key in audit log".into())?;
    for l in &lines {
        for field in [
            "request_id",
            "attempt",
            "model",
            "temperature",
            "messages",
            "status",
            "latency_ms",
        ] {
            ensure(l.get(field).is_some(), || format!("audit line missing {field}"))?;
        }
    }
    Ok(())
}
