//! OpenAI-compatible chat-completion client.
//!
//! Retries rate limits, server errors and timeouts with capped exponential
//! backoff. Every HTTP attempt is appended to an optional JSONL audit log,
//! and a per-run request budget stops spending before it is exceeded.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::future::Future;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const ENV_ENDPOINT: &str = "TEXTRICH_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "TEXTRICH_LLM_API_KEY";
pub const ENV_MODEL: &str = "TEXTRICH_LLM_MODEL";
pub const DEFAULT_MODEL: &str = "gpt-4-0314";

const REDACTED: &str = "[REDACTED]";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    /// A 4xx other than 429. Not retried.
    #[error("request {request_id}: HTTP {status}: {body}")]
    Permanent {
        request_id: String,
        status: u16,
        body: String,
    },

    #[error("request {request_id}: gave up after {attempts} attempts: {last}")]
    Exhausted {
        request_id: String,
        attempts: u32,
        last: String,
    },

    #[error("request {request_id}: empty completion")]
    EmptyResponse { request_id: String },

    #[error("request {request_id}: malformed response: {message}")]
    Malformed { request_id: String, message: String },

    #[error("request budget of {budget} exhausted")]
    BudgetExceeded { budget: u64 },

    #[error("no recorded response for request {0}")]
    NotRecorded(String),

    #[error("audit log: {0}")]
    Audit(String),
}

impl LlmError {
    pub fn is_validation(&self) -> bool {
        matches!(self, LlmError::InvalidRequest(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemperatureProfile {
    pub train_gen: f64,
    pub eval_gen: f64,
    pub judge: f64,
}

impl Default for TemperatureProfile {
    fn default() -> Self {
        TemperatureProfile {
            train_gen: 1.0,
            eval_gen: 0.7,
            judge: 0.2,
        }
    }
}

impl TemperatureProfile {
    pub fn validate(&self) -> Result<(), LlmError> {
        for (name, t) in [
            ("train_gen", self.train_gen),
            ("eval_gen", self.eval_gen),
            ("judge", self.judge),
        ] {
            if !(t >= 0.0) {
                return Err(LlmError::InvalidRequest(format!(
                    "temperature {name} = {t} is negative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub request_id: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| LlmError::InvalidRequest(format!("{}: no messages", self.request_id)))?;
        if first.role == Role::Assistant {
            return Err(LlmError::InvalidRequest(format!(
                "{}: first message must be system or user",
                self.request_id
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "{}: temperature {} is negative",
                self.request_id, self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResult {
    pub request_id: String,
    pub text: String,
    pub finish_reason: Option<String>,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
    pub attempts: u32,
    /// Sleep before each retry, in order.
    pub backoffs_ms: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
    /// Relative jitter amplitude; 0.2 means ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_backoff: Duration::from_secs(2),
            max_backoff: Duration::from_secs(60),
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based). Jitter is a pure function
    /// of `(request_id, retry)`, so schedules replay exactly. With doubling
    /// and jitter ≤ 1/3 the sequence never decreases.
    pub fn backoff(&self, request_id: &str, retry: u32) -> Duration {
        let nominal = self.base_backoff.as_secs_f64() * 2f64.powi(retry.saturating_sub(1) as i32);
        let u = unit_hash(request_id, retry);
        let factor = 1.0 + self.jitter * (2.0 * u - 1.0);
        Duration::from_secs_f64((nominal * factor).min(self.max_backoff.as_secs_f64()))
    }
}

fn unit_hash(key: &str, n: u32) -> f64 {
    // FNV-1a, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes().chain(n.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Anything that can answer a chat request.
pub trait ChatBackend: Sync {
    fn chat(&self, req: ChatRequest) -> impl Future<Output = Result<ChatResult, LlmError>> + Send;
}

/// Runs requests with at most `max_in_flight` outstanding; results keep input
/// order and failures stay per item.
pub async fn batch_chat<B: ChatBackend>(
    backend: &B,
    reqs: Vec<ChatRequest>,
    max_in_flight: usize,
) -> Vec<Result<ChatResult, LlmError>> {
    stream::iter(reqs)
        .map(|r| backend.chat(r))
        .buffered(max_in_flight.max(1))
        .collect()
        .await
}

#[derive(Debug, Clone)]
pub struct LlmConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Maximum HTTP attempts for the lifetime of the client.
    pub budget: Option<u64>,
    pub audit_path: Option<PathBuf>,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        LlmConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: DEFAULT_MODEL.to_string(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            budget: None,
            audit_path: None,
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Self::from_env_vars(ENV_ENDPOINT, ENV_API_KEY, ENV_MODEL)
    }

    pub fn from_env_vars(endpoint_var: &str, key_var: &str, model_var: &str) -> Result<Self, LlmError> {
        let endpoint = std::env::var(endpoint_var)
            .map_err(|_| LlmError::Config(format!("environment variable {endpoint_var} is not set")))?;
        let mut cfg = LlmConfig::new(endpoint);
        cfg.api_key = std::env::var(key_var).ok().filter(|k| !k.is_empty());
        if let Ok(model) = std::env::var(model_var) {
            if !model.is_empty() {
                cfg.model = model;
            }
        }
        Ok(cfg)
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Serialize)]
struct AuditLine<'a> {
    request_id: &'a str,
    attempt: u32,
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
    status: Option<u16>,
    outcome: &'a str,
    latency_ms: u64,
    response: Option<&'a str>,
    error: Option<&'a str>,
}

enum Attempt {
    Done(ChatResult),
    Retry(String),
    Fail(LlmError),
}

/// HTTP backend. Shareable across tasks.
pub struct LlmClient {
    http: reqwest::Client,
    cfg: LlmConfig,
    url: String,
    sent: AtomicU64,
    audit: Option<Mutex<File>>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("url", &self.url)
            .field("model", &self.cfg.model)
            .field("sent", &self.sent.load(Ordering::Relaxed))
            .finish()
    }
}

impl LlmClient {
    pub fn new(cfg: LlmConfig) -> Result<Self, LlmError> {
        let http = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        let audit = match &cfg.audit_path {
            Some(p) => Some(Mutex::new(open_append(p)?)),
            None => None,
        };
        Ok(LlmClient {
            http,
            url: cfg.url(),
            cfg,
            sent: AtomicU64::new(0),
            audit,
        })
    }

    pub fn model(&self) -> &str {
        &self.cfg.model
    }

    /// HTTP attempts made so far.
    pub fn requests_sent(&self) -> u64 {
        self.sent.load(Ordering::SeqCst)
    }

    fn redact(&self, s: &str) -> String {
        match &self.cfg.api_key {
            Some(k) if !k.is_empty() => s.replace(k.as_str(), REDACTED),
            _ => s.to_string(),
        }
    }

    fn reserve_attempt(&self) -> Result<(), LlmError> {
        let Some(budget) = self.cfg.budget else {
            self.sent.fetch_add(1, Ordering::SeqCst);
            return Ok(());
        };
        self.sent
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < budget).then_some(n + 1))
            .map(|_| ())
            .map_err(|_| LlmError::BudgetExceeded { budget })
    }

    fn audit(&self, line: &AuditLine<'_>) -> Result<(), LlmError> {
        let Some(file) = &self.audit else {
            return Ok(());
        };
        let text = serde_json::to_string(line).map_err(|e| LlmError::Audit(e.to_string()))?;
        let mut text = self.redact(&text);
        text.push('\n');
        let mut f = file.lock().map_err(|_| LlmError::Audit("audit lock poisoned".into()))?;
        f.write_all(text.as_bytes()).map_err(|e| LlmError::Audit(e.to_string()))
    }

    async fn attempt(&self, req: &ChatRequest, attempt: u32, body: &serde_json::Value) -> Attempt {
        let start = Instant::now();
        let mut builder = self.http.post(&self.url).json(body);
        if let Some(key) = &self.cfg.api_key {
            builder = builder.bearer_auth(key);
        }
        let sent = builder.send().await;
        let elapsed = start.elapsed().as_millis() as u64;
        let mut log = AuditLine {
            request_id: &req.request_id,
            attempt,
            model: &req.model,
            temperature: req.temperature,
            messages: &req.messages,
            status: None,
            outcome: "",
            latency_ms: elapsed,
            response: None,
            error: None,
        };
        let resp = match sent {
            Ok(r) => r,
            Err(e) => {
                let msg = self.redact(&e.to_string());
                log.outcome = "retry";
                log.error = Some(&msg);
                if let Err(a) = self.audit(&log) {
                    return Attempt::Fail(a);
                }
                // Connection failures and timeouts are both transient.
                return Attempt::Retry(msg);
            }
        };
        let status = resp.status();
        log.status = Some(status.as_u16());
        let text = match resp.text().await {
            Ok(t) => self.redact(&t),
            Err(e) => {
                let msg = self.redact(&e.to_string());
                log.outcome = "retry";
                log.error = Some(&msg);
                if let Err(a) = self.audit(&log) {
                    return Attempt::Fail(a);
                }
                return Attempt::Retry(msg);
            }
        };
        log.latency_ms = start.elapsed().as_millis() as u64;
        log.response = Some(&text);

        let outcome = if status.as_u16() == 429 || status.is_server_error() {
            Attempt::Retry(format!("HTTP {}", status.as_u16()))
        } else if !status.is_success() {
            Attempt::Fail(LlmError::Permanent {
                request_id: req.request_id.clone(),
                status: status.as_u16(),
                body: truncate(&text, 500),
            })
        } else {
            match parse_completion(&text) {
                Ok((content, finish_reason, usage)) if !content.trim().is_empty() => Attempt::Done(ChatResult {
                    request_id: req.request_id.clone(),
                    text: content,
                    finish_reason,
                    usage,
                    latency_ms: log.latency_ms,
                    attempts: attempt,
                    backoffs_ms: Vec::new(),
                }),
                Ok(_) => Attempt::Fail(LlmError::EmptyResponse {
                    request_id: req.request_id.clone(),
                }),
                Err(message) => Attempt::Fail(LlmError::Malformed {
                    request_id: req.request_id.clone(),
                    message,
                }),
            }
        };
        let err_text = match &outcome {
            Attempt::Fail(e) => Some(self.redact(&e.to_string())),
            Attempt::Retry(m) => Some(m.clone()),
            Attempt::Done(_) => None,
        };
        log.outcome = match outcome {
            Attempt::Done(_) => "ok",
            Attempt::Retry(_) => "retry",
            Attempt::Fail(_) => "error",
        };
        log.error = err_text.as_deref();
        if let Err(a) = self.audit(&log) {
            return Attempt::Fail(a);
        }
        outcome
    }

    async fn chat_inner(&self, req: ChatRequest) -> Result<ChatResult, LlmError> {
        req.validate()?;
        let mut body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
        });
        if let Some(m) = req.max_tokens {
            body["max_tokens"] = json!(m);
        }
        let policy = self.cfg.retry;
        let mut backoffs = Vec::new();
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts.max(1) {
            if attempt > 1 {
                let delay = policy.backoff(&req.request_id, attempt - 1);
                backoffs.push(delay.as_millis() as u64);
                tokio::time::sleep(delay).await;
            }
            self.reserve_attempt()?;
            match self.attempt(&req, attempt, &body).await {
                Attempt::Done(mut r) => {
                    r.backoffs_ms = backoffs;
                    return Ok(r);
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    tracing::debug!(request_id = %req.request_id, attempt, error = %msg, "retrying");
                    last = msg;
                }
            }
        }
        Err(LlmError::Exhausted {
            request_id: req.request_id,
            attempts: policy.max_attempts.max(1),
            last,
        })
    }
}

impl ChatBackend for LlmClient {
    fn chat(&self, req: ChatRequest) -> impl Future<Output = Result<ChatResult, LlmError>> + Send {
        self.chat_inner(req)
    }
}

fn open_append(path: &Path) -> Result<File, LlmError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| LlmError::Audit(format!("{}: {e}", path.display())))
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Option<ChoiceMessage>,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

fn parse_completion(text: &str) -> Result<(String, Option<String>, Option<Usage>), String> {
    let body: CompletionBody = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let choice = body.choices.into_iter().next().ok_or("no choices")?;
    let content = choice.message.and_then(|m| m.content).unwrap_or_default();
    Ok((content, choice.finish_reason, body.usage))
}

/// One recorded completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_id: String,
    pub text: String,
}

/// Answers from a recorded transcript, keyed by request id. No network.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        ReplayBackend {
            responses: entries.into_iter().map(|e| (e.request_id, e.text)).collect(),
        }
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        Ok(Self::new(crate::artifact::read_jsonl::<TranscriptEntry>(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn chat(&self, req: ChatRequest) -> impl Future<Output = Result<ChatResult, LlmError>> + Send {
        let out = req.validate().and_then(|_| match self.responses.get(&req.request_id) {
            Some(text) if text.trim().is_empty() => Err(LlmError::EmptyResponse {
                request_id: req.request_id.clone(),
            }),
            Some(text) => Ok(ChatResult {
                request_id: req.request_id.clone(),
                text: text.clone(),
                finish_reason: Some("stop".into()),
                usage: None,
                latency_ms: 0,
                attempts: 1,
                backoffs_ms: Vec::new(),
            }),
            None => Err(LlmError::NotRecorded(req.request_id.clone())),
        });
        std::future::ready(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user("hi")],
            temperature: 0.2,
            max_tokens: None,
            request_id: id.into(),
        }
    }

    #[test]
    fn temperature_defaults() {
        let t = TemperatureProfile::default();
        assert_eq!((t.train_gen, t.eval_gen, t.judge), (1.0, 0.7, 0.2));
        t.validate().unwrap();
    }

    #[test]
    fn retry_defaults() {
        let p = RetryPolicy::default();
        assert_eq!(p.max_attempts, 5);
        assert_eq!(p.base_backoff, Duration::from_secs(2));
        assert_eq!(p.jitter, 0.2);
    }

    #[test]
    fn backoff_within_jitter_and_monotone() {
        let p = RetryPolicy::default();
        for id in ["a", "b", "request-17", ""] {
            let mut prev = Duration::ZERO;
            for retry in 1..=10 {
                let d = p.backoff(id, retry);
                let nominal = 2.0 * 2f64.powi(retry as i32 - 1);
                let s = d.as_secs_f64();
                assert!(s <= 60.0 + 1e-9);
                if nominal * 1.2 <= 60.0 {
                    assert!(
                        s >= nominal * 0.8 - 1e-9 && s <= nominal * 1.2 + 1e-9,
                        "{id} {retry} {s}"
                    );
                }
                assert!(d >= prev);
                prev = d;
            }
            assert_eq!(p.backoff(id, 3), p.backoff(id, 3));
        }
    }

    #[test]
    fn request_validation() {
        let mut r = req("x");
        r.validate().unwrap();
        r.messages.clear();
        assert!(r.validate().is_err());
        let mut r = req("x");
        r.messages.insert(0, ChatMessage::assistant("no"));
        assert!(r.validate().is_err());
        let mut r = req("x");
        r.temperature = -0.1;
        assert!(r.validate().is_err());
    }

    #[test]
    fn endpoint_url() {
        assert_eq!(LlmConfig::new("http://h/v1/").url(), "http://h/v1/chat/completions");
        assert_eq!(
            LlmConfig::new("http://h/v1/chat/completions").url(),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn completion_parsing() {
        let (t, f, u) = parse_completion(
            r#"{"choices":[{"message":{"role":"assistant","content":"hi"},"finish_reason":"stop"}],"usage":{"prompt_tokens":3,"completion_tokens":1,"total_tokens":4}}"#,
        )
        .unwrap();
        assert_eq!((t.as_str(), f.as_deref()), ("hi", Some("stop")));
        assert_eq!(u.unwrap().total_tokens, 4);
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
        assert!(parse_completion("nope").is_err());
    }

    #[tokio::test]
    async fn replay_backend() {
        let b = ReplayBackend::new([
            TranscriptEntry {
                request_id: "a".into(),
                text: "A".into(),
            },
            TranscriptEntry {
                request_id: "e".into(),
                text: " ".into(),
            },
        ]);
        assert_eq!(b.chat(req("a")).await.unwrap().text, "A");
        assert!(matches!(b.chat(req("e")).await, Err(LlmError::EmptyResponse { .. })));
        assert!(matches!(b.chat(req("z")).await, Err(LlmError::NotRecorded(_))));
        let out = batch_chat(&b, vec![req("z"), req("a")], 2).await;
        assert!(out[0].is_err() && out[1].is_ok());
    }
}
