use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use textrich_core::artifact::to_jsonl;
use textrich_core::artifact::RunManifest;
use textrich_core::config::LlmSettings;
use textrich_core::llmclient::{LlmConfig, ReplayBackend, RetryPolicy, TranscriptEntry};
use textrich_core::{ChatBackend, ChatRequest, ChatResult, LlmClient, LlmError};

use crate::context::{write_file, Context};
use crate::LlmArgs;

pub enum AnyBackend {
    Live(LlmClient),
    Replay(ReplayBackend),
}

impl ChatBackend for AnyBackend {
    async fn chat(&self, req: ChatRequest) -> Result<ChatResult, LlmError> {
        match self {
            AnyBackend::Live(c) => c.chat(req).await,
            AnyBackend::Replay(r) => r.chat(req).await,
        }
    }
}

/// Keeps every completion that passes through, for the transcript file.
pub struct Recorder<'a, B> {
    inner: &'a B,
    log: Mutex<Vec<TranscriptEntry>>,
}

impl<'a, B: ChatBackend> Recorder<'a, B> {
    pub fn new(inner: &'a B) -> Self {
        Recorder {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Entries sorted by request id, independent of completion order.
    pub fn into_entries(self) -> Vec<TranscriptEntry> {
        let mut v = self.log.into_inner().unwrap_or_else(|p| p.into_inner());
        v.sort_by(|a, b| a.request_id.cmp(&b.request_id));
        v
    }
}

impl<B: ChatBackend> ChatBackend for Recorder<'_, B> {
    async fn chat(&self, req: ChatRequest) -> Result<ChatResult, LlmError> {
        let res = self.inner.chat(req).await?;
        self.log
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(TranscriptEntry {
                request_id: res.request_id.clone(),
                text: res.text.clone(),
            });
        Ok(res)
    }
}

pub struct Llm {
    pub backend: AnyBackend,
    pub model: String,
    transcript_out: Option<PathBuf>,
}

fn live_config(s: &LlmSettings, audit: PathBuf) -> Result<LlmConfig, LlmError> {
    let mut cfg = LlmConfig::from_env_vars(&s.endpoint_env, &s.api_key_env, &s.model_env)?;
    if std::env::var(&s.model_env).map_or(true, |m| m.is_empty()) {
        cfg.model = s.model.clone();
    }
    cfg.timeout = Duration::from_secs(s.timeout_s);
    cfg.retry = RetryPolicy {
        max_attempts: s.max_attempts,
        base_backoff: Duration::from_millis(s.base_backoff_ms),
        max_backoff: Duration::from_millis(s.max_backoff_ms),
        jitter: s.jitter,
    };
    cfg.budget = s.budget;
    cfg.audit_path = Some(audit);
    Ok(cfg)
}

impl Llm {
    /// Replay when `--replay` is given; otherwise a live client configured
    /// from the environment, auditing into `<out>/<stage>.audit.jsonl`.
    pub fn open(
        ctx: &Context,
        args: &LlmArgs,
        stage: &str,
        out: &Path,
        manifest: &mut RunManifest,
    ) -> anyhow::Result<Self> {
        let s = &ctx.config.llm;
        match &args.replay {
            Some(path) => {
                manifest.input(path)?;
                manifest.param("llm_mode", "replay");
                Ok(Llm {
                    backend: AnyBackend::Replay(ReplayBackend::load(path)?),
                    model: s.model.clone(),
                    transcript_out: args.transcript_out.clone(),
                })
            }
            None => {
                let cfg = live_config(s, out.join(format!("{stage}.audit.jsonl")))?;
                manifest.param("llm_mode", "live");
                manifest.param("llm_endpoint_env", &s.endpoint_env);
                let client = LlmClient::new(cfg)?;
                let model = client.model().to_string();
                Ok(Llm {
                    backend: AnyBackend::Live(client),
                    model,
                    transcript_out: Some(
                        args.transcript_out
                            .clone()
                            .unwrap_or_else(|| out.join(format!("{stage}.transcript.jsonl"))),
                    ),
                })
            }
        }
    }

    pub fn record(&self, entries: &[TranscriptEntry], manifest: &mut RunManifest) -> anyhow::Result<()> {
        let Some(path) = &self.transcript_out else {
            return Ok(());
        };
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("transcript.jsonl");
        write_file(dir, name, &to_jsonl(entries), manifest)?;
        if let AnyBackend::Live(c) = &self.backend {
            manifest.count("http_attempts", c.requests_sent());
        }
        Ok(())
    }
}

pub fn block_on<F: Future>(ctx: &Context, fut: F) -> anyhow::Result<F::Output> {
    let mut b = tokio::runtime::Builder::new_multi_thread();
    b.enable_all();
    if let Some(n) = ctx.jobs {
        b.worker_threads(n);
    }
    Ok(b.build()?.block_on(fut))
}
