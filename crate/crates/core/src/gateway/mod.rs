//! Uniform access to chat-completion, token-logprob and embedding backends.
//!
//! A [`Backend`] answers one [`Request`] at a time. The [`Gateway`] wraps a
//! backend with bounded retries, a per-backend in-flight cap, an append-only
//! exchange log and idempotent dispatch: within one gateway a request that was
//! already answered is never sent again.

mod http;
mod mock;
pub mod tokenize;

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{hash_embedding, EmbeddingSpec, FnBackend, MockBackend, MockRule, ReplayBackend};

use crate::util::sha256_hex;

pub const DEFAULT_EMBEDDING_DIM: usize = 384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            max_tokens: 1024,
            temperature: 0.0,
            seed: None,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token_text: String,
    /// Natural-log probability, always `<= 0`.
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Chat {
        messages: Vec<ChatMessage>,
        params: GenParams,
    },
    Score {
        text: String,
    },
    Embed {
        text: String,
    },
}

impl Request {
    pub fn kind(&self) -> &'static str {
        match self {
            Request::Chat { .. } => "chat",
            Request::Score { .. } => "score",
            Request::Embed { .. } => "embed",
        }
    }

    /// Text that scripted backends match against: message contents joined by
    /// blank lines for chat, the raw text otherwise.
    pub fn match_text(&self) -> String {
        match self {
            Request::Chat { messages, .. } => prompt_text(messages),
            Request::Score { text } | Request::Embed { text } => text.clone(),
        }
    }

    /// Identity of the request for idempotent dispatch and replay.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("request serializes"))
    }
}

pub fn prompt_text(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Hash used by `sha256:<hex>` mock rules.
pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    sha256_hex(prompt_text(messages))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Completion { text: String, finish_reason: String },
    Logprobs { tokens: Vec<TokenLogprob> },
    Embedding { vector: Vec<f64> },
}

impl Response {
    fn kind(&self) -> &'static str {
        match self {
            Response::Completion { .. } => "completion",
            Response::Logprobs { .. } => "logprobs",
            Response::Embedding { .. } => "embedding",
        }
    }
}

/// One request/response pair as written to the exchange log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendExchange {
    pub timestamp: String,
    pub backend_id: String,
    pub request_hash: String,
    pub request: Request,
    pub response: Response,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("request timed out after {attempts} attempt(s): {message}")]
    Timeout { message: String, attempts: u32 },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response ({message}): {body}")]
    MalformedResponse { message: String, body: String },
    #[error("backend {backend} does not support {capability}; {hint}")]
    Capability {
        backend: String,
        capability: String,
        hint: String,
    },
    #[error("no mock rule matches {kind} request: {preview:?}")]
    NoScriptMatch { kind: String, preview: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Transport { .. } => "transport",
            GatewayError::Timeout { .. } => "timeout",
            GatewayError::Http { .. } => "http",
            GatewayError::MalformedResponse { .. } => "malformed_response",
            GatewayError::Capability { .. } => "capability",
            GatewayError::NoScriptMatch { .. } => "no_script_match",
            GatewayError::InvalidRequest(_) => "invalid_request",
            GatewayError::Config(_) => "config",
        }
    }

    fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport { .. } | GatewayError::Timeout { .. } => true,
            GatewayError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    fn with_attempts(self, n: u32) -> Self {
        match self {
            GatewayError::Transport { message, .. } => GatewayError::Transport {
                message,
                attempts: n,
            },
            GatewayError::Timeout { message, .. } => GatewayError::Timeout {
                message,
                attempts: n,
            },
            other => other,
        }
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn execute(&self, request: &Request) -> Result<Response, GatewayError>;
    /// Embedding dimension when known up front.
    fn embedding_dim(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
    pub inflight_cap: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(2),
            inflight_cap: 4,
        }
    }
}

impl GatewayConfig {
    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.saturating_sub(1).min(16);
        (self.base_backoff * factor).min(self.max_backoff)
    }
}

struct Limiter {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut used = self.used.lock();
        while *used >= self.cap {
            self.freed.wait(&mut used);
        }
        *used += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
    limiter: Limiter,
    log: Option<Mutex<BufWriter<File>>>,
    answered: Mutex<HashMap<String, Response>>,
    peak_inflight: Mutex<usize>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("config", &self.config)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self::from_arc(Arc::new(backend), GatewayConfig::default())
    }

    pub fn from_arc(backend: Arc<dyn Backend>, config: GatewayConfig) -> Self {
        let cap = config.inflight_cap.max(1);
        Self {
            backend,
            config,
            limiter: Limiter {
                cap,
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
            log: None,
            answered: Mutex::new(HashMap::new()),
            peak_inflight: Mutex::new(0),
        }
    }

    pub fn with_config(self, config: GatewayConfig) -> Self {
        let mut g = Self::from_arc(self.backend, config);
        g.log = self.log;
        g
    }

    /// Appends every exchange to a JSON Lines file (created if missing).
    pub fn with_exchange_log(mut self, path: &Path) -> Result<Self, GatewayError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| GatewayError::Config(e.to_string()))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        self.log = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Highest number of concurrently dispatched requests observed so far.
    pub fn peak_inflight(&self) -> usize {
        *self.peak_inflight.lock()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.backend.embedding_dim()
    }

    pub fn chat(
        &self,
        messages: &[ChatMessage],
        params: &GenParams,
    ) -> Result<Completion, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if let Some(m) = messages
            .iter()
            .find(|m| m.role != Role::System && m.content.trim().is_empty())
        {
            return Err(GatewayError::InvalidRequest(format!(
                "{} message content must be non-empty",
                m.role
            )));
        }
        if params.max_tokens < 1 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if params.temperature < 0.0 || params.temperature.is_nan() {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        let request = Request::Chat {
            messages: messages.to_vec(),
            params: params.clone(),
        };
        match self.dispatch(request)? {
            Response::Completion {
                text,
                finish_reason,
            } => Ok(Completion {
                text,
                finish_reason,
            }),
            other => Err(unexpected("completion", &other)),
        }
    }

    pub fn score_logprobs(&self, text: &str) -> Result<Vec<TokenLogprob>, GatewayError> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        match self.dispatch(Request::Score {
            text: text.to_string(),
        })? {
            Response::Logprobs { tokens } => {
                if let Some(bad) = tokens.iter().find(|t| t.logprob.is_nan() || t.logprob > 0.0) {
                    return Err(GatewayError::MalformedResponse {
                        message: "logprob must be <= 0".into(),
                        body: format!("{bad:?}"),
                    });
                }
                Ok(tokens)
            }
            other => Err(unexpected("logprobs", &other)),
        }
    }

    /// Token count of `text` under the backend tokenizer.
    pub fn count_tokens(&self, text: &str) -> Result<usize, GatewayError> {
        Ok(self.score_logprobs(text)?.len())
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        match self.dispatch(Request::Embed {
            text: text.to_string(),
        })? {
            Response::Embedding { vector } => {
                if let Some(dim) = self.backend.embedding_dim() {
                    if vector.len() != dim {
                        return Err(GatewayError::MalformedResponse {
                            message: format!("expected {dim}-dim embedding, got {}", vector.len()),
                            body: String::new(),
                        });
                    }
                }
                Ok(vector)
            }
            other => Err(unexpected("embedding", &other)),
        }
    }

    fn dispatch(&self, request: Request) -> Result<Response, GatewayError> {
        let hash = request.hash();
        let cached = self.answered.lock().get(&hash).cloned();
        let (response, latency_ms) = match cached {
            Some(r) => (r, 0),
            None => {
                let _slot = self.limiter.acquire();
                {
                    let used = *self.limiter.used.lock();
                    let mut peak = self.peak_inflight.lock();
                    *peak = (*peak).max(used);
                }
                let started = Instant::now();
                let response = self.execute_with_retry(&request)?;
                let latency = started.elapsed().as_millis() as u64;
                self.answered.lock().insert(hash.clone(), response.clone());
                (response, latency)
            }
        };
        if let Some(log) = &self.log {
            let exchange = BackendExchange {
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                backend_id: self.backend.id(),
                request_hash: hash,
                request,
                response: response.clone(),
                latency_ms,
            };
            let mut w = log.lock();
            let line = serde_json::to_string(&exchange).expect("exchange serializes");
            w.write_all(line.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| w.flush())
                .map_err(|e| GatewayError::Config(format!("exchange log: {e}")))?;
        }
        Ok(response)
    }

    fn execute_with_retry(&self, request: &Request) -> Result<Response, GatewayError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.execute(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() && attempt < self.config.max_attempts => {
                    log::debug!("attempt {attempt} failed ({e}); backing off");
                    std::thread::sleep(self.config.backoff(attempt));
                }
                Err(e) => return Err(e.with_attempts(attempt)),
            }
        }
    }
}

fn unexpected(wanted: &str, got: &Response) -> GatewayError {
    GatewayError::MalformedResponse {
        message: format!("expected {wanted} response, got {}", got.kind()),
        body: String::new(),
    }
}

/// How to reach a backend, as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    /// `mock:<script.yaml>`
    Mock(PathBuf),
    /// `replay:<exchanges.jsonl>`
    Replay(PathBuf),
    /// `http://...` or `https://...`
    Http(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = GatewayError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("mock:") {
            Ok(BackendSpec::Mock(PathBuf::from(path)))
        } else if let Some(path) = s.strip_prefix("replay:") {
            Ok(BackendSpec::Replay(PathBuf::from(path)))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(BackendSpec::Http(s.to_string()))
        } else {
            Err(GatewayError::Config(format!(
                "backend {s:?} must be mock:<script>, replay:<log> or an http(s) URL"
            )))
        }
    }
}

/// Connection settings read from the environment (`MHFA_*` variables).
#[derive(Debug, Clone, Default)]
pub struct EnvSettings {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub timeout_ms: Option<u64>,
    pub inflight_cap: Option<usize>,
    pub mock_script: Option<PathBuf>,
}

impl EnvSettings {
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Self {
            base_url: var("MHFA_BASE_URL"),
            model: var("MHFA_MODEL"),
            api_key: var("MHFA_API_KEY"),
            timeout_ms: var("MHFA_TIMEOUT_MS").and_then(|v| v.parse().ok()),
            inflight_cap: var("MHFA_INFLIGHT").and_then(|v| v.parse().ok()),
            mock_script: var("MHFA_MOCK_SCRIPT").map(PathBuf::from),
        }
    }

    /// Backend named by the environment, preferring a mock script when set.
    pub fn backend_spec(&self) -> Option<BackendSpec> {
        if let Some(p) = &self.mock_script {
            return Some(BackendSpec::Mock(p.clone()));
        }
        self.base_url.clone().map(BackendSpec::Http)
    }
}

/// Builds a gateway for `spec`, filling HTTP details from `env`.
pub fn open_gateway(spec: &BackendSpec, env: &EnvSettings) -> Result<Gateway, GatewayError> {
    let backend: Arc<dyn Backend> = match spec {
        BackendSpec::Mock(path) => Arc::new(MockBackend::from_path(path)?),
        BackendSpec::Replay(path) => Arc::new(ReplayBackend::from_path(path)?),
        BackendSpec::Http(url) => Arc::new(HttpBackend::new(HttpConfig {
            base_url: url.clone(),
            model: env.model.clone().unwrap_or_else(|| "default".into()),
            api_key: env.api_key.clone(),
            timeout: Duration::from_millis(env.timeout_ms.unwrap_or(60_000)),
            embedding_model: None,
            embedding_dim: None,
        })),
    };
    let mut config = GatewayConfig::default();
    if let Some(cap) = env.inflight_cap {
        config.inflight_cap = cap;
    }
    Ok(Gateway::from_arc(backend, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        calls: AtomicU32,
        fail_first: u32,
    }

    impl Backend for Flaky {
        fn id(&self) -> String {
            "flaky".into()
        }
        fn execute(&self, _: &Request) -> Result<Response, GatewayError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            if n <= self.fail_first {
                Err(GatewayError::Transport {
                    message: "connection reset".into(),
                    attempts: 0,
                })
            } else {
                Ok(Response::Completion {
                    text: "ok".into(),
                    finish_reason: "stop".into(),
                })
            }
        }
    }

    fn fast() -> GatewayConfig {
        GatewayConfig {
            base_backoff: Duration::from_millis(1),
            max_backoff: Duration::from_millis(2),
            ..Default::default()
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let backend = Arc::new(Flaky {
            calls: AtomicU32::new(0),
            fail_first: 2,
        });
        let g = Gateway::from_arc(backend.clone(), fast());
        let out = g
            .chat(&[ChatMessage::user("hi")], &GenParams::default())
            .unwrap();
        assert_eq!(out.text, "ok");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let backend = Arc::new(Flaky {
            calls: AtomicU32::new(0),
            fail_first: 10,
        });
        let g = Gateway::from_arc(backend.clone(), fast());
        let err = g
            .chat(&[ChatMessage::user("hi")], &GenParams::default())
            .unwrap_err();
        assert_eq!(err.kind(), "transport");
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn answered_requests_are_not_resent() {
        let backend = Arc::new(Flaky {
            calls: AtomicU32::new(0),
            fail_first: 0,
        });
        let g = Gateway::from_arc(backend.clone(), fast());
        let msgs = [ChatMessage::user("same")];
        g.chat(&msgs, &GenParams::default()).unwrap();
        g.chat(&msgs, &GenParams::default()).unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn rejects_invalid_requests() {
        let g = Gateway::new(Flaky {
            calls: AtomicU32::new(0),
            fail_first: 0,
        });
        assert!(matches!(
            g.chat(&[ChatMessage::user("  ")], &GenParams::default()),
            Err(GatewayError::InvalidRequest(_))
        ));
        let params = GenParams {
            max_tokens: 0,
            ..Default::default()
        };
        assert!(g.chat(&[ChatMessage::user("x")], &params).is_err());
    }

    #[test]
    fn backend_spec_parsing() {
        assert_eq!(
            "mock:s.yaml".parse::<BackendSpec>().unwrap(),
            BackendSpec::Mock("s.yaml".into())
        );
        assert!(matches!(
            "http://localhost:8000".parse::<BackendSpec>().unwrap(),
            BackendSpec::Http(_)
        ));
        assert!("ftp://x".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn backoff_is_bounded() {
        let c = GatewayConfig::default();
        assert_eq!(c.backoff(1), Duration::from_millis(200));
        assert_eq!(c.backoff(2), Duration::from_millis(400));
        assert_eq!(c.backoff(10), Duration::from_secs(2));
    }
}
