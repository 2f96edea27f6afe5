//! Chat-completion gateway: one interface over any OpenAI-compatible
//! endpoint, with retries, bounded concurrency, call accounting, and a
//! record/replay cache.
//!
//! The cache is content-addressed: the key is a stable hash of the canonical
//! request serialization, and the store is an append-only line file. A run
//! recorded once replays bit-identically offline — in `Replay` mode the
//! gateway never touches the network and a cache miss is an error.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

/// Environment variable holding the endpoint API key. Secrets never live in
/// config files.
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {detail}")]
    InvalidRequest { detail: String },
    #[error("replay cache miss for key {key}")]
    CacheMiss { key: String },
    #[error("endpoint returned status {status} after {attempts} attempts: {detail}")]
    Http {
        status: u16,
        attempts: u32,
        detail: String,
    },
    #[error("network failure after {attempts} attempts: {detail}")]
    Network { attempts: u32, detail: String },
    #[error("malformed endpoint response: {detail}")]
    Protocol { detail: String },
    #[error("mock script error: {detail}")]
    Mock { detail: String },
    #[error("cache store {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model returned an empty completion")]
    EmptyCompletion,
}

// ---------------------------------------------------------------------------
// Requests and responses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl ChatRequest {
    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest {
                detail: "no messages".into(),
            });
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest {
                detail: format!("temperature {} out of range", self.temperature),
            });
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest {
                detail: "max_tokens must be positive".into(),
            });
        }
        Ok(())
    }

    /// Content-address of the request: a stable hash of its canonical
    /// serialization (sorted keys, fixed float formatting).
    pub fn cache_key(&self) -> String {
        let value = serde_json::json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stop": self.stop,
        });
        content_key(&value)
    }
}

/// Default request parameters shared by every prompt builder in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTemplate {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl RequestTemplate {
    pub fn new(model: impl Into<String>) -> Self {
        RequestTemplate {
            model: model.into(),
            temperature: 0.0,
            max_tokens: 1024,
            stop: None,
        }
    }

    /// A single-user-message request carrying this template's parameters.
    pub fn user_request(&self, content: impl Into<String>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::user(content)],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            stop: self.stop.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub cached: bool,
}

/// Stable sha256 hex digest of a JSON value's canonical form.
pub fn content_key(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("json value serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    format!("{:x}", hasher.finalize())
}

// ---------------------------------------------------------------------------
// Replay cache
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    Record,
    Replay,
    Passthrough,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    request: serde_json::Value,
    response: serde_json::Value,
}

/// Append-only, content-addressed response store.
pub struct ReplayCache {
    mode: CacheMode,
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, serde_json::Value>>,
    writer: Mutex<Option<File>>,
}

impl ReplayCache {
    pub fn open(mode: CacheMode, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|source| GatewayError::CacheIo {
                path: path.display().to_string(),
                source,
            })?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|source| GatewayError::CacheIo {
                    path: path.display().to_string(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine =
                    serde_json::from_str(&line).map_err(|e| GatewayError::Protocol {
                        detail: format!("corrupt cache line: {e}"),
                    })?;
                entries.insert(parsed.key, parsed.response);
            }
        } else if mode == CacheMode::Replay {
            return Err(GatewayError::CacheIo {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no cache to replay"),
            });
        }
        let writer = if mode == CacheMode::Record {
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|source| GatewayError::CacheIo {
                        path: path.display().to_string(),
                        source,
                    })?,
            )
        } else {
            None
        };
        Ok(ReplayCache {
            mode,
            path: Some(path),
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    /// A cache that never stores nor replays (pure passthrough).
    pub fn disabled() -> Self {
        ReplayCache {
            mode: CacheMode::Passthrough,
            path: None,
            entries: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Look a key up. In `Replay` mode a miss is an error — replay never
    /// falls through to the network.
    pub fn lookup(&self, key: &str) -> Result<Option<serde_json::Value>, GatewayError> {
        let entries = self.entries.lock().expect("cache lock");
        match entries.get(key) {
            Some(v) => Ok(Some(v.clone())),
            None if self.mode == CacheMode::Replay => Err(GatewayError::CacheMiss {
                key: key.to_string(),
            }),
            None => Ok(None),
        }
    }

    /// Record a response under a key (no-op outside `Record` mode).
    pub fn store(
        &self,
        key: &str,
        request: &serde_json::Value,
        response: &serde_json::Value,
    ) -> Result<(), GatewayError> {
        if self.mode != CacheMode::Record {
            return Ok(());
        }
        let line = CacheLine {
            key: key.to_string(),
            request: request.clone(),
            response: response.clone(),
        };
        {
            let mut writer = self.writer.lock().expect("cache writer lock");
            if let Some(file) = writer.as_mut() {
                let text = serde_json::to_string(&line).expect("cache line serializes");
                file.write_all(text.as_bytes())
                    .and_then(|_| file.write_all(b"\n"))
                    .and_then(|_| file.flush())
                    .map_err(|source| GatewayError::CacheIo {
                        path: self
                            .path
                            .as_ref()
                            .map(|p| p.display().to_string())
                            .unwrap_or_default(),
                        source,
                    })?;
            }
        }
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), response.clone());
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Retry policy and HTTP plumbing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_jitter: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 5,
            base_delay: Duration::from_secs(1),
            max_jitter: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// Vanishing delays, for tests.
    pub fn immediate() -> Self {
        RetryPolicy {
            attempts: 5,
            base_delay: Duration::from_millis(1),
            max_jitter: Duration::from_millis(1),
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        let jitter_ms = rand::thread_rng().gen_range(0..=self.max_jitter.as_millis() as u64);
        exp + Duration::from_millis(jitter_ms)
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// POST a JSON body, retrying transient failures (connect errors, 429, 5xx)
/// with exponential backoff. Returns the parsed response body.
pub async fn post_json_with_retry(
    client: &reqwest::Client,
    url: &str,
    body: &serde_json::Value,
    policy: &RetryPolicy,
) -> Result<serde_json::Value, GatewayError> {
    post_json_with_retry_auth(client, url, body, policy, None).await
}

pub async fn post_json_with_retry_auth(
    client: &reqwest::Client,
    url: &str,
    body: &serde_json::Value,
    policy: &RetryPolicy,
    bearer: Option<&str>,
) -> Result<serde_json::Value, GatewayError> {
    let mut last_error = None;
    for attempt in 0..policy.attempts {
        if attempt > 0 {
            tokio::time::sleep(policy.delay(attempt - 1)).await;
        }
        let mut req = client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        match req.send().await {
            Ok(resp) => {
                let status = resp.status().as_u16();
                if resp.status().is_success() {
                    return resp.json().await.map_err(|e| GatewayError::Protocol {
                        detail: e.to_string(),
                    });
                }
                let detail = resp.text().await.unwrap_or_default();
                if retryable_status(status) {
                    tracing::debug!(url, status, attempt, "retryable endpoint failure");
                    last_error = Some(GatewayError::Http {
                        status,
                        attempts: attempt + 1,
                        detail,
                    });
                    continue;
                }
                return Err(GatewayError::Http {
                    status,
                    attempts: attempt + 1,
                    detail,
                });
            }
            Err(e) => {
                tracing::debug!(url, attempt, error = %e, "request failed");
                last_error = Some(GatewayError::Network {
                    attempts: attempt + 1,
                    detail: e.to_string(),
                });
            }
        }
    }
    Err(last_error.unwrap_or(GatewayError::Network {
        attempts: policy.attempts,
        detail: "no attempts made".into(),
    }))
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

/// Scripted in-process model for offline tests and dry runs.
#[derive(Clone)]
pub struct MockModel {
    script: MockScript,
    cursor: Arc<AtomicUsize>,
}

#[derive(Clone)]
enum MockScript {
    Constant(String),
    ByOrdinal(Vec<String>),
    ByKey(Arc<HashMap<String, String>>),
    Fn(Arc<dyn Fn(&ChatRequest) -> String + Send + Sync>),
}

impl MockModel {
    /// Always answer with the same text.
    pub fn constant(text: impl Into<String>) -> Self {
        MockModel {
            script: MockScript::Constant(text.into()),
            cursor: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Answer the i-th call with the i-th entry; exhausting the script is an
    /// error.
    pub fn by_ordinal(responses: Vec<String>) -> Self {
        MockModel {
            script: MockScript::ByOrdinal(responses),
            cursor: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Answer by request cache key.
    pub fn keyed(responses: HashMap<String, String>) -> Self {
        MockModel {
            script: MockScript::ByKey(Arc::new(responses)),
            cursor: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Answer with a function of the request.
    pub fn from_fn(f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> Self {
        MockModel {
            script: MockScript::Fn(Arc::new(f)),
            cursor: Arc::new(AtomicUsize::new(0)),
        }
    }

    fn respond(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        match &self.script {
            MockScript::Constant(text) => Ok(text.clone()),
            MockScript::ByOrdinal(responses) => {
                let i = self.cursor.fetch_add(1, Ordering::SeqCst);
                responses.get(i).cloned().ok_or_else(|| GatewayError::Mock {
                    detail: format!("ordinal script exhausted at call {i}"),
                })
            }
            MockScript::ByKey(map) => {
                let key = req.cache_key();
                map.get(&key).cloned().ok_or_else(|| GatewayError::Mock {
                    detail: format!("no scripted response for key {key}"),
                })
            }
            MockScript::Fn(f) => Ok(f(req)),
        }
    }
}

pub enum Provider {
    /// OpenAI-compatible chat-completions endpoint.
    OpenAi {
        base_url: String,
        api_key: Option<String>,
    },
    Mock(MockModel),
    /// No provider: only valid with a replay cache that answers everything.
    ReplayOnly,
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: &'a Option<Vec<String>>,
}

#[derive(Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

/// Counters for the manifest: every call, live traffic, and cache hits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub total_calls: u64,
    pub live_calls: u64,
    pub cache_hits: u64,
}

/// The single chat-completion session every pipeline stage goes through.
pub struct Gateway {
    provider: Provider,
    cache: ReplayCache,
    client: reqwest::Client,
    semaphore: Arc<tokio::sync::Semaphore>,
    retry: RetryPolicy,
    calls: AtomicU64,
    live_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Gateway {
    pub fn new(provider: Provider, cache: ReplayCache, concurrency: usize) -> Self {
        Gateway {
            provider,
            cache,
            client: reqwest::Client::new(),
            semaphore: Arc::new(tokio::sync::Semaphore::new(concurrency.max(1))),
            retry: RetryPolicy::default(),
            calls: AtomicU64::new(0),
            live_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// A mock-backed gateway without a cache, for tests.
    pub fn mock(model: MockModel) -> Self {
        Gateway::new(Provider::Mock(model), ReplayCache::disabled(), 4)
    }

    pub fn cache(&self) -> &ReplayCache {
        &self.cache
    }

    /// Total `complete` calls so far, cached or live.
    pub fn count_inferences(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            total_calls: self.calls.load(Ordering::SeqCst),
            live_calls: self.live_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    pub async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = req.cache_key();

        if self.cache.mode() != CacheMode::Passthrough {
            if let Some(stored) = self.cache.lookup(&key)? {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                let response: StoredResponse =
                    serde_json::from_value(stored).map_err(|e| GatewayError::Protocol {
                        detail: format!("corrupt cached response: {e}"),
                    })?;
                return Ok(ChatResponse {
                    text: response.text,
                    usage: TokenUsage {
                        prompt_tokens: response.prompt_tokens,
                        completion_tokens: response.completion_tokens,
                    },
                    cached: true,
                });
            }
        }

        let (text, usage) = self.live(req).await?;
        let stored = StoredResponse {
            text: text.clone(),
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        };
        self.cache.store(
            &key,
            &serde_json::to_value(req).expect("request serializes"),
            &serde_json::to_value(&stored).expect("response serializes"),
        )?;
        Ok(ChatResponse {
            text,
            usage,
            cached: false,
        })
    }

    async fn live(&self, req: &ChatRequest) -> Result<(String, TokenUsage), GatewayError> {
        let _permit = self
            .semaphore
            .acquire()
            .await
            .expect("semaphore never closed");
        self.live_calls.fetch_add(1, Ordering::SeqCst);
        match &self.provider {
            Provider::Mock(mock) => Ok((mock.respond(req)?, TokenUsage::default())),
            Provider::ReplayOnly => Err(GatewayError::CacheMiss {
                key: req.cache_key(),
            }),
            Provider::OpenAi { base_url, api_key } => {
                let url = format!("{}/chat/completions", base_url.trim_end_matches('/'));
                let wire = WireChatRequest {
                    model: &req.model,
                    messages: &req.messages,
                    temperature: req.temperature,
                    max_tokens: req.max_tokens,
                    stop: &req.stop,
                };
                let body = post_json_with_retry_auth(
                    &self.client,
                    &url,
                    &serde_json::to_value(&wire).expect("request serializes"),
                    &self.retry,
                    api_key.as_deref(),
                )
                .await?;
                let parsed: WireChatResponse =
                    serde_json::from_value(body).map_err(|e| GatewayError::Protocol {
                        detail: e.to_string(),
                    })?;
                let choice = parsed
                    .choices
                    .into_iter()
                    .next()
                    .ok_or(GatewayError::Protocol {
                        detail: "response has no choices".into(),
                    })?;
                let usage = parsed.usage.unwrap_or_default();
                Ok((
                    choice.message.content,
                    TokenUsage {
                        prompt_tokens: usage.prompt_tokens,
                        completion_tokens: usage.completion_tokens,
                    },
                ))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoredResponse {
    text: String,
    prompt_tokens: u64,
    completion_tokens: u64,
}
