//! Uniform chat-completion interface over an external HTTP LLM provider,
//! plus a deterministic scripted provider for offline runs, and the
//! JSON-payload extraction shared by every prompt-consuming stage.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sampling temperature for all pipeline calls.
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
/// Default generation cap for all pipeline calls.
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
/// Default bound on concurrent in-flight LLM requests.
pub const DEFAULT_LLM_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Which pipeline stage issued the request, for script matching and
    /// tracing.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            tag: tag.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    /// Provider text, verbatim. May be empty; callers must handle that.
    pub text: String,
    pub latency: Duration,
    pub provider_id: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited after retries: {0}")]
    RateLimited(String),
    #[error("provider rejected request: {0}")]
    BadRequest(String),
    #[error("no scripted response for tag {tag:?}, user prompt starting {head:?}")]
    ScriptMiss { tag: String, head: String },
    #[error("no JSON object found in provider output")]
    NoJsonFound,
    #[error("malformed JSON in provider output: {0}")]
    MalformedJson(String),
}

/// A chat-completion backend. Implementations must tolerate many
/// concurrent in-flight requests.
pub trait Provider: Send + Sync {
    fn complete<'a>(
        &'a self,
        request: &'a ChatRequest,
    ) -> futures::future::BoxFuture<'a, Result<ChatResponse, GatewayError>>;
}

// ---------------------------------------------------------------------------
// JSON payload extraction
// ---------------------------------------------------------------------------

/// Extracts the first syntactically complete top-level JSON object from
/// free-form provider text by balanced-brace scanning. Braces inside JSON
/// string literals are ignored; surrounding prose and code fences are
/// irrelevant because scanning starts at each `{`.
pub fn extract_json_object(text: &str) -> Result<serde_json::Value, GatewayError> {
    let bytes = text.as_bytes();
    let mut saw_candidate = false;
    let mut start_positions = text
        .char_indices()
        .filter(|&(_, c)| c == '{')
        .map(|(i, _)| i);

    while let Some(start) = start_positions.next() {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut end = None;
        for (off, &b) in bytes[start..].iter().enumerate() {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + off + 1);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(end) = end {
            saw_candidate = true;
            let candidate = &text[start..end];
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) {
                if value.is_object() {
                    return Ok(value);
                }
            }
        }
    }

    if saw_candidate {
        Err(GatewayError::MalformedJson(
            "balanced braces found but no candidate parsed as a JSON object".into(),
        ))
    } else {
        Err(GatewayError::NoJsonFound)
    }
}

// ---------------------------------------------------------------------------
// Scripted provider
// ---------------------------------------------------------------------------

/// How a script entry matches the request's user prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKey {
    Exact(String),
    Substring(String),
}

impl MatchKey {
    fn matches(&self, user: &str) -> bool {
        match self {
            MatchKey::Exact(s) => user == s,
            MatchKey::Substring(s) => user.contains(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub tag: String,
    #[serde(rename = "match")]
    pub key: MatchKey,
    pub response: String,
}

/// Deterministic provider backed by an ordered table of canned responses.
/// Lookup takes the first entry whose tag equals the request tag and whose
/// key matches the user prompt, making `complete` a pure function of the
/// request. Unmatched requests are an error, never a silent fallthrough.
pub struct ScriptedProvider {
    entries: Vec<ScriptEntry>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedProvider { entries }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Transport(format!("reading script {path:?}: {e}")))?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::MalformedJson(format!("script table: {e}")))?;
        Ok(ScriptedProvider::new(entries))
    }

    fn lookup(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.entries
            .iter()
            .find(|e| e.tag == request.tag && e.key.matches(&request.user))
            .map(|e| e.response.clone())
            .ok_or_else(|| GatewayError::ScriptMiss {
                tag: request.tag.clone(),
                head: request.user.chars().take(60).collect(),
            })
    }
}

impl Provider for ScriptedProvider {
    fn complete<'a>(
        &'a self,
        request: &'a ChatRequest,
    ) -> futures::future::BoxFuture<'a, Result<ChatResponse, GatewayError>> {
        let result = self.lookup(request).map(|text| ChatResponse {
            text,
            latency: Duration::ZERO,
            provider_id: "scripted".into(),
        });
        Box::pin(async move { result })
    }
}

// ---------------------------------------------------------------------------
// HTTP provider (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Backoff before retry n is `base << n`: 0.5s, 1s, 2s by default.
    pub base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base: Duration::from_millis(500),
        }
    }
}

pub struct HttpProvider {
    client: reqwest::Client,
    base_url: String,
    api_key: String,
    model: String,
    retry: RetryPolicy,
}

#[derive(Serialize)]
struct ChatCompletionBody<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpProvider {
    pub fn new(base_url: String, api_key: String, model: String, retry: RetryPolicy) -> Self {
        HttpProvider {
            client: reqwest::Client::new(),
            base_url,
            api_key,
            model,
            retry,
        }
    }

    /// Reads `OMNI_LLM_BASE_URL`, `OMNI_LLM_API_KEY`, and `OMNI_LLM_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let get = |k: &str| {
            std::env::var(k).map_err(|_| GatewayError::BadRequest(format!("env {k} not set")))
        };
        Ok(HttpProvider::new(
            get("OMNI_LLM_BASE_URL")?,
            get("OMNI_LLM_API_KEY")?,
            get("OMNI_LLM_MODEL")?,
            RetryPolicy::default(),
        ))
    }

    async fn attempt(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = ChatCompletionBody {
            model: &self.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &request.system,
                },
                ChatMessage {
                    role: "user",
                    content: &request.user,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| GatewayError::Transport(e.to_string()))?;

        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(GatewayError::Auth(format!("{status}")));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(GatewayError::RateLimited(format!("{status}")));
        }
        if status.is_server_error() {
            return Err(GatewayError::Transport(format!("{status}")));
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(GatewayError::BadRequest(format!("{status}: {text}")));
        }
        let parsed: ChatCompletionResponse = resp
            .json()
            .await
            .map_err(|e| GatewayError::Transport(format!("decoding response: {e}")))?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

/// Transient failures (timeouts, connection errors, 429/5xx) are retried;
/// auth and other 4xx-class rejections are not.
fn is_retryable(err: &GatewayError) -> bool {
    matches!(
        err,
        GatewayError::Transport(_) | GatewayError::RateLimited(_)
    )
}

impl Provider for HttpProvider {
    fn complete<'a>(
        &'a self,
        request: &'a ChatRequest,
    ) -> futures::future::BoxFuture<'a, Result<ChatResponse, GatewayError>> {
        Box::pin(async move {
            let started = Instant::now();
            let mut last_err = None;
            for attempt in 0..self.retry.attempts {
                if attempt > 0 {
                    tokio::time::sleep(self.retry.base * (1 << (attempt - 1))).await;
                }
                match self.attempt(request).await {
                    Ok(text) => {
                        return Ok(ChatResponse {
                            text,
                            latency: started.elapsed(),
                            provider_id: format!("http:{}", self.model),
                        })
                    }
                    Err(err) if is_retryable(&err) => last_err = Some(err),
                    Err(err) => return Err(err),
                }
            }
            Err(last_err.unwrap_or_else(|| GatewayError::Transport("no attempts made".into())))
        })
    }
}

// ---------------------------------------------------------------------------
// Wrappers: concurrency bound and tracing
// ---------------------------------------------------------------------------

/// Bounds global LLM concurrency with a semaphore.
pub struct BoundedProvider<P> {
    inner: P,
    semaphore: Arc<tokio::sync::Semaphore>,
}

impl<P: Provider> BoundedProvider<P> {
    pub fn new(inner: P, max_in_flight: usize) -> Self {
        BoundedProvider {
            inner,
            semaphore: Arc::new(tokio::sync::Semaphore::new(max_in_flight)),
        }
    }
}

impl<P: Provider> Provider for BoundedProvider<P> {
    fn complete<'a>(
        &'a self,
        request: &'a ChatRequest,
    ) -> futures::future::BoxFuture<'a, Result<ChatResponse, GatewayError>> {
        Box::pin(async move {
            let _permit = self.semaphore.acquire().await.expect("semaphore closed");
            self.inner.complete(request).await
        })
    }
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn complete<'a>(
        &'a self,
        request: &'a ChatRequest,
    ) -> futures::future::BoxFuture<'a, Result<ChatResponse, GatewayError>> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete<'a>(
        &'a self,
        request: &'a ChatRequest,
    ) -> futures::future::BoxFuture<'a, Result<ChatResponse, GatewayError>> {
        (**self).complete(request)
    }
}

/// Appends every request and raw response to a JSONL trace file.
pub struct TracedProvider<P> {
    inner: P,
    sink: Mutex<std::io::BufWriter<std::fs::File>>,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    tag: &'a str,
    system: &'a str,
    user: &'a str,
    response: Option<&'a str>,
    error: Option<String>,
}

impl<P: Provider> TracedProvider<P> {
    pub fn new(inner: P, path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(TracedProvider {
            inner,
            sink: Mutex::new(std::io::BufWriter::new(file)),
        })
    }
}

impl<P: Provider> Provider for TracedProvider<P> {
    fn complete<'a>(
        &'a self,
        request: &'a ChatRequest,
    ) -> futures::future::BoxFuture<'a, Result<ChatResponse, GatewayError>> {
        Box::pin(async move {
            let result = self.inner.complete(request).await;
            let record = TraceRecord {
                tag: &request.tag,
                system: &request.system,
                user: &request.user,
                response: result.as_ref().ok().map(|r| r.text.as_str()),
                error: result.as_ref().err().map(|e| e.to_string()),
            };
            if let Ok(mut sink) = self.sink.lock() {
                use std::io::Write;
                let _ = serde_json::to_writer(&mut *sink, &record);
                let _ = writeln!(sink);
                let _ = sink.flush();
            }
            result
        })
    }
}
