//! Chat-completion client abstraction.
//!
//! [`ModelBackend`] is the seam every caller goes through. Two backends ship:
//! [`StubBackend`], a pure function of the request used for offline runs and
//! tests, and [`HttpBackend`], which speaks the common chat-completions JSON
//! shape (`POST {model, messages, temperature, max_tokens}` returning
//! `choices[0].message.content`).

use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("backend timed out or was unreachable after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend rejected credentials after {attempts} attempt(s)")]
    AuthFailure { attempts: u32 },
    #[error("malformed backend response after {attempts} attempt(s): {detail}")]
    MalformedResponse { attempts: u32, detail: String },
    #[error("backend returned HTTP {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

impl GatewayError {
    /// Number of HTTP attempts made before giving up (0 for local errors).
    pub fn attempts(&self) -> u32 {
        match self {
            Self::Timeout { attempts }
            | Self::AuthFailure { attempts }
            | Self::MalformedResponse { attempts, .. }
            | Self::Status { attempts, .. } => *attempts,
            Self::InvalidRequest(_) | Self::InvalidConfig(_) => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    fn wire_name(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
}

impl ChatTurn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    system_context: String,
    messages: Vec<ChatTurn>,
    temperature: f64,
    max_output_tokens: u32,
}

impl CompletionRequest {
    /// Builds a request, rejecting non-alternating turns, a temperature
    /// outside `[0, 2]` or a zero token budget.
    pub fn new(
        system_context: impl Into<String>,
        messages: Vec<ChatTurn>,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Result<Self, GatewayError> {
        if !(0.0..=2.0).contains(&temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {temperature} outside [0, 2]"
            )));
        }
        if max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be > 0".into()));
        }
        if let Some(i) = messages.windows(2).position(|w| w[0].role == w[1].role) {
            return Err(GatewayError::InvalidRequest(format!(
                "messages {i} and {} share a role",
                i + 1
            )));
        }
        Ok(Self {
            system_context: system_context.into(),
            messages,
            temperature,
            max_output_tokens,
        })
    }

    pub fn system_context(&self) -> &str {
        &self.system_context
    }

    pub fn messages(&self) -> &[ChatTurn] {
        &self.messages
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_output_tokens(&self) -> u32 {
        self.max_output_tokens
    }

    /// Total characters across the system context and every turn.
    pub fn char_len(&self) -> usize {
        self.system_context.chars().count()
            + self.messages.iter().map(|m| m.text.chars().count()).sum::<usize>()
    }

    fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    #[default]
    Stub,
    /// Any service accepting the chat-completions JSON shape.
    OpenaiCompatible,
}

/// The `[backend]` section of the service config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub provider: Provider,
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub retries: u32,
    /// First backoff delay; doubles on each further retry.
    pub backoff_ms: u64,
    pub chat_temperature: f64,
    pub memory_temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            provider: Provider::Stub,
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_ms: 30_000,
            retries: 2,
            backoff_ms: 250,
            chat_temperature: 0.7,
            memory_temperature: 0.9,
            max_output_tokens: 400,
        }
    }
}

impl BackendConfig {
    pub fn stub() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::InvalidConfig("timeout_ms must be > 0".into()));
        }
        for (name, t) in [("chat_temperature", self.chat_temperature), ("memory_temperature", self.memory_temperature)] {
            if !(0.0..=2.0).contains(&t) {
                return Err(GatewayError::InvalidConfig(format!("{name} outside [0, 2]")));
            }
        }
        if self.provider == Provider::OpenaiCompatible && self.endpoint_url.is_empty() {
            return Err(GatewayError::InvalidConfig("endpoint_url is empty".into()));
        }
        Ok(())
    }

    /// Upper bound on the time one `complete` call may block.
    pub fn worst_case(&self) -> Duration {
        let attempts = u64::from(self.retries) + 1;
        let backoff: u64 = (0..self.retries).map(|i| self.backoff_ms << i.min(20)).sum();
        Duration::from_millis(self.timeout_ms * attempts + backoff)
    }
}

pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError>;
}

impl<T: ModelBackend + ?Sized> ModelBackend for &T {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        (**self).complete(request)
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for Box<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        (**self).complete(request)
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        (**self).complete(request)
    }
}

/// Deterministic offline completion.
///
/// The reply is `[stub <digest>] <first 40 chars of context> :: <last user
/// message>`, where the digest covers the whole request.
pub fn stub_complete(request: &CompletionRequest) -> CompletionResult {
    let mut hasher = Sha256::new();
    hasher.update(request.system_context.as_bytes());
    for m in &request.messages {
        hasher.update([0u8]);
        hasher.update(m.role.wire_name().as_bytes());
        hasher.update([0u8]);
        hasher.update(m.text.as_bytes());
    }
    let digest = hex::encode(&hasher.finalize()[..4]);
    let context: String = request.system_context.chars().take(40).collect();
    let text = match request.last_user() {
        Some(last) => format!("[stub {digest}] {context} :: {last}"),
        None => format!("[stub {digest}] {context}"),
    };
    CompletionResult {
        text,
        finish_reason: FinishReason::Stop,
        latency_ms: 0,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackend;

impl ModelBackend for StubBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        Ok(stub_complete(request))
    }
}

enum AttemptError {
    Transient(Option<u16>),
    Fatal(GatewayError),
}

/// Client for chat-completions style HTTP services.
pub struct HttpBackend {
    config: BackendConfig,
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Self {
            config,
            client: OnceLock::new(),
        })
    }

    // built lazily so the backend can be constructed inside an async runtime
    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(Duration::from_millis(self.config.timeout_ms))
                .build()
                .expect("reqwest client with default TLS settings")
        })
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_context})];
        messages.extend(
            request
                .messages
                .iter()
                .map(|m| json!({"role": m.role.wire_name(), "content": m.text})),
        );
        json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }

    fn attempt(&self, body: &Value, attempts: u32) -> Result<CompletionResult, AttemptError> {
        let started = Instant::now();
        let mut builder = self.client().post(&self.config.endpoint_url).json(body);
        if !self.config.api_key_env.is_empty() {
            if let Ok(key) = std::env::var(&self.config.api_key_env) {
                builder = builder.bearer_auth(key);
            }
        }
        let response = builder.send().map_err(|_| AttemptError::Transient(None))?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(AttemptError::Fatal(GatewayError::AuthFailure { attempts })),
            408 | 429 | 500..=599 => return Err(AttemptError::Transient(Some(status))),
            _ => return Err(AttemptError::Fatal(GatewayError::Status { status, attempts })),
        }
        let malformed = |detail: &str| {
            AttemptError::Fatal(GatewayError::MalformedResponse {
                attempts,
                detail: detail.to_string(),
            })
        };
        let payload: Value = response.json().map_err(|_| malformed("body is not JSON"))?;
        let choice = payload
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| malformed("missing choices[0]"))?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("missing choices[0].message.content"))?;
        let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) => FinishReason::Error,
        };
        if finish_reason == FinishReason::Stop && text.trim().is_empty() {
            return Err(malformed("empty completion text"));
        }
        Ok(CompletionResult {
            text: text.to_string(),
            finish_reason,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

impl ModelBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let body = self.body(request);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts) {
                Ok(result) => return Ok(result),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(status)) => {
                    if attempts > self.config.retries {
                        return Err(match status {
                            Some(status) => GatewayError::Status { status, attempts },
                            None => GatewayError::Timeout { attempts },
                        });
                    }
                    let delay = self.config.backoff_ms << (attempts - 1).min(20);
                    log::warn!("backend attempt {attempts} failed; retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}

/// Builds the backend named by `config.provider`.
pub fn connect(config: &BackendConfig) -> Result<Box<dyn ModelBackend>, GatewayError> {
    config.validate()?;
    Ok(match config.provider {
        Provider::Stub => Box::new(StubBackend),
        Provider::OpenaiCompatible => Box::new(HttpBackend::new(config.clone())?),
    })
}

/// One-shot completion through the configured provider.
pub fn complete(
    config: &BackendConfig,
    request: &CompletionRequest,
) -> Result<CompletionResult, GatewayError> {
    connect(config)?.complete(request)
}
