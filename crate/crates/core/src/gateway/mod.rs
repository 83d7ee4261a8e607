//! The captioner pool: one client per model endpoint speaking the
//! OpenAI-compatible chat-completions protocol (or the deterministic mock),
//! with per-endpoint in-flight limits and retries.

pub mod mock;
mod retry;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::image::ImageInput;
pub use mock::{MockBehavior, MockFault};
pub use retry::RetryPolicy;

pub const DEFAULT_PROMPT: &str = "Describe the <image> in English:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("empty caption")]
    EmptyCaption,
    #[error("empty image")]
    EmptyImage,
}

impl GatewayError {
    /// Short stable identifier used in checkpoints and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::Timeout => "timeout",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::HttpStatus(_) => "http_status",
            GatewayError::Transport(_) => "transport",
            GatewayError::MalformedResponse(_) => "malformed_response",
            GatewayError::EmptyCaption => "empty_caption",
            GatewayError::EmptyImage => "empty_image",
        }
    }

    fn is_retryable(&self, policy: &RetryPolicy) -> bool {
        match self {
            GatewayError::Timeout
            | GatewayError::RateLimited { .. }
            | GatewayError::Transport(_)
            | GatewayError::EmptyCaption => true,
            GatewayError::HttpStatus(code) => policy.retryable_statuses.contains(code),
            GatewayError::MalformedResponse(_) | GatewayError::EmptyImage => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("the captioner pool is empty")]
    Empty,
    #[error("duplicate model_id `{0}` in pool")]
    DuplicateModel(String),
    #[error("endpoint `{model_id}`: {reason}")]
    InvalidEndpoint { model_id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    OpenaiCompat,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionerEndpoint {
    pub model_id: String,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub mock: MockBehavior,
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_in_flight() -> usize {
    4
}

impl CaptionerEndpoint {
    pub fn mock(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            base_url: None,
            auth_env_var: None,
            protocol: Protocol::Mock,
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_max_in_flight(),
            retry: RetryPolicy::default(),
            mock: MockBehavior::default(),
        }
    }

    pub fn openai(model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            base_url: Some(base_url.into()),
            protocol: Protocol::OpenaiCompat,
            ..Self::mock(model_id)
        }
    }

    /// `CAPFORGE_<MODEL_ID>_API_KEY` with non-alphanumerics mapped to `_`.
    pub fn default_auth_env_var(&self) -> String {
        let id: String = self
            .model_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_uppercase()
                } else {
                    '_'
                }
            })
            .collect();
        format!("CAPFORGE_{id}_API_KEY")
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        let invalid = |reason: String| PoolError::InvalidEndpoint {
            model_id: self.model_id.clone(),
            reason,
        };
        if self.model_id.is_empty() {
            return Err(invalid("model_id must not be empty".into()));
        }
        if self.max_in_flight < 1 {
            return Err(invalid("max_in_flight must be >= 1".into()));
        }
        self.retry.validate().map_err(invalid)?;
        if self.protocol == Protocol::OpenaiCompat {
            let url = self
                .base_url
                .as_deref()
                .ok_or_else(|| invalid("base_url is required for openai_compat".into()))?;
            url::Url::parse(url).map_err(|e| invalid(format!("base_url: {e}")))?;
        }
        Ok(())
    }
}

/// Decoding settings sent with each request. Fields the chat wire cannot
/// carry (beam count, penalties, n-gram blocking) are kept as run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub prompt_template: String,
    pub max_new_tokens: usize,
    pub num_beams: u32,
    pub do_sample: bool,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub min_length: Option<u32>,
    pub min_new_tokens: Option<u32>,
    pub repetition_penalty: Option<f64>,
    pub length_penalty: Option<f64>,
    pub no_repeat_ngram_size: Option<u32>,
    pub num_return_sequences: Option<u32>,
    pub seed: Option<u64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            prompt_template: DEFAULT_PROMPT.to_string(),
            max_new_tokens: 30,
            num_beams: 1,
            do_sample: false,
            temperature: None,
            top_p: None,
            min_length: None,
            min_new_tokens: None,
            repetition_penalty: None,
            length_penalty: None,
            no_repeat_ngram_size: None,
            num_return_sequences: None,
            seed: None,
        }
    }
}

impl GenerationConfig {
    pub fn minigpt4() -> Self {
        Self {
            do_sample: true,
            min_length: Some(1),
            top_p: Some(0.3),
            repetition_penalty: Some(1.0),
            length_penalty: Some(1.0),
            temperature: Some(1.0),
            ..Self::default()
        }
    }

    pub fn otter() -> Self {
        Self {
            no_repeat_ngram_size: Some(3),
            ..Self::default()
        }
    }

    pub fn qwen_vl() -> Self {
        Self {
            do_sample: false,
            min_new_tokens: Some(8),
            length_penalty: Some(0.0),
            num_return_sequences: Some(1),
            ..Self::default()
        }
    }

    pub fn llava_15() -> Self {
        Self {
            do_sample: true,
            top_p: None,
            temperature: Some(0.2),
            ..Self::default()
        }
    }

    /// Looks up a per-model preset by name (`minigpt4`, `otter`, `qwen-vl`,
    /// `llava-1.5`), ignoring case and punctuation.
    pub fn preset(name: &str) -> Option<Self> {
        let key: String = name
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match key.as_str() {
            "minigpt4" => Some(Self::minigpt4()),
            "otter" => Some(Self::otter()),
            "qwenvl" => Some(Self::qwen_vl()),
            "llava15" | "llava" => Some(Self::llava_15()),
            "default" => Some(Self::default()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_new_tokens < 1 {
            return Err("max_new_tokens must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct TextPart<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    text: &'a str,
}

#[derive(Debug, Serialize)]
struct ImageUrl {
    url: String,
}

#[derive(Debug, Serialize)]
struct ImagePart {
    #[serde(rename = "type")]
    kind: &'static str,
    image_url: ImageUrl,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum ContentPart<'a> {
    Text(TextPart<'a>),
    Image(ImagePart),
}

#[derive(Debug, Serialize)]
struct Message<'a> {
    role: &'static str,
    content: Vec<ContentPart<'a>>,
}

#[derive(Debug, Serialize)]
pub(crate) struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Builds the single-turn chat request: the prompt as the only text part,
/// followed by the image as a data URI. Greedy decoding (`do_sample = false`)
/// is expressed as temperature 0 without `top_p`.
pub(crate) fn chat_request<'a>(
    model_id: &'a str,
    generation: &'a GenerationConfig,
    image: &ImageInput,
) -> ChatRequest<'a> {
    let (temperature, top_p) = if generation.do_sample {
        (generation.temperature, generation.top_p)
    } else {
        (Some(0.0), None)
    };
    ChatRequest {
        model: model_id,
        messages: vec![Message {
            role: "user",
            content: vec![
                ContentPart::Text(TextPart {
                    kind: "text",
                    text: &generation.prompt_template,
                }),
                ContentPart::Image(ImagePart {
                    kind: "image_url",
                    image_url: ImageUrl {
                        url: image.data_uri(),
                    },
                }),
            ],
        }],
        max_tokens: generation.max_new_tokens,
        temperature,
        top_p,
        seed: generation.seed,
    }
}

/// Extracts `choices[0].message.content`. Content given as a list of text
/// parts is concatenated.
pub(crate) fn parse_chat_response(body: &Value) -> Result<String, GatewayError> {
    let content = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        Value::Null => Ok(String::new()),
        other => Err(GatewayError::MalformedResponse(format!(
            "unexpected content {other}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{error} after {attempts} attempt(s)")]
pub struct CaptionFailure {
    pub error: GatewayError,
    pub attempts: u32,
}

/// One member of the pool: endpoint, generation settings and the in-flight
/// limiter shared by every caller of this endpoint.
#[derive(Debug, Clone)]
pub struct Captioner {
    endpoint: Arc<CaptionerEndpoint>,
    generation: Arc<GenerationConfig>,
    client: reqwest::Client,
    permits: Arc<Semaphore>,
    api_key: Option<String>,
}

impl Captioner {
    pub fn new(endpoint: CaptionerEndpoint, generation: GenerationConfig) -> Result<Self, PoolError> {
        endpoint.validate()?;
        generation
            .validate()
            .map_err(|reason| PoolError::InvalidEndpoint {
                model_id: endpoint.model_id.clone(),
                reason,
            })?;
        let env_var = endpoint
            .auth_env_var
            .clone()
            .unwrap_or_else(|| endpoint.default_auth_env_var());
        let api_key = std::env::var(env_var).ok().filter(|k| !k.is_empty());
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| PoolError::InvalidEndpoint {
                model_id: endpoint.model_id.clone(),
                reason: e.to_string(),
            })?;
        Ok(Self {
            permits: Arc::new(Semaphore::new(endpoint.max_in_flight)),
            endpoint: Arc::new(endpoint),
            generation: Arc::new(generation),
            client,
            api_key,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.endpoint.model_id
    }

    pub fn endpoint(&self) -> &CaptionerEndpoint {
        &self.endpoint
    }

    pub fn generation(&self) -> &GenerationConfig {
        &self.generation
    }

    /// Captions one image, retrying per the endpoint's policy. The returned
    /// text is trimmed and never empty.
    pub async fn caption_image(&self, image: &ImageInput) -> Result<Caption, CaptionFailure> {
        if image.bytes.is_empty() {
            return Err(CaptionFailure {
                error: GatewayError::EmptyImage,
                attempts: 0,
            });
        }
        let policy = &self.endpoint.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                self.attempt_once(image).await
            };
            let error = match result {
                Ok(text) => {
                    let text = text.trim();
                    if !text.is_empty() {
                        return Ok(Caption {
                            text: text.to_string(),
                            attempts: attempt,
                        });
                    }
                    GatewayError::EmptyCaption
                }
                Err(e) => e,
            };
            if attempt >= policy.max_attempts || !error.is_retryable(policy) {
                tracing::debug!(model = %self.model_id(), attempt, %error, "caption failed");
                return Err(CaptionFailure {
                    error,
                    attempts: attempt,
                });
            }
            let hint = match &error {
                GatewayError::RateLimited { retry_after_ms } => {
                    retry_after_ms.map(Duration::from_millis)
                }
                _ => None,
            };
            tokio::time::sleep(policy.delay_after(attempt, hint)).await;
        }
    }

    async fn attempt_once(&self, image: &ImageInput) -> Result<String, GatewayError> {
        match self.endpoint.protocol {
            Protocol::Mock => self.mock_attempt(image).await,
            Protocol::OpenaiCompat => self.http_attempt(image).await,
        }
    }

    async fn mock_attempt(&self, image: &ImageInput) -> Result<String, GatewayError> {
        let mock = &self.endpoint.mock;
        if mock.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(mock.latency_ms)).await;
        }
        match mock.fault {
            Some(MockFault::Timeout) => return Err(GatewayError::Timeout),
            Some(MockFault::Status(429)) => {
                return Err(GatewayError::RateLimited {
                    retry_after_ms: None,
                })
            }
            Some(MockFault::Status(code)) => return Err(GatewayError::HttpStatus(code)),
            Some(MockFault::Empty) => return Ok(String::new()),
            None => {}
        }
        Ok(mock.caption(
            &self.endpoint.model_id,
            self.generation.seed.unwrap_or(0),
            &image.digest(),
            self.generation.max_new_tokens,
        ))
    }

    async fn http_attempt(&self, image: &ImageInput) -> Result<String, GatewayError> {
        let base = self
            .endpoint
            .base_url
            .as_deref()
            .expect("validated at construction");
        let url = format!("{}/v1/chat/completions", base.trim_end_matches('/'));
        let body = chat_request(&self.endpoint.model_id, &self.generation, image);
        let mut req = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(map_transport)?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after_ms = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(|secs| (secs * 1000.0) as u64);
            return Err(GatewayError::RateLimited { retry_after_ms });
        }
        if !status.is_success() {
            return Err(GatewayError::HttpStatus(status.as_u16()));
        }
        let body: Value = resp
            .json()
            .await
            .map_err(|e| if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::MalformedResponse(e.to_string())
            })?;
        parse_chat_response(&body)
    }
}

fn map_transport(e: reqwest::Error) -> GatewayError {
    if e.is_timeout() {
        GatewayError::Timeout
    } else {
        GatewayError::Transport(e.to_string())
    }
}

/// The ordered model pool.
#[derive(Debug, Clone)]
pub struct CaptionerPool {
    members: Vec<Captioner>,
}

impl CaptionerPool {
    pub fn new(members: Vec<Captioner>) -> Result<Self, PoolError> {
        if members.is_empty() {
            return Err(PoolError::Empty);
        }
        let mut seen = HashSet::new();
        for m in &members {
            if !seen.insert(m.model_id().to_string()) {
                return Err(PoolError::DuplicateModel(m.model_id().to_string()));
            }
        }
        Ok(Self { members })
    }

    pub fn from_specs<I>(specs: I) -> Result<Self, PoolError>
    where
        I: IntoIterator<Item = (CaptionerEndpoint, GenerationConfig)>,
    {
        let members = specs
            .into_iter()
            .map(|(e, g)| Captioner::new(e, g))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Captioner] {
        &self.members
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.members.iter().map(|m| m.model_id().to_string()).collect()
    }

    /// Queries every member concurrently; slot `k` holds member `k`'s result.
    pub async fn caption_multiview(&self, image: &ImageInput) -> Vec<Result<Caption, CaptionFailure>> {
        join_all(self.members.iter().map(|m| m.caption_image(image))).await
    }
}
