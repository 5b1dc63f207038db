//! Chat-completion client for consortium and reasoning endpoints.
//!
//! Every failure is folded into [`InferenceStatus`]; nothing past this module
//! sees a transport error. Timeouts and connection errors are retried per
//! [`RetryPolicy`]; protocol errors and empty completions are not.

use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tracing::debug;
use url::Url;

use crate::prompt::RenderedPrompt;
use crate::record_store::ImageFormat;

pub const DEFAULT_MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(default)]
    pub backoff_base_ms: u64,
    #[serde(default = "one")]
    pub backoff_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 2, backoff_base_ms: 100, backoff_factor: 2.0 }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        RetryPolicy { max_attempts: 1, backoff_base_ms: 0, backoff_factor: 1.0 }
    }

    /// Delay before attempt `failed + 1`, after `failed` failures (`failed >= 1`).
    pub fn delay_after(&self, failed: u32) -> Duration {
        let exp = failed.saturating_sub(1) as i32;
        let ms = self.backoff_base_ms as f64 * self.backoff_factor.powi(exp);
        Duration::from_millis(ms.min(u64::MAX as f64 / 2.0) as u64)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts == 0 {
            return Err("retry.max_attempts must be >= 1".into());
        }
        if !(self.backoff_factor >= 1.0 && self.backoff_factor.is_finite()) {
            return Err("retry.backoff_factor must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub url: String,
    pub model_name: String,
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing)]
    pub auth_token: Option<String>,
}

impl std::fmt::Debug for ModelEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelEndpoint")
            .field("url", &self.url)
            .field("model_name", &self.model_name)
            .field("timeout_ms", &self.timeout_ms)
            .field("retry", &self.retry)
            .field("auth_token", &self.auth_token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl ModelEndpoint {
    pub fn new(url: impl Into<String>, model_name: impl Into<String>, timeout_ms: u64) -> Self {
        ModelEndpoint {
            url: url.into(),
            model_name: model_name.into(),
            timeout_ms,
            retry: RetryPolicy::no_retry(),
            auth_token: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err(format!("endpoint `{}`: timeout_ms must be > 0", self.model_name));
        }
        let url = Url::parse(&self.url).map_err(|e| format!("endpoint url `{}`: {e}", self.url))?;
        if !matches!(url.scheme(), "http" | "https") || url.host().is_none() {
            return Err(format!("endpoint url `{}` must be http(s) with a host", self.url));
        }
        self.retry.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceStatus {
    Ok,
    Timeout,
    ConnectionError,
    ProtocolError,
    EmptyCompletion,
}

impl InferenceStatus {
    pub fn is_retryable(self) -> bool {
        matches!(self, InferenceStatus::Timeout | InferenceStatus::ConnectionError)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub model_id: String,
    pub status: InferenceStatus,
    /// Completion text exactly as served; empty unless `status` is `Ok`.
    pub raw_text: String,
    pub latency_ms: u64,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Healthy,
    Unreachable,
}

#[derive(Debug, Clone)]
pub struct ConsortiumJob {
    pub model_id: String,
    pub prompt: RenderedPrompt,
    pub endpoint: ModelEndpoint,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Global bound on in-flight requests; `None` is unbounded.
    pub parallelism: Option<usize>,
    pub max_image_bytes: usize,
    pub health_timeout: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            parallelism: None,
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
            health_timeout: Duration::from_millis(1000),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gateway {
    client: reqwest::Client,
    limiter: Option<Arc<Semaphore>>,
    config: GatewayConfig,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(GatewayConfig::default())
    }
}

/// Request body in the gateway's wire format.
pub fn request_body(prompt: &RenderedPrompt, model_name: &str, image: Option<(&[u8], ImageFormat)>) -> Value {
    let mut user_content = vec![json!({"type": "text", "text": prompt.user_text})];
    if let Some((bytes, format)) = image {
        user_content.push(json!({
            "type": "image",
            "image": crate::record_store::encode_base64(bytes),
            "mime_type": format.mime_type(),
        }));
    }
    json!({
        "model": model_name,
        "messages": [
            {"role": "system", "content": [{"type": "text", "text": prompt.system_text}]},
            {"role": "user", "content": user_content},
        ],
        "temperature": prompt.sampling.temperature,
        "max_tokens": prompt.sampling.max_tokens,
        "stream": false,
    })
}

/// Extracts the completion from `{message:{content}}` or `{choices:[{message:{content}}]}`.
pub fn completion_text(body: &Value) -> Option<&str> {
    body.pointer("/message/content")
        .or_else(|| body.pointer("/choices/0/message/content"))
        .and_then(Value::as_str)
}

struct Attempt {
    status: InferenceStatus,
    text: String,
    detail: Option<String>,
}

impl Attempt {
    fn fail(status: InferenceStatus, detail: impl Into<String>) -> Self {
        Attempt { status, text: String::new(), detail: Some(detail.into()) }
    }
}

fn classify(err: &reqwest::Error) -> InferenceStatus {
    if err.is_timeout() {
        InferenceStatus::Timeout
    } else if err.is_decode() || err.is_builder() {
        InferenceStatus::ProtocolError
    } else {
        InferenceStatus::ConnectionError
    }
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Self {
        let client = reqwest::Client::builder()
            .no_proxy()
            .build()
            .expect("http client builds");
        let limiter = config.parallelism.map(|p| Arc::new(Semaphore::new(p.max(1))));
        Gateway { client, limiter, config }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Sends `prompt` to `endpoint`, retrying per its policy. `model_id` in
    /// the result is the endpoint's model name.
    pub async fn query_model(&self, prompt: &RenderedPrompt, endpoint: &ModelEndpoint) -> InferenceResult {
        let _permit = match &self.limiter {
            Some(sem) => Some(sem.clone().acquire_owned().await.expect("semaphore never closed")),
            None => None,
        };
        let started = Instant::now();
        let result = |attempts: u32, a: Attempt| InferenceResult {
            model_id: endpoint.model_name.clone(),
            status: a.status,
            raw_text: a.text,
            latency_ms: started.elapsed().as_millis() as u64,
            attempts,
            detail: a.detail,
        };

        let image = match &prompt.image {
            Some(img) => match img.bytes() {
                Ok(bytes) if bytes.len() <= self.config.max_image_bytes => Some((bytes.into_owned(), img.format)),
                Ok(bytes) => {
                    return result(0, Attempt::fail(
                        InferenceStatus::ProtocolError,
                        format!("image is {} bytes, cap is {}", bytes.len(), self.config.max_image_bytes),
                    ))
                }
                Err(e) => return result(0, Attempt::fail(InferenceStatus::ProtocolError, format!("image unreadable: {e}"))),
            },
            None => None,
        };
        let body = request_body(prompt, &endpoint.model_name, image.as_ref().map(|(b, f)| (b.as_slice(), *f)));
        let body = serde_json::to_vec(&body).expect("request serializes");

        let max_attempts = endpoint.retry.max_attempts.max(1);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let attempt = self.attempt(endpoint, body.clone()).await;
            debug!(model = %endpoint.model_name, attempt = attempts, status = ?attempt.status, "inference attempt");
            if attempt.status.is_retryable() && attempts < max_attempts {
                tokio::time::sleep(endpoint.retry.delay_after(attempts)).await;
                continue;
            }
            return result(attempts, attempt);
        }
    }

    async fn attempt(&self, endpoint: &ModelEndpoint, body: Vec<u8>) -> Attempt {
        let mut request = self
            .client
            .post(&endpoint.url)
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        if let Some(token) = &endpoint.auth_token {
            request = request.bearer_auth(token);
        }
        let response = match request.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::fail(classify(&e), e.to_string()),
        };
        let status = response.status();
        let bytes = match response.bytes().await {
            Ok(b) => b,
            Err(e) => return Attempt::fail(classify(&e), e.to_string()),
        };
        if !status.is_success() {
            return Attempt::fail(InferenceStatus::ProtocolError, format!("http status {status}"));
        }
        let Ok(json) = serde_json::from_slice::<Value>(&bytes) else {
            return Attempt::fail(InferenceStatus::ProtocolError, "response body is not JSON");
        };
        match completion_text(&json) {
            None => Attempt::fail(InferenceStatus::ProtocolError, "response has no message content"),
            Some(text) if text.trim().is_empty() => {
                Attempt::fail(InferenceStatus::EmptyCompletion, "completion is empty")
            }
            Some(text) => Attempt { status: InferenceStatus::Ok, text: text.to_string(), detail: None },
        }
    }

    /// Fans out all jobs concurrently (subject to the parallelism bound).
    /// Results are positionally aligned with `jobs`.
    pub async fn query_consortium(&self, jobs: &[ConsortiumJob]) -> Vec<InferenceResult> {
        join_all(jobs.iter().map(|job| async move {
            let mut r = self.query_model(&job.prompt, &job.endpoint).await;
            r.model_id = job.model_id.clone();
            r
        }))
        .await
    }

    /// Single GET against the endpoint's origin; any HTTP response counts as healthy.
    pub async fn health_check(&self, endpoint: &ModelEndpoint) -> Health {
        let Ok(mut url) = Url::parse(&endpoint.url) else {
            return Health::Unreachable;
        };
        url.set_path("/");
        url.set_query(None);
        match self
            .client
            .get(url)
            .timeout(self.config.health_timeout)
            .send()
            .await
        {
            Ok(_) => Health::Healthy,
            Err(_) => Health::Unreachable,
        }
    }
}
