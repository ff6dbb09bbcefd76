//! Chat-completion client with retries, a scripted mock, and the
//! generator-side loops built on it (Self-Instruct expansion, Evol-Instruct
//! rewriting, validation-driven self-repair).
//!
//! Retry policy: transient failures (timeouts, 429, 5xx) are retried up to
//! `max_retries` times with exponential backoff `base * 2^attempt`, jittered
//! by ±20%. Auth failures (401/403) and other 4xx are never retried, so a
//! call makes at most `max_retries + 1` attempts.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine as _;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::canonical;
use crate::chart_model::{validate_spec, ChartSpec, ValidationReport, Violation};
use crate::prompts;
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub temperature: f64,
    pub max_tokens: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_base_secs: f64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8000/v1/chat/completions".to_string(),
            model_name: "Qwen2.5-VL-32B-Instruct".to_string(),
            api_key_env: Some("OPENAI_API_KEY".to_string()),
            max_retries: 3,
            timeout_secs: 120.0,
            temperature: 0.0,
            max_tokens: 1024,
            backoff_base_secs: 0.5,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(ClientError::InvalidConfig(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.backoff_base_secs.is_nan() || self.backoff_base_secs < 0.0 {
            return Err(ClientError::InvalidConfig(format!(
                "backoff base must be non-negative, got {}",
                self.backoff_base_secs
            )));
        }
        Ok(())
    }
}

/// Image attached to a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInput {
    pub mime: String,
    pub bytes: Vec<u8>,
}

impl ImageInput {
    /// Reads an image, guessing the MIME type from the extension.
    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let mime = match ext.as_str() {
            "svg" => "image/svg+xml",
            "png" => "image/png",
            "jpg" | "jpeg" => "image/jpeg",
            "gif" => "image/gif",
            "webp" => "image/webp",
            _ => "application/octet-stream",
        };
        Ok(Self {
            mime: mime.to_string(),
            bytes,
        })
    }

    pub fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
    pub image: Option<ImageInput>,
    /// Overrides the configured temperature.
    pub temperature: Option<f64>,
}

impl Prompt {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            image: None,
            temperature: None,
        }
    }

    pub fn with_image(mut self, image: ImageInput) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }
}

/// Fully resolved request handed to a transport.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub image: Option<ImageInput>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Stable key over system prompt, user prompt, image digest and
    /// temperature. Mock scripts are keyed by it.
    pub fn key(&self) -> String {
        request_key(
            &self.system,
            &self.user,
            self.image.as_ref().map(|i| i.bytes.as_slice()),
            self.temperature,
        )
    }

    /// OpenAI chat-completions body.
    pub fn wire_body(&self) -> serde_json::Value {
        let user_content = match &self.image {
            None => json!(self.user),
            Some(img) => json!([
                {"type": "text", "text": self.user},
                {"type": "image_url", "image_url": {"url": img.data_url()}},
            ]),
        };
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": user_content},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

pub fn request_key(system: &str, user: &str, image: Option<&[u8]>, temperature: f64) -> String {
    let v = json!({
        "system": system,
        "user": user,
        "image_sha256": image.map(canonical::sha256_hex),
        "temperature": temperature,
    });
    canonical::digest(&v).expect("json value serializes")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("authentication failed (status {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("transient failure{}: {message}", fmt_status(*.status))]
    Transient { status: Option<u16>, message: String },
    #[error("request failed{}: {message}", fmt_status(*.status))]
    Fatal { status: Option<u16>, message: String },
}

fn fmt_status(status: Option<u16>) -> String {
    status.map(|s| format!(" (status {s})")).unwrap_or_default()
}

impl TransportError {
    /// Classifies an HTTP status code.
    pub fn from_status(status: u16, message: impl Into<String>) -> Self {
        let message = message.into();
        match status {
            401 | 403 => TransportError::Auth { status, message },
            408 | 429 | 500..=599 => TransportError::Transient {
                status: Some(status),
                message,
            },
            _ => TransportError::Fatal {
                status: Some(status),
                message,
            },
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            TransportError::Auth { status, .. } => Some(*status),
            TransportError::Transient { status, .. } | TransportError::Fatal { status, .. } => *status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("authentication failed (status {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("gave up after {attempts} attempts{}: {message}", fmt_status(*.last_status))]
    Exhausted {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    #[error("request rejected{}: {message}", fmt_status(*.status))]
    Fatal { status: Option<u16>, message: String },
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
    #[error("invalid mock script: {0}")]
    Script(String),
}

impl ClientError {
    /// Errors after which further calls to the same endpoint are pointless.
    pub fn is_hard_failure(&self) -> bool {
        matches!(
            self,
            ClientError::Auth { .. } | ClientError::Exhausted { .. } | ClientError::InvalidConfig(_)
        )
    }
}

/// Sends one request. Implementations must be shareable across threads.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// OpenAI-compatible HTTP transport.
pub struct OpenAiTransport {
    http: reqwest::blocking::Client,
    endpoint_url: String,
    api_key: Option<String>,
}

impl OpenAiTransport {
    pub fn new(config: &ClientConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::InvalidConfig(e.to_string()))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Ok(Self {
            http,
            endpoint_url: config.endpoint_url.clone(),
            api_key,
        })
    }
}

impl Transport for OpenAiTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut builder = self.http.post(&self.endpoint_url).json(&request.wire_body());
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                TransportError::Transient {
                    status: None,
                    message: e.to_string(),
                }
            } else {
                TransportError::Fatal {
                    status: None,
                    message: e.to_string(),
                }
            }
        })?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(TransportError::from_status(
                status,
                body.chars().take(500).collect::<String>(),
            ));
        }
        let body: serde_json::Value = resp.json().map_err(|e| TransportError::Fatal {
            status: Some(status),
            message: format!("undecodable response body: {e}"),
        })?;
        body.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| TransportError::Fatal {
                status: Some(status),
                message: "response has no choices[0].message.content".to_string(),
            })
    }
}

/// Scripted reply: a completion text, or an error with an HTTP-like status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockEntry {
    Text(String),
    Error { error: String, status: u16 },
}

/// Mock script file:
///
/// ```json
/// {"default": ["..."], "responses": {"<request key>": ["first", {"error": "busy", "status": 503}, "third"]}}
/// ```
///
/// Each request key has its own cursor into its sequence; the last entry
/// repeats once the sequence is used up. Requests with no entry of their own
/// walk `default` with a per-key cursor, so results do not depend on the
/// order in which concurrent callers arrive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub default: Vec<MockEntry>,
    pub responses: BTreeMap<String, Vec<MockEntry>>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ClientError::Script(format!("{}: {e}", path.display())))?;
        canonical::from_str(&text).map_err(|e| ClientError::Script(format!("{}: {e}", path.display())))
    }

    pub fn always(text: impl Into<String>) -> Self {
        Self {
            default: vec![MockEntry::Text(text.into())],
            responses: BTreeMap::new(),
        }
    }
}

pub struct MockTransport {
    script: MockScript,
    cursors: Mutex<HashMap<String, usize>>,
}

impl MockTransport {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            cursors: Mutex::new(HashMap::new()),
        }
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let key = request.key();
        let seq = self.script.responses.get(&key).unwrap_or(&self.script.default);
        if seq.is_empty() {
            return Err(TransportError::Fatal {
                status: None,
                message: format!("mock script has no response for request {key}"),
            });
        }
        let idx = {
            let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
            let c = cursors.entry(key).or_insert(0);
            let i = (*c).min(seq.len() - 1);
            *c += 1;
            i
        };
        match &seq[idx] {
            MockEntry::Text(t) => Ok(t.clone()),
            MockEntry::Error { error, status } => Err(TransportError::from_status(*status, error.clone())),
        }
    }
}

/// Transport backed by a closure; handy for responders that depend on the
/// request content.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (self.0)(request)
    }
}

/// Retrying client. Cheap to share by reference across threads.
pub struct Client {
    pub config: ClientConfig,
    transport: Arc<dyn Transport>,
    attempts: AtomicU64,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client")
            .field("config", &self.config)
            .field("attempts", &self.attempts())
            .finish_non_exhaustive()
    }
}

impl Client {
    pub fn new(config: ClientConfig, transport: Arc<dyn Transport>) -> Result<Self, ClientError> {
        config.validate()?;
        Ok(Self {
            config,
            transport,
            attempts: AtomicU64::new(0),
        })
    }

    pub fn openai(config: ClientConfig) -> Result<Self, ClientError> {
        let t = OpenAiTransport::new(&config)?;
        Self::new(config, Arc::new(t))
    }

    pub fn mock(config: ClientConfig, script: MockScript) -> Result<Self, ClientError> {
        Self::new(config, Arc::new(MockTransport::new(script)))
    }

    /// Transport calls made so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    pub fn request_for(&self, prompt: &Prompt) -> ChatRequest {
        ChatRequest {
            model: self.config.model_name.clone(),
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            image: prompt.image.clone(),
            temperature: prompt.temperature.unwrap_or(self.config.temperature),
            max_tokens: self.config.max_tokens,
        }
    }

    /// Returns the first successful completion, retrying transient failures.
    pub fn complete(&self, prompt: &Prompt) -> Result<String, ClientError> {
        let request = self.request_for(prompt);
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::Relaxed);
            match self.transport.send(&request) {
                Ok(text) => return Ok(text),
                Err(TransportError::Auth { status, message }) => return Err(ClientError::Auth { status, message }),
                Err(TransportError::Fatal { status, message }) => return Err(ClientError::Fatal { status, message }),
                Err(TransportError::Transient { status, message }) => {
                    if attempt >= max_attempts {
                        return Err(ClientError::Exhausted {
                            attempts: attempt,
                            last_status: status,
                            message,
                        });
                    }
                    self.backoff(attempt - 1);
                }
            }
        }
    }

    fn backoff(&self, retry_index: u32) {
        let base = self.config.backoff_base_secs;
        if base <= 0.0 {
            return;
        }
        let jitter = rand::rng().random_range(0.8..=1.2);
        let secs = base * 2f64.powi(retry_index as i32) * jitter;
        std::thread::sleep(Duration::from_secs_f64(secs));
    }
}

// ---------------------------------------------------------------------------
// Self-Instruct / Evol-Instruct

/// Demonstrations per Self-Instruct prompt.
pub const DEFAULT_DEMONSTRATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpandError {
    #[error("seed pool is empty")]
    EmptySeedPool,
    #[error("expansion stopped after {} candidates: {error}", .partial.len())]
    Client { partial: Vec<String>, error: ClientError },
}

/// Self-Instruct prompt built from `k` seeds sampled without replacement.
pub fn self_instruct_prompt(seeds: &[ChartSpec], k: usize, rng: &mut SeededRng) -> Prompt {
    let picks = rng.sample_indices(seeds.len(), k.min(seeds.len()));
    let examples: Vec<String> = picks
        .iter()
        .map(|&i| canonical::to_string(&seeds[i]).expect("spec serializes"))
        .collect();
    let user = prompts::fill(prompts::SELF_INSTRUCT, &[("examples", &examples.join("\n\n"))]);
    Prompt::new("You write chart specifications as JSON.", user)
}

/// Asks the client for `n` new candidate specs, each prompted with `k`
/// demonstrations drawn from `seeds`. On a client failure the candidates
/// gathered so far are returned inside the error.
pub fn self_instruct_expand(
    seeds: &[ChartSpec],
    client: &Client,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<String>, ExpandError> {
    if seeds.is_empty() {
        return Err(ExpandError::EmptySeedPool);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = SeededRng::new(derive_seed(seed, &[i as u64]));
        let prompt = self_instruct_prompt(seeds, k, &mut rng);
        match client.complete(&prompt) {
            Ok(text) => out.push(text),
            Err(error) => return Err(ExpandError::Client { partial: out, error }),
        }
    }
    Ok(out)
}

/// Evol-Instruct prompt asking for a harder variant of `spec`.
pub fn evol_instruct_prompt(spec: &ChartSpec) -> Prompt {
    let body = canonical::to_string_pretty(spec).expect("spec serializes");
    Prompt::new(
        "You write chart specifications as JSON.",
        prompts::fill(prompts::EVOL_INSTRUCT, &[("spec", body.trim_end())]),
    )
}

// ---------------------------------------------------------------------------
// Self-repair

pub const DEFAULT_MAX_REPAIR_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairOutcome {
    /// The original candidate validated.
    Accepted,
    /// A repaired candidate validated.
    Repaired,
    /// Invalid, with attempts left.
    Failed,
    /// Invalid on the last allowed attempt.
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairAttempt {
    pub candidate_spec_text: String,
    pub validation_report: ValidationReport,
    /// 1-based.
    pub attempt_index: u32,
    pub outcome: RepairOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairResult {
    pub history: Vec<RepairAttempt>,
    #[serde(skip)]
    spec: Option<ChartSpec>,
}

impl RepairResult {
    pub fn outcome(&self) -> RepairOutcome {
        self.history.last().expect("history is never empty").outcome
    }

    /// The validated spec; `None` for abandoned candidates.
    pub fn accepted_spec(&self) -> Option<&ChartSpec> {
        self.spec.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("repair loop aborted after {} attempts: {error}", .history.len())]
pub struct RepairError {
    pub history: Vec<RepairAttempt>,
    pub error: ClientError,
}

/// JSON payload of a model reply: a fenced block if present, otherwise the
/// outermost braces.
pub fn extract_json(text: &str) -> &str {
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let body_start = after.find('\n').map_or(0, |i| i + 1);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].trim();
        }
    }
    match (text.find('{'), text.rfind('}')) {
        (Some(a), Some(b)) if a < b => &text[a..=b],
        _ => text.trim(),
    }
}

/// Parses and validates a candidate. Parse failures are reported as a
/// violation on the `json` field.
pub fn check_candidate(text: &str) -> (Option<ChartSpec>, ValidationReport) {
    match serde_json::from_str::<ChartSpec>(extract_json(text)) {
        Ok(spec) => {
            let report = validate_spec(&spec);
            if report.is_clean() {
                (Some(spec), report)
            } else {
                (None, report)
            }
        }
        Err(e) => (
            None,
            ValidationReport {
                violations: vec![Violation {
                    field: "json".to_string(),
                    rule: format!("does not parse as a chart spec: {e}"),
                }],
            },
        ),
    }
}

/// Validates `candidate_text`, sending failures back to the client with the
/// violation report, until a candidate validates or `max_attempts`
/// validations have been made. The history holds one entry per validation.
pub fn repair_loop(candidate_text: &str, client: &Client, max_attempts: u32) -> Result<RepairResult, RepairError> {
    let max_attempts = max_attempts.max(1);
    let mut history = Vec::new();
    let mut text = candidate_text.to_string();
    for attempt_index in 1..=max_attempts {
        let (spec, report) = check_candidate(&text);
        let outcome = match (&spec, attempt_index) {
            (Some(_), 1) => RepairOutcome::Accepted,
            (Some(_), _) => RepairOutcome::Repaired,
            (None, i) if i == max_attempts => RepairOutcome::Abandoned,
            (None, _) => RepairOutcome::Failed,
        };
        let prompt_report = report.to_string();
        history.push(RepairAttempt {
            candidate_spec_text: text.clone(),
            validation_report: report,
            attempt_index,
            outcome,
        });
        match outcome {
            RepairOutcome::Accepted | RepairOutcome::Repaired => return Ok(RepairResult { history, spec }),
            RepairOutcome::Abandoned => break,
            RepairOutcome::Failed => {
                let user = prompts::fill(prompts::REPAIR, &[("report", &prompt_report), ("spec", &text)]);
                let prompt = Prompt::new("You fix chart specifications.", user);
                match client.complete(&prompt) {
                    Ok(next) => text = next,
                    Err(error) => return Err(RepairError { history, error }),
                }
            }
        }
    }
    Ok(RepairResult { history, spec: None })
}

/// Specs that made it through repair. Abandoned candidates are dropped here,
/// which is the only way generated candidates reach a dataset.
pub fn admitted_specs(results: &[RepairResult]) -> Vec<ChartSpec> {
    results.iter().filter_map(|r| r.accepted_spec().cloned()).collect()
}
