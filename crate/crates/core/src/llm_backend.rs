//! Text-completion backends.
//!
//! [`RemoteBackend`] talks to an OpenAI-compatible `chat/completions`
//! endpoint. [`MockBackend`] answers pattern prompts locally by fitting a ridge
//! regression to the prompt's own `INPUTS;OUTPUTS` lines, which makes the whole
//! in-context pipeline runnable and testable offline.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::prompting::{NumberFormat, PromptText};
use crate::regression::fit_affine;

pub const DEFAULT_API_KEY_ENV: &str = "ICPI_API_KEY";
pub const MOCK_RIDGE_LAMBDA: f64 = 1e-6;
pub const MIN_MAX_TOKENS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("request failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("mock backend cannot read prompt: {0}")]
    Mock(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: PromptText,
    pub temperature: f64,
    pub max_tokens: usize,
    pub model_name: String,
}

impl CompletionRequest {
    pub fn new(prompt: PromptText, model_name: &str) -> Self {
        CompletionRequest {
            prompt,
            temperature: 0.0,
            max_tokens: 64,
            model_name: model_name.to_string(),
        }
    }
}

/// Anything that turns a prompt into completion text.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;

    /// Upper bound on concurrent in-flight requests this backend wants.
    fn max_parallel(&self) -> usize {
        usize::MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub max_parallel: usize,
    /// First retry delay; doubles on every further retry.
    pub backoff_initial_s: f64,
    pub transcript: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint_url: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout_s: 60.0,
            max_retries: 3,
            max_parallel: 4,
            backoff_initial_s: 0.5,
            transcript: None,
        }
    }
}

pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn CompletionBackend>, BackendError> {
    let transcript = config
        .transcript
        .as_deref()
        .map(Transcript::open)
        .transpose()?;
    Ok(match config.kind {
        BackendKind::Mock => Arc::new(MockBackend { transcript }),
        BackendKind::Remote => Arc::new(RemoteBackend::new(config, transcript)?),
    })
}

/// Line-delimited JSON log of requests and raw responses.
#[derive(Debug)]
pub struct Transcript {
    file: Mutex<File>,
}

impl Transcript {
    pub fn open(path: &Path) -> Result<Transcript, BackendError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Config(format!("cannot open transcript {}: {e}", path.display())))?;
        Ok(Transcript { file: Mutex::new(file) })
    }

    fn record(&self, entry: serde_json::Value) {
        let mut f = self.file.lock().expect("transcript lock");
        if let Err(e) = writeln!(f, "{entry}") {
            log::warn!("transcript write failed: {e}");
        }
    }
}

// ---------------------------------------------------------------------------
// mock

/// Deterministic stand-in for an in-context pattern completer.
#[derive(Debug, Default)]
pub struct MockBackend {
    transcript: Option<Transcript>,
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend::default()
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let out = mock_complete(&request.prompt.text);
        if let Some(t) = &self.transcript {
            t.record(json!({
                "backend": "mock",
                "model": request.model_name,
                "prompt": request.prompt.text,
                "response": out.as_ref().map_err(|e| e.to_string()),
            }));
        }
        out
    }
}

/// Pattern lines and query parsed out of an `INPUTS;OUTPUTS` prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub query: Vec<f64>,
}

fn numbers(s: &str) -> Option<Vec<f64>> {
    let v: Vec<f64> = s.split_whitespace().map(|t| t.parse().ok()).collect::<Option<_>>()?;
    (!v.is_empty()).then_some(v)
}

/// Reads every fully numeric `a;b` line as an example and the final `a;` line
/// as the query. Header prose is skipped.
pub fn parse_pattern_prompt(prompt: &str) -> Result<PatternSet, BackendError> {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut query = None;
    for line in prompt.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let Some((lhs, rhs)) = line.split_once(';') else {
            continue;
        };
        let Some(input) = numbers(lhs) else {
            continue;
        };
        if query.is_some() {
            return Err(BackendError::Mock("content after the query line".into()));
        }
        if rhs.trim().is_empty() {
            query = Some(input);
        } else {
            let output = numbers(rhs).ok_or_else(|| BackendError::Mock(format!("non-numeric outputs in `{line}`")))?;
            inputs.push(input);
            outputs.push(output);
        }
    }
    let query = query.ok_or_else(|| BackendError::Mock("no query line".into()))?;
    if inputs.is_empty() {
        return Err(BackendError::Mock("no example lines".into()));
    }
    let (d_in, d_out) = (inputs[0].len(), outputs[0].len());
    if query.len() != d_in || inputs.iter().any(|v| v.len() != d_in) || outputs.iter().any(|v| v.len() != d_out) {
        return Err(BackendError::Mock("inconsistent pattern widths".into()));
    }
    Ok(PatternSet { inputs, outputs, query })
}

/// Ridge regression over the prompt's examples, evaluated at its query.
pub fn mock_complete(prompt: &str) -> Result<String, BackendError> {
    let set = parse_pattern_prompt(prompt)?;
    let model = fit_affine(&set.inputs, &set.outputs, MOCK_RIDGE_LAMBDA, 0);
    NumberFormat::default()
        .values(&model.predict(&set.query))
        .map_err(|e| BackendError::Mock(e.to_string()))
}

// ---------------------------------------------------------------------------
// remote

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-compatible chat-completions client.
pub struct RemoteBackend {
    url: String,
    api_key: String,
    agent: ureq::Agent,
    max_retries: u32,
    backoff_initial: Duration,
    max_parallel: usize,
    slots: Slots,
    transcript: Option<Transcript>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig, transcript: Option<Transcript>) -> Result<Self, BackendError> {
        let endpoint = config
            .endpoint_url
            .as_deref()
            .filter(|u| !u.is_empty())
            .ok_or_else(|| BackendError::Config("remote backend requires an endpoint URL".into()))?;
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| BackendError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        if !(config.timeout_s > 0.0) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend {
            url: chat_completions_url(endpoint),
            api_key,
            agent,
            max_retries: config.max_retries,
            backoff_initial: Duration::from_secs_f64(config.backoff_initial_s.max(0.0)),
            max_parallel: config.max_parallel.max(1),
            slots: Slots::new(config.max_parallel),
            transcript,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, body: &str, attempt: u32) -> Result<String, Attempt> {
        let result = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body);
        let mut response = match result {
            Ok(r) => r,
            Err(e) => {
                self.log(body, attempt, None, &e.to_string());
                return Err(Attempt::Retry(e.to_string()));
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                self.log(body, attempt, Some(status), &e.to_string());
                return Err(Attempt::Retry(e.to_string()));
            }
        };
        self.log(body, attempt, Some(status), &text);
        match status {
            200..=299 => {}
            429 | 500..=599 => return Err(Attempt::Retry(format!("HTTP {status}"))),
            _ => return Err(Attempt::Fatal(BackendError::Protocol(format!("HTTP {status}: {text}")))),
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(BackendError::Protocol(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal(BackendError::Protocol("response has no message content".into())))
    }

    fn log(&self, body: &str, attempt: u32, status: Option<u16>, response: &str) {
        if let Some(t) = &self.transcript {
            t.record(json!({
                "backend": "remote",
                "url": self.url,
                "attempt": attempt,
                "request": body,
                "status": status,
                "response": response,
            }));
        }
    }
}

/// Accepts either a base URL or the full `.../chat/completions` path.
pub fn chat_completions_url(endpoint: &str) -> String {
    let trimmed = endpoint.trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

/// Request body for one user-message chat completion.
pub fn chat_request_body(request: &CompletionRequest) -> serde_json::Value {
    json!({
        "model": request.model_name,
        "messages": [{ "role": "user", "content": request.prompt.text }],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens.max(MIN_MAX_TOKENS),
    })
}

impl CompletionBackend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = chat_request_body(request).to_string();
        let _slot = self.slots.acquire();
        let mut delay = self.backoff_initial;
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body, attempt) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::debug!("attempt {attempt} failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(BackendError::Transport {
            attempts: self.max_retries + 1,
            last,
        })
    }

    fn max_parallel(&self) -> usize {
        self.max_parallel
    }
}
