//! Model access: chat completion and embedding through an OpenAI-compatible
//! HTTP endpoint or a scripted in-process backend.

mod prompt;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use prompt::{
    assemble_prompt, PromptConfig, PromptMode, PromptReference, PromptSpec, RepairContext, DEFAULT_TEMPLATE,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("no scripted response matches the prompt")]
    NoScriptMatch,
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("embedding width changed from {expected} to {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("mandatory prompt blocks need {needed} characters, limit is {limit}")]
    BudgetExceeded { needed: usize, limit: usize },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<GatewayError> },
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            Self::Transport(_) | Self::Timeout => true,
            Self::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RemoteHttp,
    #[default]
    ScriptedMock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Base URL such as `https://host/v1`; unused by the scripted backend.
    pub endpoint: String,
    pub model_id: String,
    pub embedding_model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    /// Script file (TOML) for the scripted backend.
    pub script: Option<std::path::PathBuf>,
    pub max_concurrent: usize,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub system_prompt: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::ScriptedMock,
            endpoint: String::new(),
            model_id: "scripted".into(),
            embedding_model: String::new(),
            temperature: 0.0,
            max_tokens: 4096,
            timeout_secs: 300,
            api_key_env: None,
            script: None,
            max_concurrent: 4,
            retry_attempts: 3,
            retry_base_delay_ms: 2000,
            system_prompt: "You write Spack package recipes.".into(),
        }
    }
}

/// One scripted rule: prompts matching `pattern` receive `responses` in
/// order, the last one repeating once the list runs out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub pattern: String,
    #[serde(default)]
    pub responses: Vec<String>,
    /// When set, matching calls fail with a transport error carrying this text.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    /// Width of the hashing embedder.
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Exact-text embedding overrides.
    #[serde(default)]
    pub vectors: BTreeMap<String, Vec<f32>>,
}

fn default_dim() -> usize {
    64
}

impl Default for Script {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            embedding_dim: default_dim(),
            vectors: BTreeMap::new(),
        }
    }
}

impl Script {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))
    }

    /// Script answering every prompt with the given responses in order.
    pub fn sequence<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            rules: vec![ScriptRule {
                pattern: String::new(),
                responses: responses.into_iter().map(Into::into).collect(),
                error: None,
            }],
            embedding_dim: default_dim(),
            vectors: BTreeMap::new(),
        }
    }
}

struct ScriptState {
    rules: Vec<(Regex, ScriptRule)>,
    cursors: Mutex<Vec<usize>>,
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl ScriptState {
    fn new(script: &Script) -> Result<Self, GatewayError> {
        let rules = script
            .rules
            .iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map(|re| (re, r.clone()))
                    .map_err(|e| GatewayError::Config(format!("script pattern {:?}: {e}", r.pattern)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some((k, v)) = script.vectors.iter().find(|(_, v)| v.len() != script.embedding_dim) {
            return Err(GatewayError::Config(format!(
                "script vector for {k:?} has width {}, expected {}",
                v.len(),
                script.embedding_dim
            )));
        }
        Ok(Self {
            cursors: Mutex::new(vec![0; rules.len()]),
            rules,
            dim: script.embedding_dim,
            vectors: script.vectors.clone(),
        })
    }

    fn respond(&self, prompt: &str) -> Result<String, GatewayError> {
        let idx = self
            .rules
            .iter()
            .position(|(re, _)| re.is_match(prompt))
            .ok_or(GatewayError::NoScriptMatch)?;
        let rule = &self.rules[idx].1;
        if let Some(e) = &rule.error {
            return Err(GatewayError::Transport(e.clone()));
        }
        let mut cursors = self.cursors.lock().expect("script cursor lock");
        let i = cursors[idx];
        cursors[idx] += 1;
        rule.responses
            .get(i)
            .or_else(|| rule.responses.last())
            .cloned()
            .ok_or(GatewayError::NoScriptMatch)
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        if let Some(v) = self.vectors.get(text) {
            return v.clone();
        }
        hash_embedding(text, self.dim)
    }
}

/// Bag-of-words feature hashing, L2-normalized. Empty or token-free text maps
/// to the zero vector.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0f32; dim];
    if dim == 0 {
        return v;
    }
    for token in text
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .filter(|t| !t.is_empty())
    {
        let h = Sha256::digest(token.to_lowercase().as_bytes());
        let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as usize % dim;
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

struct Limiter {
    max: usize,
    active: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.active.lock().expect("limiter lock");
        while *n >= self.max {
            n = self.cv.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("limiter lock") -= 1;
        self.0.cv.notify_one();
    }
}

enum Backend {
    Http { agent: ureq::Agent, api_key: Option<String> },
    Scripted(ScriptState),
}

/// Shareable handle to a model endpoint.
#[derive(Clone)]
pub struct ModelHandle {
    pub config: ModelConfig,
    script: Option<Script>,
    backend: Arc<Backend>,
    limiter: Arc<Limiter>,
    dim: Arc<Mutex<Option<usize>>>,
    chat_calls: Arc<AtomicUsize>,
    embed_calls: Arc<AtomicUsize>,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("kind", &self.config.kind)
            .field("model_id", &self.config.model_id)
            .field("endpoint", &self.config.endpoint)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Set when counts are estimated from character length.
    #[serde(default)]
    pub approximate: bool,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: &TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.approximate |= other.approximate;
    }
}

/// Rough token count: one token per four characters, at least one for
/// nonempty text.
pub fn estimate_tokens(text: &str) -> u64 {
    let chars = text.chars().count() as u64;
    chars.div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub token_usage: TokenUsage,
    #[serde(with = "duration_secs")]
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResult {
    pub vectors: Vec<Vec<f32>>,
    /// Inputs that were empty and received the zero vector.
    pub zero_inputs: Vec<usize>,
}

pub(crate) mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs.max(0.0)))
    }
}

impl ModelHandle {
    pub fn new(config: ModelConfig) -> Result<Self, GatewayError> {
        match config.kind {
            ModelKind::ScriptedMock => {
                let script = match &config.script {
                    Some(p) => Script::from_toml(
                        &std::fs::read_to_string(p)
                            .map_err(|e| GatewayError::Config(format!("{}: {e}", p.display())))?,
                    )?,
                    None => Script::default(),
                };
                Self::scripted_with(config, script)
            }
            ModelKind::RemoteHttp => {
                if config.endpoint.is_empty() {
                    return Err(GatewayError::Config("remote model needs an endpoint".into()));
                }
                let api_key = match &config.api_key_env {
                    Some(var) => Some(
                        std::env::var(var)
                            .map_err(|_| GatewayError::Config(format!("environment variable {var} is not set")))?,
                    ),
                    None => None,
                };
                let agent_config = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
                    .http_status_as_error(false)
                    .build();
                Ok(Self::assemble(
                    config,
                    None,
                    Backend::Http {
                        agent: ureq::Agent::new_with_config(agent_config),
                        api_key,
                    },
                ))
            }
        }
    }

    /// Scripted backend with no retry delay.
    pub fn scripted(script: Script) -> Self {
        let config = ModelConfig {
            retry_base_delay_ms: 0,
            ..ModelConfig::default()
        };
        Self::scripted_with(config, script).expect("valid script")
    }

    pub fn scripted_with(config: ModelConfig, script: Script) -> Result<Self, GatewayError> {
        let state = ScriptState::new(&script)?;
        Ok(Self::assemble(config, Some(script), Backend::Scripted(state)))
    }

    fn assemble(config: ModelConfig, script: Option<Script>, backend: Backend) -> Self {
        Self {
            limiter: Arc::new(Limiter {
                max: config.max_concurrent.max(1),
                active: Mutex::new(0),
                cv: Condvar::new(),
            }),
            config,
            script,
            backend: Arc::new(backend),
            dim: Arc::new(Mutex::new(None)),
            chat_calls: Arc::new(AtomicUsize::new(0)),
            embed_calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// A handle whose scripted response cursors start from the beginning.
    /// Remote handles are shared as-is.
    pub fn for_session(&self) -> Self {
        match (&*self.backend, &self.script) {
            (Backend::Scripted(_), Some(script)) => {
                Self::scripted_with(self.config.clone(), script.clone()).expect("script validated at construction")
            }
            _ => self.clone(),
        }
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    /// Stable identifier of the embedding model, used in cache keys.
    pub fn embedder_id(&self) -> String {
        match (&*self.backend, &self.script) {
            (Backend::Scripted(s), Some(script)) => {
                let mut h = Sha256::new();
                h.update(serde_json::to_vec(&script.vectors).unwrap_or_default());
                format!("hash-{}-{}", s.dim, &hex::encode(h.finalize())[..12])
            }
            _ => format!("{}|{}", self.config.endpoint, self.config.embedding_model),
        }
    }

    fn with_retry<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let attempts = self.config.retry_attempts.max(1);
        let mut delay = Duration::from_millis(self.config.retry_base_delay_ms);
        let mut last = None;
        for i in 0..attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() => {
                    last = Some(e);
                    if i + 1 < attempts && !delay.is_zero() {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(GatewayError::RetriesExhausted {
            attempts,
            last: Box::new(last.expect("at least one attempt")),
        })
    }

    fn chat_raw(&self, system: &str, user: &str) -> Result<(String, Option<TokenUsage>), GatewayError> {
        let _permit = self.limiter.acquire();
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        match &*self.backend {
            Backend::Scripted(s) => s.respond(user).map(|t| (t, None)),
            Backend::Http { agent, api_key } => {
                let body = serde_json::json!({
                    "model": self.config.model_id,
                    "temperature": self.config.temperature,
                    "max_tokens": self.config.max_tokens,
                    "messages": [
                        {"role": "system", "content": system},
                        {"role": "user", "content": user},
                    ],
                });
                let v = post_json(agent, api_key.as_deref(), &self.url("chat/completions"), &body)?;
                let text = v["choices"][0]["message"]["content"]
                    .as_str()
                    .ok_or_else(|| GatewayError::InvalidResponse("missing choices[0].message.content".into()))?
                    .to_string();
                let usage = match (v["usage"]["prompt_tokens"].as_u64(), v["usage"]["completion_tokens"].as_u64()) {
                    (Some(p), Some(c)) => Some(TokenUsage {
                        prompt_tokens: p,
                        completion_tokens: c,
                        approximate: false,
                    }),
                    _ => None,
                };
                Ok((text, usage))
            }
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.endpoint.trim_end_matches('/'))
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let _permit = self.limiter.acquire();
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        match &*self.backend {
            Backend::Scripted(s) => Ok(texts.iter().map(|t| s.embed_one(t)).collect()),
            Backend::Http { agent, api_key } => {
                let body = serde_json::json!({
                    "model": self.config.embedding_model,
                    "input": texts,
                });
                let v = post_json(agent, api_key.as_deref(), &self.url("embeddings"), &body)?;
                let data = v["data"]
                    .as_array()
                    .ok_or_else(|| GatewayError::InvalidResponse("missing data array".into()))?;
                let mut out = vec![Vec::new(); texts.len()];
                for (pos, item) in data.iter().enumerate() {
                    let i = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
                    let vec = item["embedding"]
                        .as_array()
                        .ok_or_else(|| GatewayError::InvalidResponse("missing embedding".into()))?
                        .iter()
                        .map(|x| x.as_f64().map(|f| f as f32))
                        .collect::<Option<Vec<f32>>>()
                        .ok_or_else(|| GatewayError::InvalidResponse("non-numeric embedding".into()))?;
                    if i < out.len() {
                        out[i] = vec;
                    }
                }
                if out.iter().any(|v| v.is_empty()) {
                    return Err(GatewayError::InvalidResponse("embedding count differs from input count".into()));
                }
                Ok(out)
            }
        }
    }

    fn check_dim(&self, got: usize) -> Result<(), GatewayError> {
        let mut dim = self.dim.lock().expect("dim lock");
        match *dim {
            Some(expected) if expected != got => Err(GatewayError::DimensionMismatch { expected, got }),
            Some(_) => Ok(()),
            None => {
                *dim = Some(got);
                Ok(())
            }
        }
    }
}

fn post_json(
    agent: &ureq::Agent,
    api_key: Option<&str>,
    url: &str,
    body: &serde_json::Value,
) -> Result<serde_json::Value, GatewayError> {
    let mut req = agent.post(url);
    if let Some(k) = api_key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    let mut resp = req.send_json(body).map_err(map_ureq)?;
    let status = resp.status().as_u16();
    if status >= 400 {
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(GatewayError::Http {
            status,
            body: body.chars().take(500).collect(),
        });
    }
    resp.body_mut().read_json().map_err(|e| GatewayError::InvalidResponse(e.to_string()))
}

fn map_ureq(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::StatusCode(status) => GatewayError::Http {
            status,
            body: String::new(),
        },
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        other => GatewayError::Transport(other.to_string()),
    }
}

/// Removes Markdown code fences. With a fenced block present, the contents of
/// the first block are returned; otherwise the text is returned unchanged.
pub fn strip_fences(text: &str) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let is_fence = |l: &str| l.trim_start().starts_with("```");
    let Some(open) = lines.iter().position(|l| is_fence(l)) else {
        return text.to_string();
    };
    let close = lines[open + 1..]
        .iter()
        .position(|l| is_fence(l))
        .map(|i| open + 1 + i)
        .unwrap_or(lines.len());
    let mut out = lines[open + 1..close].join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

/// Sends a prompt and returns the fence-stripped reply.
pub fn complete(handle: &ModelHandle, prompt: &PromptSpec) -> Result<CompletionResult, GatewayError> {
    let (system, user) = (prompt.system_text(&handle.config.system_prompt), prompt.render());
    let start = Instant::now();
    let (raw, usage) = handle.with_retry(|| handle.chat_raw(&system, &user))?;
    let usage = usage.unwrap_or_else(|| TokenUsage {
        prompt_tokens: estimate_tokens(&system) + estimate_tokens(&user),
        completion_tokens: estimate_tokens(&raw),
        approximate: true,
    });
    Ok(CompletionResult {
        text: strip_fences(&raw),
        token_usage: usage,
        latency: start.elapsed(),
    })
}

/// Embeds each text. Empty strings map to the zero vector and are listed in
/// `zero_inputs`; the endpoint never sees them.
pub fn embed(handle: &ModelHandle, texts: &[String]) -> Result<EmbeddingResult, GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::Config("embed called with no texts".into()));
    }
    let zero_inputs: Vec<usize> = (0..texts.len()).filter(|i| texts[*i].trim().is_empty()).collect();
    let live: Vec<&str> = texts
        .iter()
        .enumerate()
        .filter(|(i, _)| !zero_inputs.contains(i))
        .map(|(_, t)| t.as_str())
        .collect();
    let mut live_vectors = Vec::new();
    if !live.is_empty() {
        live_vectors = handle.with_retry(|| handle.embed_raw(&live))?;
        for v in &live_vectors {
            handle.check_dim(v.len())?;
        }
    }
    let width = match *handle.dim.lock().expect("dim lock") {
        Some(d) => d,
        None => match &*handle.backend {
            Backend::Scripted(s) => s.dim,
            Backend::Http { .. } => {
                return Err(GatewayError::Config(
                    "embedding width unknown: every input was empty".into(),
                ))
            }
        },
    };
    let mut live_iter = live_vectors.into_iter();
    let vectors = (0..texts.len())
        .map(|i| {
            if zero_inputs.contains(&i) {
                vec![0.0; width]
            } else {
                live_iter.next().expect("one vector per live input")
            }
        })
        .collect();
    Ok(EmbeddingResult { vectors, zero_inputs })
}
