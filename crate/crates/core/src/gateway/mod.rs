//! Access to acquisition, embedding and annotation models.
//!
//! Backends implement [`Backend`]; callers go through [`Gateway`], which checks
//! request preconditions and response invariants, normalizes embeddings, runs
//! batches with a bounded number of in-flight requests, and keeps usage totals.

mod finetune;
mod mock;
mod openai;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use finetune::{CommandAdapter, FineTuneAdapter, HttpAdapter, NoopAdapter};
pub use mock::MockBackend;
pub use openai::OpenAiBackend;

/// Token usage of one generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

/// One generated sequence with natural-log token probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    /// Per position, up to K `(token, logprob)` alternatives.
    #[serde(default)]
    pub top_alternatives: Vec<Vec<(String, f64)>>,
    pub usage: Usage,
}

impl GenerationResult {
    /// A result carrying only text and per-token logprobs.
    pub fn from_logprobs(tokens: Vec<String>, token_logprobs: Vec<f64>) -> Self {
        Self {
            text: tokens.join(" "),
            tokens,
            token_logprobs,
            top_alternatives: Vec::new(),
            usage: Usage::default(),
        }
    }

    pub fn with_alternatives(mut self, alternatives: Vec<Vec<(String, f64)>>) -> Self {
        self.top_alternatives = alternatives;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub num_samples: u32,
    /// Alternatives requested per position; 0 disables logprobs.
    pub logprobs_k: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { temperature: 0.0, top_p: 0.5, max_tokens: 256, num_samples: 1, logprobs_k: 20 }
    }
}

impl DecodeParams {
    pub fn greedy(max_tokens: u32) -> Self {
        Self { max_tokens, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.num_samples < 1 {
            return Err(GatewayError::Precondition("num_samples must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Precondition(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.num_samples > 1 && self.temperature == 0.0 {
            return Err(GatewayError::Precondition("num_samples > 1 requires temperature > 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Precondition(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> std::time::Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20)).min(self.max_delay_ms);
        std::time::Duration::from_millis(ms)
    }
}

/// How to reach a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Seed of the mock backend.
    #[serde(default)]
    pub seed: u64,
}

fn default_max_concurrent() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    120
}

impl BackendDescriptor {
    pub fn mock(seed: u64) -> Self {
        Self {
            kind: BackendKind::Mock,
            base_url: None,
            api_key_env: None,
            model: "mock".into(),
            max_concurrent: default_max_concurrent(),
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout_secs(),
            seed,
        }
    }

    pub fn remote(base_url: impl Into<String>, model: impl Into<String>, api_key_env: Option<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            base_url: Some(base_url.into()),
            api_key_env,
            model: model.into(),
            ..Self::mock(0)
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.kind == BackendKind::Remote && self.base_url.as_deref().unwrap_or("").is_empty() {
            return Err(GatewayError::Precondition("remote backend requires base_url".into()));
        }
        if self.max_concurrent == 0 {
            return Err(GatewayError::Precondition("max_concurrent must be >= 1".into()));
        }
        Ok(())
    }

    pub fn connect(&self) -> Result<Gateway, GatewayError> {
        self.validate()?;
        let backend: Arc<dyn Backend> = match self.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(self.seed)),
            BackendKind::Remote => Arc::new(OpenAiBackend::from_descriptor(self)?),
        };
        Ok(Gateway::new(backend).with_max_concurrent(self.max_concurrent))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String, retriable: bool },
    #[error("backend `{backend}` lacks a capability: {message}")]
    Capability { backend: String, message: String },
    #[error("backend `{backend}` returned inconsistent data: {message}")]
    Integrity { backend: String, message: String },
    #[error("training failed: {message}")]
    Training { message: String, diagnostics: String },
}

impl GatewayError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, GatewayError::Backend { retriable: true, .. })
    }
}

/// A model provider. Implementations need not validate; [`Gateway`] does.
pub trait Backend: Send + Sync {
    fn name(&self) -> String;

    fn generate(&self, model_ref: &str, prompt: &str, decode: &DecodeParams) -> Result<Vec<GenerationResult>, GatewayError>;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;

    fn embedding_model(&self) -> String {
        self.name()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub generate_calls: u64,
    pub embed_calls: u64,
    pub embedded_texts: u64,
    pub usage: Usage,
}

/// Validating front of a [`Backend`] with bounded batch parallelism.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    max_concurrent: usize,
    generate_calls: Arc<AtomicU64>,
    embed_calls: Arc<AtomicU64>,
    embedded_texts: Arc<AtomicU64>,
    input_tokens: Arc<AtomicU64>,
    output_tokens: Arc<AtomicU64>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("backend", &self.backend.name()).field("stats", &self.stats()).finish()
    }
}

const ALT_MASS_TOLERANCE: f64 = 1e-6;

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            max_concurrent: default_max_concurrent(),
            generate_calls: Arc::default(),
            embed_calls: Arc::default(),
            embedded_texts: Arc::default(),
            input_tokens: Arc::default(),
            output_tokens: Arc::default(),
        }
    }

    pub fn mock(seed: u64) -> Self {
        Self::new(Arc::new(MockBackend::new(seed)))
    }

    pub fn with_max_concurrent(mut self, n: usize) -> Self {
        self.max_concurrent = n.max(1);
        self
    }

    pub fn name(&self) -> String {
        self.backend.name()
    }

    pub fn embedding_model(&self) -> String {
        self.backend.embedding_model()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            generate_calls: self.generate_calls.load(Ordering::SeqCst),
            embed_calls: self.embed_calls.load(Ordering::SeqCst),
            embedded_texts: self.embedded_texts.load(Ordering::SeqCst),
            usage: Usage {
                input_tokens: self.input_tokens.load(Ordering::SeqCst),
                output_tokens: self.output_tokens.load(Ordering::SeqCst),
            },
        }
    }

    pub fn generate(&self, model_ref: &str, prompt: &str, decode: &DecodeParams) -> Result<Vec<GenerationResult>, GatewayError> {
        decode.validate()?;
        self.generate_calls.fetch_add(1, Ordering::SeqCst);
        let mut results = self.backend.generate(model_ref, prompt, decode)?;
        let backend = self.backend.name();
        if results.len() != decode.num_samples as usize {
            return Err(GatewayError::Integrity {
                backend,
                message: format!("requested {} samples, got {}", decode.num_samples, results.len()),
            });
        }
        for r in &mut results {
            check_generation(&backend, r, decode)?;
            self.input_tokens.fetch_add(r.usage.input_tokens, Ordering::SeqCst);
            self.output_tokens.fetch_add(r.usage.output_tokens, Ordering::SeqCst);
        }
        Ok(results)
    }

    /// Generate for many prompts with at most `max_concurrent` requests in flight.
    /// Output order follows input order; the first error aborts the batch.
    pub fn generate_many(
        &self,
        model_ref: &str,
        prompts: &[String],
        decode: &DecodeParams,
    ) -> Result<Vec<Vec<GenerationResult>>, GatewayError> {
        decode.validate()?;
        let results = self.map_bounded(prompts, |p| self.generate(model_ref, p, decode));
        results.into_iter().collect()
    }

    /// Run `f` over `items` on up to `max_concurrent` threads, preserving order.
    pub fn map_bounded<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        let workers = self.max_concurrent.min(items.len());
        if workers <= 1 {
            return items.iter().map(&f).collect();
        }
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
        let chunks: Vec<Vec<(usize, R)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    s.spawn(|| {
                        let mut out = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::SeqCst);
                            if i >= items.len() {
                                break;
                            }
                            out.push((i, f(&items[i])));
                        }
                        out
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for (i, r) in chunks.into_iter().flatten() {
            slots[i] = Some(r);
        }
        slots.into_iter().map(|r| r.expect("every slot filled")).collect()
    }

    /// Embed texts; vectors come back L2-normalized.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Precondition("embed requires at least one text".into()));
        }
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        self.embedded_texts.fetch_add(texts.len() as u64, Ordering::SeqCst);
        let raw = self.backend.embed(texts)?;
        let backend = self.backend.name();
        if raw.len() != texts.len() {
            return Err(GatewayError::Integrity {
                backend,
                message: format!("{} texts but {} embeddings", texts.len(), raw.len()),
            });
        }
        let dim = raw[0].len();
        let model = self.backend.embedding_model();
        raw.into_iter()
            .map(|v| {
                if v.len() != dim {
                    return Err(GatewayError::Integrity {
                        backend: backend.clone(),
                        message: format!("embedding dimension {} != {}", v.len(), dim),
                    });
                }
                if dim == 0 || v.iter().any(|x| !x.is_finite()) {
                    return Err(GatewayError::Integrity { backend: backend.clone(), message: "non-finite or empty embedding".into() });
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(GatewayError::Integrity { backend: backend.clone(), message: "zero embedding".into() });
                }
                Ok(EmbeddingVector { values: v.into_iter().map(|x| x / norm).collect(), model: model.clone() })
            })
            .collect()
    }
}

fn check_generation(backend: &str, r: &mut GenerationResult, decode: &DecodeParams) -> Result<(), GatewayError> {
    let integrity = |message: String| GatewayError::Integrity { backend: backend.to_string(), message };
    if decode.logprobs_k > 0 && !r.text.trim().is_empty() && r.token_logprobs.is_empty() {
        return Err(GatewayError::Capability {
            backend: backend.to_string(),
            message: "response carries no token logprobs".into(),
        });
    }
    if r.tokens.len() != r.token_logprobs.len() {
        return Err(integrity(format!("{} tokens but {} logprobs", r.tokens.len(), r.token_logprobs.len())));
    }
    for lp in &mut r.token_logprobs {
        if lp.is_nan() || *lp > 1e-9 {
            return Err(integrity(format!("token logprob {lp} is not <= 0")));
        }
        *lp = lp.min(0.0);
    }
    if !r.top_alternatives.is_empty() && r.top_alternatives.len() != r.tokens.len() {
        return Err(integrity("alternatives do not align with tokens".into()));
    }
    for alts in &r.top_alternatives {
        let mass: f64 = alts.iter().map(|(_, lp)| lp.exp()).sum();
        if mass > 1.0 + ALT_MASS_TOLERANCE {
            return Err(integrity(format!("alternative probabilities sum to {mass}")));
        }
    }
    Ok(())
}

/// Opaque hyperparameters forwarded to a fine-tune adapter.
pub type Hyperparams = BTreeMap<String, serde_json::Value>;
