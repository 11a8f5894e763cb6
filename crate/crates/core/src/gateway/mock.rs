use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Backend, DecodeParams, GatewayError, GenerationResult, Usage};
use crate::text::stable_hash;

const VOCAB: &[&str] = &[
    "the", "answer", "is", "of", "a", "to", "and", "in", "it", "that", "was", "for", "on", "are", "with", "as",
    "yes", "no", "one", "two", "three", "four", "five", "city", "year", "river", "king", "war", "paris", "london",
];

/// Deterministic in-process backend.
///
/// Tokens are whitespace-separated. A token's logprob is
/// `-((hash(token, seed) mod 1000) / 1000 + 0.05)`. Embeddings are Gaussian
/// draws from an RNG seeded by `hash(text, seed)`. Every output is a pure
/// function of its inputs, so repeated calls are byte-identical.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    dim: usize,
    scripted: HashMap<String, String>,
    fixed_embeddings: HashMap<String, Vec<f64>>,
    failing_prompts: HashSet<String>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: 32,
            scripted: HashMap::new(),
            fixed_embeddings: HashMap::new(),
            failing_prompts: HashSet::new(),
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    /// Always answer `prompt` with `response`.
    pub fn script(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.scripted.insert(prompt.into(), response.into());
        self
    }

    pub fn script_all<I: IntoIterator<Item = (String, String)>>(mut self, pairs: I) -> Self {
        self.scripted.extend(pairs);
        self
    }

    /// Use `values` as the raw embedding of `text`.
    pub fn fix_embedding(mut self, text: impl Into<String>, values: Vec<f64>) -> Self {
        self.fixed_embeddings.insert(text.into(), values);
        self
    }

    pub fn fix_embeddings<I: IntoIterator<Item = (String, Vec<f64>)>>(mut self, pairs: I) -> Self {
        self.fixed_embeddings.extend(pairs);
        self
    }

    /// Generation for `prompt` fails with a retriable backend error.
    pub fn fail_on(mut self, prompt: impl Into<String>) -> Self {
        self.failing_prompts.insert(prompt.into());
        self
    }

    pub fn token_logprob(&self, token: &str) -> f64 {
        let h = stable_hash(&[token.as_bytes(), &self.seed.to_le_bytes()]);
        -((h % 1000) as f64 / 1000.0 + 0.05)
    }

    fn sample(&self, model_ref: &str, prompt: &str, decode: &DecodeParams, sample: u32) -> GenerationResult {
        let input_tokens = prompt.split_whitespace().count() as u64;
        let tokens: Vec<String> = match self.scripted.get(prompt) {
            Some(text) => text.split_whitespace().map(str::to_string).collect(),
            None => {
                let key = [
                    model_ref.as_bytes(),
                    prompt.as_bytes(),
                    &self.seed.to_le_bytes(),
                    &decode.temperature.to_le_bytes(),
                    &decode.top_p.to_le_bytes(),
                    &sample.to_le_bytes(),
                ];
                let base = stable_hash(&key);
                let mut candidates: Vec<String> = prompt.split_whitespace().map(str::to_lowercase).collect();
                candidates.extend(VOCAB.iter().map(|s| s.to_string()));
                let len = 1 + (base % 8) as usize;
                (0..len)
                    .map(|j| {
                        let h = stable_hash(&[&base.to_le_bytes(), &(j as u64).to_le_bytes()]);
                        candidates[(h % candidates.len() as u64) as usize].clone()
                    })
                    .collect()
            }
        };
        let tokens: Vec<String> = tokens.into_iter().take(decode.max_tokens as usize).collect();
        let token_logprobs: Vec<f64> = tokens.iter().map(|t| self.token_logprob(t)).collect();
        let top_alternatives = if decode.logprobs_k == 0 {
            Vec::new()
        } else {
            tokens
                .iter()
                .zip(&token_logprobs)
                .enumerate()
                .map(|(pos, (tok, lp))| self.alternatives(tok, *lp, pos, decode.logprobs_k as usize))
                .collect()
        };
        GenerationResult {
            text: tokens.join(" "),
            usage: Usage {
                input_tokens: if sample == 0 { input_tokens } else { 0 },
                output_tokens: tokens.len() as u64,
            },
            tokens,
            token_logprobs,
            top_alternatives,
        }
    }

    /// The chosen token first, then `k - 1` distinct vocabulary tokens sharing
    /// the remaining mass with a residual left uncovered.
    fn alternatives(&self, token: &str, logprob: f64, pos: usize, k: usize) -> Vec<(String, f64)> {
        let mut out = vec![(token.to_string(), logprob)];
        let rest = 1.0 - logprob.exp();
        let others: Vec<&str> = VOCAB.iter().copied().filter(|v| *v != token).collect();
        let start = stable_hash(&[token.as_bytes(), &(pos as u64).to_le_bytes(), &self.seed.to_le_bytes()]) as usize;
        let picks: Vec<(&str, f64)> = (0..k.saturating_sub(1).min(others.len()))
            .map(|j| {
                let tok = others[(start + j) % others.len()];
                let w = (stable_hash(&[tok.as_bytes(), &start.to_le_bytes()]) % 1000 + 1) as f64;
                (tok, w)
            })
            .collect();
        let total: f64 = picks.iter().map(|(_, w)| w).sum::<f64>() + 1000.0;
        for (tok, w) in picks {
            let p = rest * w / total;
            if p > 0.0 {
                out.push((tok.to_string(), p.ln()));
            }
        }
        out
    }

    fn raw_embedding(&self, text: &str) -> Vec<f64> {
        if let Some(v) = self.fixed_embeddings.get(text) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[text.as_bytes(), &self.seed.to_le_bytes()]));
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl Backend for MockBackend {
    fn name(&self) -> String {
        "mock".into()
    }

    fn generate(&self, model_ref: &str, prompt: &str, decode: &DecodeParams) -> Result<Vec<GenerationResult>, GatewayError> {
        if self.failing_prompts.contains(prompt) {
            return Err(GatewayError::Backend { backend: self.name(), message: "injected failure".into(), retriable: true });
        }
        Ok((0..decode.num_samples).map(|i| self.sample(model_ref, prompt, decode, if decode.temperature == 0.0 { 0 } else { i })).collect())
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts.iter().map(|t| self.raw_embedding(t)).collect())
    }

    fn embedding_model(&self) -> String {
        "mock-embed".into()
    }
}
