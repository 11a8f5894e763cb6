//! OpenAI-compatible chat-completions and embeddings client.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendDescriptor, DecodeParams, GatewayError, GenerationResult, RetryPolicy, Usage};

/// Maximum `top_logprobs` accepted by OpenAI-style servers.
const MAX_TOP_LOGPROBS: u32 = 20;

pub struct OpenAiBackend {
    client: Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for OpenAiBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiBackend").field("base_url", &self.base_url).field("model", &self.model).finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    #[serde(default)]
    index: usize,
    message: ChatMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

#[derive(Deserialize, Serialize, Clone, Copy)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl OpenAiBackend {
    pub fn from_descriptor(d: &BackendDescriptor) -> Result<Self, GatewayError> {
        let base_url = d
            .base_url
            .clone()
            .ok_or_else(|| GatewayError::Precondition("remote backend requires base_url".into()))?;
        let api_key = match &d.api_key_env {
            Some(var) if !var.is_empty() => Some(std::env::var(var).map_err(|_| {
                GatewayError::Precondition(format!("environment variable `{var}` with the API key is not set"))
            })?),
            _ => None,
        };
        let client = Client::builder()
            .timeout(Duration::from_secs(d.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Precondition(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: d.model.clone(),
            api_key,
            retry: d.retry.clone(),
        })
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, GatewayError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let outcome = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        return Ok(text);
                    }
                    let retriable = status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error();
                    (format!("HTTP {status}: {}", truncate(&text, 300)), retriable)
                }
                Err(e) => (format!("transport: {e}"), true),
            };
            let (message, retriable) = outcome;
            if !retriable || attempt >= self.retry.max_retries {
                return Err(GatewayError::Backend { backend: self.name(), message, retriable });
            }
            tracing::warn!(url = %url, attempt, %message, "retrying request");
            std::thread::sleep(self.retry.delay(attempt));
            attempt += 1;
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl Backend for OpenAiBackend {
    fn name(&self) -> String {
        format!("openai-compatible:{}", self.model)
    }

    fn generate(&self, model_ref: &str, prompt: &str, decode: &DecodeParams) -> Result<Vec<GenerationResult>, GatewayError> {
        let model = if model_ref.is_empty() { self.model.as_str() } else { model_ref };
        let mut body = json!({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": decode.temperature,
            "top_p": decode.top_p,
            "max_tokens": decode.max_tokens,
            "n": decode.num_samples,
        });
        if decode.logprobs_k > 0 {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(decode.logprobs_k.min(MAX_TOP_LOGPROBS));
        }
        let text = self.post("chat/completions", &body)?;
        let mut resp: ChatResponse = serde_json::from_str(&text).map_err(|e| GatewayError::Integrity {
            backend: self.name(),
            message: format!("unparseable chat response: {e}"),
        })?;
        resp.choices.sort_by_key(|c| c.index);

        let mut results: Vec<GenerationResult> = resp
            .choices
            .into_iter()
            .map(|c| {
                let content = c.message.content.unwrap_or_default();
                let lp = c.logprobs.and_then(|l| l.content).unwrap_or_default();
                let tokens = lp.iter().map(|t| t.token.clone()).collect();
                let token_logprobs = lp.iter().map(|t| t.logprob).collect();
                let top_alternatives = if decode.logprobs_k > 0 {
                    lp.iter().map(|t| t.top_logprobs.iter().map(|a| (a.token.clone(), a.logprob)).collect()).collect()
                } else {
                    Vec::new()
                };
                GenerationResult { text: content, tokens, token_logprobs, top_alternatives, usage: Usage::default() }
            })
            .collect();

        // Usage is reported per request; attribute prompt tokens to the first
        // choice and split completion tokens so the per-result sum is exact.
        let usage = resp.usage.unwrap_or(WireUsage {
            prompt_tokens: prompt.split_whitespace().count() as u64,
            completion_tokens: results.iter().map(|r| r.tokens.len().max(r.text.split_whitespace().count()) as u64).sum(),
        });
        let n = results.len() as u64;
        if n > 0 {
            let per_token: u64 = results.iter().map(|r| r.tokens.len() as u64).sum();
            for (i, r) in results.iter_mut().enumerate() {
                r.usage.input_tokens = if i == 0 { usage.prompt_tokens } else { 0 };
                r.usage.output_tokens = if per_token == usage.completion_tokens {
                    r.tokens.len() as u64
                } else {
                    usage.completion_tokens / n + if i == 0 { usage.completion_tokens % n } else { 0 }
                };
            }
        }
        Ok(results)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = json!({ "model": self.model, "input": texts });
        let text = self.post("embeddings", &body)?;
        let mut resp: EmbeddingResponse = serde_json::from_str(&text).map_err(|e| GatewayError::Integrity {
            backend: self.name(),
            message: format!("unparseable embedding response: {e}"),
        })?;
        resp.data.sort_by_key(|d| d.index);
        Ok(resp.data.into_iter().map(|d| d.embedding).collect())
    }

    fn embedding_model(&self) -> String {
        self.model.clone()
    }
}
