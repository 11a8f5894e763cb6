//! Run configuration: a key-value tree (TOML or JSON) plus dotted overrides
//! such as `al=huds al.query_size=0.01 labeller.price.input_per_1m=2`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{BackendDescriptor, BackendKind, DecodeParams, RetryPolicy};
use crate::labeling::PriceSheet;
use crate::metrics::MetricId;
use crate::strategy::STRATEGY_IDS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration: {}", .errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ConfigError {
    pub errors: Vec<FieldError>,
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { errors: vec![FieldError { field: field.into(), message: message.into() }] }
    }

    pub fn fields(&self) -> Vec<&str> {
        self.errors.iter().map(|e| e.field.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Al,
    /// Experimental design: one selection before any training.
    Ed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlConfig {
    pub strategy: String,
    pub mode: Mode,
    pub init_query_size: f64,
    pub query_size: f64,
    pub num_iterations: u32,
    pub budget: Option<f64>,
    /// Strategy parameters (`alpha`, `lambda`, `beta`, `num_strata`, ...).
    pub params: BTreeMap<String, f64>,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            strategy: "random".into(),
            mode: Mode::Al,
            init_query_size: 0.01,
            query_size: 0.01,
            num_iterations: 20,
            budget: None,
            params: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub name: Option<String>,
    pub path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub input_field: String,
    pub references_field: Option<String>,
    pub id_field: Option<String>,
    /// Share of the dataset held out as the test split; 0 evaluates on a
    /// split of the labeled data instead.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            name: None,
            path: None,
            test_path: None,
            input_field: "input".into(),
            references_field: Some("output".into()),
            id_field: None,
            test_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backend: BackendKind,
    pub name: String,
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub max_concurrent: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            name: "mock-model".into(),
            base_url: None,
            api_key_env: None,
            max_concurrent: 4,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

impl ModelConfig {
    pub fn descriptor(&self, seed: u64) -> BackendDescriptor {
        BackendDescriptor {
            kind: self.backend,
            base_url: self.base_url.clone(),
            api_key_env: self.api_key_env.clone(),
            model: self.name.clone(),
            max_concurrent: self.max_concurrent,
            retry: self.retry.clone(),
            timeout_secs: self.timeout_secs,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub logprobs_k: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let d = DecodeParams::default();
        Self { temperature: d.temperature, top_p: d.top_p, max_tokens: d.max_tokens, logprobs_k: d.logprobs_k }
    }
}

impl GenerationConfig {
    pub fn decode(&self) -> DecodeParams {
        DecodeParams {
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            num_samples: 1,
            logprobs_k: self.logprobs_k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabellerKind {
    Human,
    ApiLlm,
    LocalLlm,
    #[default]
    Oracle,
    NoisyOracle,
}

impl LabellerKind {
    pub fn is_llm(self) -> bool {
        matches!(self, LabellerKind::ApiLlm | LabellerKind::LocalLlm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabellerParameters {
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub parallelism: usize,
}

impl Default for LabellerParameters {
    fn default() -> Self {
        Self { model: String::new(), max_tokens: 256, temperature: 0.0, parallelism: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceConfig {
    pub input_per_1m: f64,
    pub output_per_1m: f64,
    pub batch_discount: f64,
    /// Optional flat price per human label.
    pub per_label: Option<f64>,
}

impl Default for PriceConfig {
    fn default() -> Self {
        let p = PriceSheet::default();
        Self { input_per_1m: p.input_per_1m, output_per_1m: p.output_per_1m, batch_discount: p.batch_discount, per_label: None }
    }
}

impl PriceConfig {
    pub fn sheet(&self) -> PriceSheet {
        PriceSheet { input_per_1m: self.input_per_1m, output_per_1m: self.output_per_1m, batch_discount: self.batch_discount }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabellerConfig {
    #[serde(rename = "type")]
    pub kind: LabellerKind,
    pub parameters: LabellerParameters,
    pub price: PriceConfig,
    /// Name of the environment variable holding the agent's API key.
    pub api_key: Option<String>,
    pub base_url: Option<String>,
    pub prompt_template: String,
    pub batch: bool,
    /// Wrong-label probability of the noisy oracle.
    pub error_rate: f64,
    pub lease_secs: u64,
}

impl Default for LabellerConfig {
    fn default() -> Self {
        Self {
            kind: LabellerKind::Oracle,
            parameters: LabellerParameters::default(),
            price: PriceConfig::default(),
            api_key: None,
            base_url: None,
            prompt_template: "{input}".into(),
            batch: false,
            error_rate: 0.0,
            lease_secs: 30 * 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    #[default]
    Noop,
    Command,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub adapter: AdapterKind,
    /// Program and leading arguments for the command adapter.
    pub command: Vec<String>,
    pub url: Option<String>,
    pub work_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    /// Forwarded verbatim to the adapter.
    pub hyperparams: BTreeMap<String, Value>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            adapter: AdapterKind::Noop,
            command: Vec::new(),
            url: None,
            work_dir: None,
            timeout_secs: 24 * 3600,
            hyperparams: default_hyperparams(),
        }
    }
}

/// Fine-tuning defaults used for the reference experiments.
pub fn default_hyperparams() -> BTreeMap<String, Value> {
    use serde_json::json;
    [
        ("num_epochs", json!(5)),
        ("train_batch_size", json!(16)),
        ("eval_batch_size", json!(16)),
        ("gradient_accumulation_steps", json!(1)),
        ("learning_rate", json!(3e-5)),
        ("warmup_ratio", json!(0.03)),
        ("weight_decay", json!(0.01)),
        ("max_grad_norm", json!(1.0)),
        ("early_stopping_patience", json!(5)),
        ("optimizer", json!("adamw_hf")),
        ("peft", json!("lora")),
        ("lora_r", json!(16)),
        ("lora_alpha", json!(16)),
        ("lora_dropout", json!(0.0)),
        ("lora_bias", json!("none")),
        ("inference_batch_size", json!(16)),
        ("gpu_memory_utilization", json!(0.5)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub metrics: Vec<String>,
    pub additional_metrics: Vec<String>,
    /// Share of the labeled set held out for evaluation when there is no test split.
    pub eval_split: f64,
    /// Evaluation is skipped (recorded as `skipped_eval`) below this many instances.
    pub min_eval_size: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { metrics: vec!["exact_match".into()], additional_metrics: Vec::new(), eval_split: 0.2, min_eval_size: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoppingCriterion {
    BudgetExhausted,
    LabeledCount { value: usize },
    MetricThreshold { metric: String, value: f64 },
    IterationLimit { value: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub al: AlConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub generation: GenerationConfig,
    pub labeller: LabellerConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    /// Extra stopping criteria; the iteration limit and budget are implied by `al`.
    pub stopping: Vec<StoppingCriterion>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            al: AlConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            generation: GenerationConfig::default(),
            labeller: LabellerConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            stopping: Vec::new(),
        }
    }
}

fn doc_error(e: impl fmt::Display) -> ConfigError {
    ConfigError::field("document", e.to_string())
}

/// Parses an override value: JSON when it parses (numbers, booleans, quoted
/// strings, arrays, null), a bracketed comma list, or else a bare string.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if let Some(inner) = raw.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        return Value::Array(
            inner.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse_value).collect(),
        );
    }
    Value::String(raw.to_string())
}

fn set_path(root: &mut Value, path: &[&str], value: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    for (i, key) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::field(path[..i].join("."), "is not a table"))?;
        if i + 1 == path.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Err(ConfigError::field("override", "empty key"))
}

fn check_size(errors: &mut Vec<FieldError>, field: &str, v: f64) {
    let ok = v.is_finite() && v > 0.0 && (v < 1.0 || v.fract() == 0.0);
    if !ok {
        errors.push(FieldError {
            field: field.into(),
            message: format!("must be a fraction in (0, 1) or a positive whole count, got {v}"),
        });
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(doc_error)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(s).map_err(doc_error)
    }

    pub fn from_json_value(v: Value) -> Result<Self, ConfigError> {
        serde_json::from_value(v).map_err(doc_error)
    }

    /// Loads `.toml` or `.json` by extension.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::field("document", format!("cannot read {}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_json_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Applies `key=value` overrides. Group shorthands: `al=<strategy>`,
    /// `labeller=<type>`, `model=<name>`, and `data=<preset name or path>`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        let mut tree = self.to_json_value();
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::field(o, "override must look like key=value"))?;
            let key = key.trim();
            match key {
                "al" => set_path(&mut tree, &["al", "strategy"], Value::String(raw.trim().into()))?,
                "labeller" => set_path(&mut tree, &["labeller", "type"], Value::String(raw.trim().into()))?,
                "model" => set_path(&mut tree, &["model", "name"], Value::String(raw.trim().into()))?,
                "data" => {
                    let raw = raw.trim();
                    match crate::presets::data_preset(raw) {
                        Some(data) => {
                            tree["data"] = serde_json::to_value(data.data).expect("data serializes");
                            tree["evaluation"]["metrics"] = serde_json::to_value(data.metrics).expect("list serializes");
                        }
                        None => set_path(&mut tree, &["data", "path"], Value::String(raw.into()))?,
                    }
                }
                _ => {
                    let path: Vec<&str> = key.split('.').collect();
                    if path.iter().any(|p| p.is_empty()) {
                        return Err(ConfigError::field(key, "malformed key"));
                    }
                    set_path(&mut tree, &path, parse_value(raw))?;
                }
            }
        }
        *self = serde_json::from_value(tree).map_err(doc_error)?;
        Ok(())
    }

    /// Normalizes mode-dependent fields: experimental design runs exactly one round.
    pub fn normalized(mut self) -> Self {
        if self.al.mode == Mode::Ed && self.al.num_iterations != 1 {
            tracing::info!(requested = self.al.num_iterations, "experimental design forces num_iterations = 1");
            self.al.num_iterations = 1;
        }
        self
    }

    /// All metrics to compute: `evaluation.metrics` then any additional ones.
    pub fn metric_ids(&self) -> Result<Vec<MetricId>, ConfigError> {
        let mut out = Vec::new();
        for (field, names) in
            [("evaluation.metrics", &self.evaluation.metrics), ("evaluation.additional_metrics", &self.evaluation.additional_metrics)]
        {
            for n in names {
                let m: MetricId = n.parse().map_err(|_| ConfigError::field(field, format!("unknown metric `{n}`")))?;
                if !out.contains(&m) {
                    out.push(m);
                }
            }
        }
        Ok(out)
    }

    /// Stopping criteria in effect: the explicit list plus the budget (when
    /// set) and the iteration limit implied by `al`.
    pub fn criteria(&self) -> Vec<StoppingCriterion> {
        let mut c = self.stopping.clone();
        if self.al.budget.is_some() && !c.contains(&StoppingCriterion::BudgetExhausted) {
            c.push(StoppingCriterion::BudgetExhausted);
        }
        if !c.iter().any(|x| matches!(x, StoppingCriterion::IterationLimit { .. })) {
            c.push(StoppingCriterion::IterationLimit { value: self.al.num_iterations });
        }
        c
    }

    /// Field-level validation against the built-in strategy catalog.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with(&STRATEGY_IDS)
    }

    pub fn validate_with(&self, strategies: &[&str]) -> Result<(), ConfigError> {
        let mut e: Vec<FieldError> = Vec::new();
        let mut push = |field: &str, message: String| e.push(FieldError { field: field.into(), message });

        if !strategies.contains(&self.al.strategy.as_str()) {
            push("al.strategy", format!("unknown strategy `{}`", self.al.strategy));
        }
        let mut sizes = Vec::new();
        check_size(&mut sizes, "al.init_query_size", self.al.init_query_size);
        check_size(&mut sizes, "al.query_size", self.al.query_size);
        for s in sizes {
            push(&s.field, s.message);
        }
        if self.al.mode == Mode::Al && self.al.num_iterations == 0 {
            push("al.num_iterations", "must be >= 1".into());
        }
        if let Some(b) = self.al.budget {
            if !(b.is_finite() && b > 0.0) {
                push("al.budget", format!("must be a positive amount, got {b}"));
            }
        }
        for (k, v) in &self.al.params {
            if !v.is_finite() {
                push(&format!("al.params.{k}"), "must be finite".into());
            }
        }

        if !(0.0..1.0).contains(&self.data.test_fraction) {
            push("data.test_fraction", format!("must be in [0, 1), got {}", self.data.test_fraction));
        }
        if self.data.input_field.trim().is_empty() {
            push("data.input_field", "must name the input column".into());
        }

        if self.model.backend == BackendKind::Remote && self.model.base_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
            push("model.base_url", "required for a remote backend".into());
        }
        if self.model.max_concurrent == 0 {
            push("model.max_concurrent", "must be >= 1".into());
        }

        let g = &self.generation;
        if !(g.temperature >= 0.0 && g.temperature.is_finite()) {
            push("generation.temperature", format!("must be >= 0, got {}", g.temperature));
        }
        if !(g.top_p > 0.0 && g.top_p <= 1.0) {
            push("generation.top_p", format!("must be in (0, 1], got {}", g.top_p));
        }
        if g.max_tokens == 0 {
            push("generation.max_tokens", "must be >= 1".into());
        }

        let l = &self.labeller;
        for (field, v) in [("labeller.price.input_per_1m", l.price.input_per_1m), ("labeller.price.output_per_1m", l.price.output_per_1m)] {
            if !(v >= 0.0 && v.is_finite()) {
                push(field, format!("must be >= 0, got {v}"));
            }
        }
        if !(l.price.batch_discount > 0.0 && l.price.batch_discount <= 1.0) {
            push("labeller.price.batch_discount", format!("must be in (0, 1], got {}", l.price.batch_discount));
        }
        if let Some(p) = l.price.per_label {
            if !(p >= 0.0 && p.is_finite()) {
                push("labeller.price.per_label", format!("must be >= 0, got {p}"));
            }
        }
        if !l.prompt_template.contains("{input}") {
            push("labeller.prompt_template", "must contain the {input} placeholder".into());
        }
        if l.kind.is_llm() {
            if l.parameters.model.trim().is_empty() {
                push("labeller.parameters.model", "an LLM labeller needs a model".into());
            }
            if l.parameters.max_tokens == 0 {
                push("labeller.parameters.max_tokens", "must be >= 1".into());
            }
        }
        if l.kind == LabellerKind::ApiLlm && l.base_url.is_some() && l.api_key.as_deref().is_some_and(|k| k.trim().is_empty()) {
            push("labeller.api_key", "must name an environment variable".into());
        }
        if !(0.0..=1.0).contains(&l.error_rate) {
            push("labeller.error_rate", format!("must be in [0, 1], got {}", l.error_rate));
        }

        match self.training.adapter {
            AdapterKind::Command if self.training.command.is_empty() => {
                push("training.command", "the command adapter needs a program".into())
            }
            AdapterKind::Http if self.training.url.is_none() => push("training.url", "the http adapter needs a url".into()),
            _ => {}
        }

        let metrics = self.metric_ids();
        if let Err(err) = &metrics {
            e.extend(err.errors.clone());
        }
        let ev = &self.evaluation;
        if !(ev.eval_split > 0.0 && ev.eval_split < 1.0) {
            e.push(FieldError { field: "evaluation.eval_split".into(), message: format!("must be in (0, 1), got {}", ev.eval_split) });
        }

        for (i, c) in self.stopping.iter().enumerate() {
            let field = |name: &str| format!("stopping[{i}].{name}");
            match c {
                StoppingCriterion::LabeledCount { value: 0 } => {
                    e.push(FieldError { field: field("value"), message: "must be >= 1".into() })
                }
                StoppingCriterion::IterationLimit { value: 0 } => {
                    e.push(FieldError { field: field("value"), message: "must be >= 1".into() })
                }
                StoppingCriterion::MetricThreshold { value, .. } if !value.is_finite() => {
                    e.push(FieldError { field: field("value"), message: "must be finite".into() })
                }
                StoppingCriterion::BudgetExhausted if self.al.budget.is_none() => e.push(FieldError {
                    field: field("kind"),
                    message: "budget criterion needs al.budget".into(),
                }),
                _ => {}
            }
        }

        if e.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { errors: e })
        }
    }
}
