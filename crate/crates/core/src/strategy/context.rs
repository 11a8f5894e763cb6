use std::collections::{BTreeMap, HashMap};

use crate::gateway::GenerationResult;

use super::StrategyError;

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledView {
    pub id: String,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledView {
    pub id: String,
    pub input: String,
    pub annotation: String,
}

/// Everything a strategy may look at for one query round.
///
/// Views are kept sorted by id; caches are keyed by id.
#[derive(Debug, Clone, Default)]
pub struct StrategyContext {
    unlabeled: Vec<UnlabeledView>,
    labeled: Vec<LabeledView>,
    pub embeddings: HashMap<String, Vec<f64>>,
    pub generations: HashMap<String, Vec<GenerationResult>>,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl StrategyContext {
    pub fn new(mut unlabeled: Vec<UnlabeledView>, mut labeled: Vec<LabeledView>) -> Self {
        unlabeled.sort_by(|a, b| a.id.cmp(&b.id));
        labeled.sort_by(|a, b| a.id.cmp(&b.id));
        Self { unlabeled, labeled, ..Self::default() }
    }

    /// Unlabeled ids only, with empty inputs.
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(ids.into_iter().map(|id| UnlabeledView { id: id.into(), input: String::new() }).collect(), Vec::new())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_embedding(mut self, id: impl Into<String>, v: Vec<f64>) -> Self {
        self.embeddings.insert(id.into(), v);
        self
    }

    pub fn with_generations(mut self, id: impl Into<String>, g: Vec<GenerationResult>) -> Self {
        self.generations.insert(id.into(), g);
        self
    }

    pub fn unlabeled(&self) -> &[UnlabeledView] {
        &self.unlabeled
    }

    pub fn labeled(&self) -> &[LabeledView] {
        &self.labeled
    }

    pub fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    pub(crate) fn embedding(&self, id: &str) -> Result<&[f64], StrategyError> {
        self.embeddings.get(id).map(Vec::as_slice).ok_or_else(|| StrategyError::MissingEmbedding(id.to_string()))
    }

    /// The first (greedy) generation of `id`.
    pub(crate) fn greedy(&self, id: &str) -> Result<&GenerationResult, StrategyError> {
        self.generations
            .get(id)
            .and_then(|g| g.first())
            .ok_or_else(|| StrategyError::MissingGeneration(id.to_string()))
    }
}
