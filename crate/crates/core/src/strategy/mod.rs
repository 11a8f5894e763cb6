//! Query strategies: rank or directly select unlabeled instances.
//!
//! Scoring strategies produce a [`ScoreVector`] (higher = more informative)
//! and select through [`select_top_k`]; greedy strategies (coreset, facility
//! location) return a selection order directly. Every tie is broken by
//! ascending id, and contexts are stored sorted by id, so results do not
//! depend on the order in which instances were supplied.

mod context;
mod diversity;
mod facility;
mod registry;
mod uncertainty;

pub use context::{LabeledView, StrategyContext, UnlabeledView};
pub use diversity::{select_coreset, score_idds, CoresetSelection};
pub use facility::{facility_value, select_facility_location, FacilityTrace};
pub use registry::{GenerationRequest, Requirements, Selection, Strategy, StrategyRegistry, STRATEGY_IDS};
pub use uncertainty::{
    delfy_weight, normrank, score_bleuvar, score_huds, score_mte, score_nsp, score_random, score_te_delfy,
};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("context error: no cached generation for `{0}`")]
    MissingGeneration(String),
    #[error("context error: no cached embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("context error: `{id}` has {have} cached samples, {need} required")]
    InsufficientSamples { id: String, have: usize, need: usize },
    #[error("capability error: {0}")]
    Capability(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown strategy `{0}`")]
    Unknown(String),
    #[error("score for `{0}` is not finite")]
    NonFinite(String),
}

/// Per-instance informativeness for one query round. Higher is more informative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(Vec<(String, f64)>);

impl ScoreVector {
    pub fn new(scores: Vec<(String, f64)>) -> Result<Self, StrategyError> {
        let mut seen = std::collections::HashSet::new();
        for (id, s) in &scores {
            if !s.is_finite() {
                return Err(StrategyError::NonFinite(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(StrategyError::InvalidParam(format!("duplicate id `{id}` in score vector")));
            }
        }
        Ok(Self(scores))
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.0
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.0.iter().find(|(i, _)| i == id).map(|(_, s)| *s)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ids ordered most-informative first, ties by ascending id.
    pub fn ranking(&self) -> Vec<String> {
        let mut v: Vec<&(String, f64)> = self.0.iter().collect();
        v.sort_by(|a, b| by_score_then_id(a.1, &a.0, b.1, &b.0));
        v.into_iter().map(|(id, _)| id.clone()).collect()
    }
}

fn by_score_then_id(sa: f64, ia: &str, sb: f64, ib: &str) -> Ordering {
    sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then_with(|| ia.cmp(ib))
}

/// The `k` highest-scoring ids, ties by ascending id; `k` is clamped to the vector length.
pub fn select_top_k(scores: &ScoreVector, k: usize) -> Vec<String> {
    let mut ranking = scores.ranking();
    ranking.truncate(k);
    ranking
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn unit(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(pairs: &[(&str, f64)]) -> ScoreVector {
        ScoreVector::new(pairs.iter().map(|(i, s)| (i.to_string(), *s)).collect()).unwrap()
    }

    #[test]
    fn top_k_breaks_ties_by_id() {
        assert_eq!(select_top_k(&sv(&[("a", 0.9), ("b", 0.1), ("c", 0.9)]), 2), vec!["a", "c"]);
    }

    #[test]
    fn top_k_zero_and_clamp() {
        let s = sv(&[("a", 0.2), ("b", 0.5), ("c", 0.1)]);
        assert!(select_top_k(&s, 0).is_empty());
        assert_eq!(select_top_k(&s, 10), vec!["b", "a", "c"]);
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(ScoreVector::new(vec![("a".into(), f64::NAN)]).is_err());
        assert!(ScoreVector::new(vec![("a".into(), 1.0), ("a".into(), 2.0)]).is_err());
    }
}
