//! Strategy plugin surface and the built-in catalog.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    score_bleuvar, score_huds, score_idds, score_mte, score_nsp, score_random, score_te_delfy, select_coreset,
    select_facility_location, select_top_k, ScoreVector, StrategyContext, StrategyError,
};

pub const STRATEGY_IDS: [&str; 9] = [
    "random",
    "nsp",
    "mean_token_entropy",
    "te_delfy",
    "bleuvar",
    "coreset",
    "idds",
    "facility_location",
    "huds",
];

/// Generations a strategy needs per unlabeled instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub num_samples: u32,
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn greedy() -> Self {
        Self { num_samples: 1, temperature: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Requirements {
    /// Embeddings for unlabeled and labeled instances.
    pub embeddings: bool,
    pub generation: Option<GenerationRequest>,
}

impl Requirements {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn needs_model(&self) -> bool {
        self.generation.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub ids: Vec<String>,
    /// Present for scoring strategies.
    pub scores: Option<ScoreVector>,
    pub warnings: Vec<String>,
}

pub trait Strategy: Send + Sync {
    fn id(&self) -> &str;

    fn requirements(&self, params: &BTreeMap<String, f64>) -> Requirements;

    /// Choose up to `k` unlabeled instances, most informative first.
    fn select(&self, ctx: &StrategyContext, k: usize) -> Result<Selection, StrategyError>;
}

fn param_usize(ctx: &StrategyContext, key: &str, default: usize) -> Result<usize, StrategyError> {
    let v = ctx.param(key, default as f64);
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(StrategyError::InvalidParam(format!("{key} must be a non-negative integer, got {v}")));
    }
    Ok(v as usize)
}

fn from_scores(scores: ScoreVector, k: usize) -> Selection {
    let mut warnings = Vec::new();
    if k > scores.len() {
        warnings.push(format!("requested {k} instances but only {} are unlabeled", scores.len()));
    }
    Selection { ids: select_top_k(&scores, k), scores: Some(scores), warnings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Builtin {
    Random,
    Nsp,
    Mte,
    TeDelfy,
    BleuVar,
    Coreset,
    Idds,
    FacilityLocation,
    Huds,
}

impl Builtin {
    const ALL: [Builtin; 9] = [
        Builtin::Random,
        Builtin::Nsp,
        Builtin::Mte,
        Builtin::TeDelfy,
        Builtin::BleuVar,
        Builtin::Coreset,
        Builtin::Idds,
        Builtin::FacilityLocation,
        Builtin::Huds,
    ];
}

impl Strategy for Builtin {
    fn id(&self) -> &str {
        match self {
            Builtin::Random => "random",
            Builtin::Nsp => "nsp",
            Builtin::Mte => "mean_token_entropy",
            Builtin::TeDelfy => "te_delfy",
            Builtin::BleuVar => "bleuvar",
            Builtin::Coreset => "coreset",
            Builtin::Idds => "idds",
            Builtin::FacilityLocation => "facility_location",
            Builtin::Huds => "huds",
        }
    }

    fn requirements(&self, params: &BTreeMap<String, f64>) -> Requirements {
        let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
        match self {
            Builtin::Random => Requirements::none(),
            Builtin::Nsp | Builtin::Mte | Builtin::TeDelfy => {
                Requirements { embeddings: false, generation: Some(GenerationRequest::greedy()) }
            }
            Builtin::BleuVar => Requirements {
                embeddings: false,
                generation: Some(GenerationRequest {
                    num_samples: get("k_samples", 5.0).max(1.0) as u32,
                    temperature: get("temperature", 1.0),
                }),
            },
            Builtin::Coreset | Builtin::Idds | Builtin::FacilityLocation => {
                Requirements { embeddings: true, generation: None }
            }
            Builtin::Huds => Requirements { embeddings: true, generation: Some(GenerationRequest::greedy()) },
        }
    }

    fn select(&self, ctx: &StrategyContext, k: usize) -> Result<Selection, StrategyError> {
        Ok(match self {
            Builtin::Random => from_scores(score_random(ctx), k),
            Builtin::Nsp => from_scores(score_nsp(ctx)?, k),
            Builtin::Mte => from_scores(score_mte(ctx)?, k),
            Builtin::TeDelfy => from_scores(score_te_delfy(ctx, ctx.param("alpha", 0.5), ctx.param("lambda", 1.0))?, k),
            Builtin::BleuVar => from_scores(score_bleuvar(ctx, param_usize(ctx, "k_samples", 5)?)?, k),
            Builtin::Idds => from_scores(score_idds(ctx, ctx.param("lambda", 1.0))?, k),
            Builtin::Huds => {
                from_scores(score_huds(ctx, ctx.param("beta", 0.5), param_usize(ctx, "num_strata", 5)?)?, k)
            }
            Builtin::Coreset => {
                let s = select_coreset(ctx, k)?;
                Selection { ids: s.ids, scores: None, warnings: s.warnings }
            }
            Builtin::FacilityLocation => {
                let t = select_facility_location(ctx, k, ctx.param("condition_on_labeled", 1.0) != 0.0)?;
                Selection { ids: t.ids, scores: None, warnings: t.warnings }
            }
        })
    }
}

/// Name → strategy lookup. Starts with the built-in catalog; plugins are
/// added with [`StrategyRegistry::register`].
#[derive(Clone)]
pub struct StrategyRegistry {
    entries: BTreeMap<String, Arc<dyn Strategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl std::fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        for b in Builtin::ALL {
            r.register(Arc::new(b));
        }
        r
    }

    /// Adds or replaces the strategy under its id.
    pub fn register(&mut self, strategy: Arc<dyn Strategy>) {
        self.entries.insert(strategy.id().to_string(), strategy);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Strategy>, StrategyError> {
        self.entries.get(id).cloned().ok_or_else(|| StrategyError::Unknown(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Reverse;

    impl Strategy for Reverse {
        fn id(&self) -> &str {
            "reverse_id"
        }

        fn requirements(&self, _: &BTreeMap<String, f64>) -> Requirements {
            Requirements::none()
        }

        fn select(&self, ctx: &StrategyContext, k: usize) -> Result<Selection, StrategyError> {
            let ids = ctx.unlabeled().iter().rev().take(k).map(|u| u.id.clone()).collect();
            Ok(Selection { ids, ..Selection::default() })
        }
    }

    #[test]
    fn catalog_is_complete() {
        let r = StrategyRegistry::with_defaults();
        for id in STRATEGY_IDS {
            assert_eq!(r.get(id).unwrap().id(), id);
        }
        assert!(matches!(r.get("hadas"), Err(StrategyError::Unknown(_))));
    }

    #[test]
    fn experimental_design_strategies_need_no_model() {
        let r = StrategyRegistry::with_defaults();
        let p = BTreeMap::new();
        for id in ["random", "coreset", "idds", "facility_location"] {
            assert!(!r.get(id).unwrap().requirements(&p).needs_model(), "{id}");
        }
        for id in ["nsp", "mean_token_entropy", "te_delfy", "bleuvar", "huds"] {
            assert!(r.get(id).unwrap().requirements(&p).needs_model(), "{id}");
        }
    }

    #[test]
    fn bleuvar_requests_samples() {
        let r = StrategyRegistry::with_defaults();
        let mut p = BTreeMap::new();
        p.insert("k_samples".to_string(), 3.0);
        let g = r.get("bleuvar").unwrap().requirements(&p).generation.unwrap();
        assert_eq!(g, GenerationRequest { num_samples: 3, temperature: 1.0 });
    }

    #[test]
    fn plugin_registration() {
        let mut r = StrategyRegistry::with_defaults();
        r.register(Arc::new(Reverse));
        let s = r.get("reverse_id").unwrap().select(&StrategyContext::from_ids(["a", "b", "c"]), 2).unwrap();
        assert_eq!(s.ids, vec!["c", "b"]);
    }
}
