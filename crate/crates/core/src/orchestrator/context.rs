use std::collections::{BTreeMap, HashMap};

use crate::gateway::{DecodeParams, Gateway, GatewayError, GenerationResult};
use crate::pool::Pool;
use crate::strategy::{LabeledView, Requirements, StrategyContext, UnlabeledView};

const EMBED_BATCH: usize = 256;

/// Generation requests differ by sample count and temperature.
type GenKey = (String, String, u32, u64);

/// Model outputs reused across rounds. Generations are keyed by
/// `(model_ref, id, request)`, so a new model version refreshes them;
/// embeddings come from a fixed embedding model and are keyed by
/// `(embedding model, id)`.
#[derive(Debug, Default, Clone)]
pub struct ContextCache {
    embeddings: HashMap<(String, String), Vec<f64>>,
    generations: HashMap<GenKey, Vec<GenerationResult>>,
}

impl ContextCache {
    pub fn embedding_count(&self) -> usize {
        self.embeddings.len()
    }

    pub fn generation_count(&self) -> usize {
        self.generations.len()
    }
}

/// Builds the strategy context for the current pool, fetching only the
/// model outputs the strategy declared and the cache lacks.
pub fn prepare_context(
    pool: &Pool,
    requirements: &Requirements,
    gateway: &Gateway,
    decode: &DecodeParams,
    cache: &mut ContextCache,
    params: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<StrategyContext, GatewayError> {
    let unlabeled: Vec<UnlabeledView> =
        pool.unlabeled().map(|i| UnlabeledView { id: i.id.clone(), input: i.input.clone() }).collect();
    let labeled: Vec<LabeledView> = pool
        .labeled()
        .map(|i| LabeledView { id: i.id.clone(), input: i.input.clone(), annotation: i.annotation.clone().unwrap_or_default() })
        .collect();
    let mut ctx = StrategyContext::new(unlabeled, labeled).with_seed(seed);
    ctx.params = params.clone();

    if requirements.embeddings {
        let model = gateway.embedding_model();
        let wanted: Vec<(&str, &str)> = pool
            .unlabeled()
            .chain(pool.labeled())
            .map(|i| (i.id.as_str(), i.input.as_str()))
            .collect();
        let missing: Vec<(&str, &str)> =
            wanted.iter().copied().filter(|(id, _)| !cache.embeddings.contains_key(&(model.clone(), id.to_string()))).collect();
        for chunk in missing.chunks(EMBED_BATCH) {
            let texts: Vec<String> = chunk.iter().map(|(_, t)| t.to_string()).collect();
            let vectors = gateway.embed(&texts)?;
            for ((id, _), v) in chunk.iter().zip(vectors) {
                cache.embeddings.insert((model.clone(), id.to_string()), v.values);
            }
        }
        for (id, _) in wanted {
            let v = cache.embeddings[&(model.clone(), id.to_string())].clone();
            ctx.embeddings.insert(id.to_string(), v);
        }
    }

    if let Some(req) = requirements.generation {
        let request = DecodeParams { num_samples: req.num_samples, temperature: req.temperature, ..decode.clone() };
        let model_ref = pool.state().model_ref.clone();
        let key = |id: &str| (model_ref.clone(), id.to_string(), req.num_samples, req.temperature.to_bits());
        let missing: Vec<(String, String)> = pool
            .unlabeled()
            .filter(|i| !cache.generations.contains_key(&key(&i.id)))
            .map(|i| (i.id.clone(), i.input.clone()))
            .collect();
        if !missing.is_empty() {
            let prompts: Vec<String> = missing.iter().map(|(_, p)| p.clone()).collect();
            let results = gateway.generate_many(&model_ref, &prompts, &request)?;
            for ((id, _), r) in missing.into_iter().zip(results) {
                cache.generations.insert(key(&id), r);
            }
        }
        for inst in pool.unlabeled() {
            ctx.generations.insert(inst.id.clone(), cache.generations[&key(&inst.id)].clone());
        }
    }
    Ok(ctx)
}
