//! Scoring strategies driven by model outputs, plus the random baseline.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{by_score_then_id, dot, unit, ScoreVector, StrategyContext, StrategyError};
use crate::gateway::GenerationResult;
use crate::metrics::sentence_bleu;
use crate::text::lower_tokens;

/// Seeded random permutation; the instance at position `p` of `n` scores `n - p`.
pub fn score_random(ctx: &StrategyContext) -> ScoreVector {
    let mut ids: Vec<&str> = ctx.unlabeled().iter().map(|u| u.id.as_str()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.seed));
    let n = ids.len();
    ScoreVector(ids.into_iter().enumerate().map(|(p, id)| (id.to_string(), (n - p) as f64)).collect())
}

/// `1 - exp(mean token logprob)`; an empty generation scores 0.
pub fn score_nsp(ctx: &StrategyContext) -> Result<ScoreVector, StrategyError> {
    score_each(ctx, |id| {
        let g = ctx.greedy(id)?;
        if g.token_logprobs.is_empty() {
            return Ok(0.0);
        }
        let mean = g.token_logprobs.iter().sum::<f64>() / g.token_logprobs.len() as f64;
        Ok(1.0 - mean.exp())
    })
}

/// Entropy (nats) of one position's truncated distribution. Mass not covered
/// by the listed alternatives is treated as a single residual outcome.
fn position_entropy(alternatives: &[(String, f64)]) -> f64 {
    let mut h = 0.0;
    let mut covered = 0.0;
    for (_, lp) in alternatives {
        let p = lp.exp();
        covered += p;
        if p > 0.0 {
            h -= p * lp;
        }
    }
    let r = 1.0 - covered;
    if r > 0.0 {
        h -= r * r.ln();
    }
    h
}

fn mean_token_entropy(id: &str, g: &GenerationResult) -> Result<f64, StrategyError> {
    if g.tokens.is_empty() && g.top_alternatives.is_empty() {
        return Ok(0.0);
    }
    if g.top_alternatives.len() != g.tokens.len() || g.top_alternatives.iter().any(Vec::is_empty) {
        return Err(StrategyError::Capability(format!("generation for `{id}` carries no top alternatives")));
    }
    let total: f64 = g.top_alternatives.iter().map(|a| position_entropy(a)).sum();
    Ok(total / g.top_alternatives.len() as f64)
}

/// Mean per-position entropy of the greedy generation.
pub fn score_mte(ctx: &StrategyContext) -> Result<ScoreVector, StrategyError> {
    score_each(ctx, |id| mean_token_entropy(id, ctx.greedy(id)?))
}

/// Weight of a token seen `in_unlabeled` times in the unlabeled inputs and
/// `in_labeled` times in the labeled inputs: `ln(1 + cU) * exp(-lambda * cL)`.
pub fn delfy_weight(in_unlabeled: usize, in_labeled: usize, lambda: f64) -> f64 {
    (1.0 + in_unlabeled as f64).ln() * (-lambda * in_labeled as f64).exp()
}

/// Maps values to `[0, 1]` by rank: the largest gets 1, the smallest 0, ties
/// ordered by ascending id. A single value maps to 1.
pub fn normrank(values: &[(String, f64)]) -> HashMap<String, f64> {
    let mut order: Vec<&(String, f64)> = values.iter().collect();
    order.sort_by(|a, b| by_score_then_id(a.1, &a.0, b.1, &b.0));
    let n = order.len();
    order
        .into_iter()
        .enumerate()
        .map(|(p, (id, _))| {
            let r = if n <= 1 { 1.0 } else { 1.0 - p as f64 / (n - 1) as f64 };
            (id.clone(), r)
        })
        .collect()
}

/// Rank mix of token entropy and decayed log-frequency of the input's tokens:
/// `alpha * normrank(TE) + (1 - alpha) * normrank(delfy)`.
pub fn score_te_delfy(ctx: &StrategyContext, alpha: f64, lambda: f64) -> Result<ScoreVector, StrategyError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(StrategyError::InvalidParam(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if !(lambda >= 0.0) {
        return Err(StrategyError::InvalidParam(format!("lambda must be >= 0, got {lambda}")));
    }
    let te = score_mte(ctx)?;

    let mut count_u: HashMap<String, usize> = HashMap::new();
    let mut count_l: HashMap<String, usize> = HashMap::new();
    let unl_tokens: Vec<Vec<String>> = ctx.unlabeled().iter().map(|u| lower_tokens(&u.input)).collect();
    for toks in &unl_tokens {
        for t in toks {
            *count_u.entry(t.clone()).or_default() += 1;
        }
    }
    for l in ctx.labeled() {
        for t in lower_tokens(&l.input) {
            *count_l.entry(t).or_default() += 1;
        }
    }
    let delfy: Vec<(String, f64)> = ctx
        .unlabeled()
        .iter()
        .zip(&unl_tokens)
        .map(|(u, toks)| {
            let score = if toks.is_empty() {
                0.0
            } else {
                let sum: f64 = toks
                    .iter()
                    .map(|t| delfy_weight(count_u[t], count_l.get(t).copied().unwrap_or(0), lambda))
                    .sum();
                sum / toks.len() as f64
            };
            (u.id.clone(), score)
        })
        .collect();

    let te_rank = normrank(te.entries());
    let delfy_rank = normrank(&delfy);
    ScoreVector::new(
        ctx.unlabeled()
            .iter()
            .map(|u| (u.id.clone(), alpha * te_rank[&u.id] + (1.0 - alpha) * delfy_rank[&u.id]))
            .collect(),
    )
}

/// Sum over ordered sample pairs of `(1 - BLEU(y_i, y_j))^2`, using the first
/// `k_samples` cached stochastic generations.
pub fn score_bleuvar(ctx: &StrategyContext, k_samples: usize) -> Result<ScoreVector, StrategyError> {
    score_each(ctx, |id| {
        let gens = ctx.generations.get(id).ok_or_else(|| StrategyError::MissingGeneration(id.to_string()))?;
        if gens.len() < k_samples {
            return Err(StrategyError::InsufficientSamples { id: id.to_string(), have: gens.len(), need: k_samples });
        }
        let samples: Vec<Vec<String>> = gens[..k_samples].iter().map(|g| lower_tokens(&g.text)).collect();
        let mut total = 0.0;
        for (i, yi) in samples.iter().enumerate() {
            for (j, yj) in samples.iter().enumerate() {
                if i != j {
                    let d = 1.0 - sentence_bleu(yi, yj);
                    total += d * d;
                }
            }
        }
        Ok(total)
    })
}

/// Uncertainty (min-max normalized mean negative log-likelihood) mixed with
/// the cosine distance to the centroid of the instance's uncertainty stratum:
/// `beta * u + (1 - beta) * (1 - cos(e, c_stratum))`.
pub fn score_huds(ctx: &StrategyContext, beta: f64, num_strata: usize) -> Result<ScoreVector, StrategyError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(StrategyError::InvalidParam(format!("beta must be in [0, 1], got {beta}")));
    }
    if num_strata == 0 {
        return Err(StrategyError::InvalidParam("num_strata must be >= 1".into()));
    }
    let unl = ctx.unlabeled();
    if unl.is_empty() {
        return Ok(ScoreVector(Vec::new()));
    }
    let mut raw = Vec::with_capacity(unl.len());
    let mut emb = Vec::with_capacity(unl.len());
    for u in unl {
        let g = ctx.greedy(&u.id)?;
        let nll = if g.token_logprobs.is_empty() {
            0.0
        } else {
            -g.token_logprobs.iter().sum::<f64>() / g.token_logprobs.len() as f64
        };
        raw.push(nll);
        emb.push(unit(ctx.embedding(&u.id)?));
    }
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let u: Vec<f64> = raw.iter().map(|&x| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 }).collect();

    // Strata: contiguous blocks of the descending-uncertainty order.
    let mut order: Vec<usize> = (0..unl.len()).collect();
    order.sort_by(|&a, &b| by_score_then_id(u[a], &unl[a].id, u[b], &unl[b].id));
    let strata = num_strata.min(unl.len());
    let base = unl.len() / strata;
    let extra = unl.len() % strata;
    let mut stratum_of = vec![0usize; unl.len()];
    let mut centroids = Vec::with_capacity(strata);
    let mut start = 0;
    for s in 0..strata {
        let size = base + usize::from(s < extra);
        let members = &order[start..start + size];
        let dim = emb[members[0]].len();
        let mut c = vec![0.0; dim];
        for &m in members {
            stratum_of[m] = s;
            for (ci, ei) in c.iter_mut().zip(&emb[m]) {
                *ci += ei;
            }
        }
        for ci in &mut c {
            *ci /= size as f64;
        }
        centroids.push(c);
        start += size;
    }

    ScoreVector::new(
        unl.iter()
            .enumerate()
            .map(|(i, inst)| {
                let c = &centroids[stratum_of[i]];
                let cn = dot(c, c).sqrt();
                let cos = if cn == 0.0 { 0.0 } else { dot(&emb[i], c) / cn };
                (inst.id.clone(), beta * u[i] + (1.0 - beta) * (1.0 - cos))
            })
            .collect(),
    )
}

fn score_each<F>(ctx: &StrategyContext, f: F) -> Result<ScoreVector, StrategyError>
where
    F: Fn(&str) -> Result<f64, StrategyError>,
{
    let scores = ctx.unlabeled().iter().map(|u| Ok((u.id.clone(), f(&u.id)?))).collect::<Result<Vec<_>, _>>()?;
    ScoreVector::new(scores)
}
