//! Embedding-geometry strategies: greedy k-center (coreset) and IDDS.

use rayon::prelude::*;

use super::{dot, unit, ScoreVector, StrategyContext, StrategyError};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoresetSelection {
    pub ids: Vec<String>,
    pub warnings: Vec<String>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Greedy k-center. Each step picks the unlabeled instance farthest (Euclidean)
/// from the labeled set plus earlier picks. With nothing labeled, the first pick
/// is the smallest id.
pub fn select_coreset(ctx: &StrategyContext, k: usize) -> Result<CoresetSelection, StrategyError> {
    let unl = ctx.unlabeled();
    let mut out = CoresetSelection::default();
    let k = clamp_k(k, unl.len(), "coreset", &mut out.warnings);
    if k == 0 {
        return Ok(out);
    }
    let cand: Vec<&[f64]> = unl.iter().map(|u| ctx.embedding(&u.id)).collect::<Result<_, _>>()?;
    let centers: Vec<&[f64]> = ctx.labeled().iter().map(|l| ctx.embedding(&l.id)).collect::<Result<_, _>>()?;

    let mut taken = vec![false; unl.len()];
    let mut min_dist: Vec<f64> = cand
        .par_iter()
        .map(|c| centers.iter().map(|z| euclidean(c, z)).fold(f64::INFINITY, f64::min))
        .collect();

    for _ in 0..k {
        // `unl` is sorted by id, so the first maximum wins ties. With no
        // centers every distance is +inf and index 0 (smallest id) is chosen.
        let mut best: Option<usize> = None;
        for i in 0..unl.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k clamped to candidate count");
        taken[b] = true;
        out.ids.push(unl[b].id.clone());
        let picked = cand[b];
        min_dist.par_iter_mut().zip(&cand).for_each(|(d, c)| *d = d.min(euclidean(c, picked)));
    }
    Ok(out)
}

/// `mean_{u in U} cos(x, u) - lambda * mean_{l in L} cos(x, l)`; the second
/// term is 0 when nothing is labeled. `U` includes `x` itself.
pub fn score_idds(ctx: &StrategyContext, lambda: f64) -> Result<ScoreVector, StrategyError> {
    if !lambda.is_finite() {
        return Err(StrategyError::InvalidParam(format!("lambda must be finite, got {lambda}")));
    }
    let unl = ctx.unlabeled();
    let lab = ctx.labeled();
    let ue: Vec<Vec<f64>> = unl.iter().map(|u| ctx.embedding(&u.id).map(unit)).collect::<Result<_, _>>()?;
    let le: Vec<Vec<f64>> = lab.iter().map(|l| ctx.embedding(&l.id).map(unit)).collect::<Result<_, _>>()?;
    // Mean cosine to a set of unit vectors is the dot product with their mean.
    let mean = |vs: &[Vec<f64>]| -> Option<Vec<f64>> {
        let first = vs.first()?;
        let mut m = vec![0.0; first.len()];
        for v in vs {
            for (mi, vi) in m.iter_mut().zip(v) {
                *mi += vi;
            }
        }
        Some(m.into_iter().map(|x| x / vs.len() as f64).collect())
    };
    let mu = mean(&ue);
    let ml = mean(&le);
    ScoreVector::new(
        unl.iter()
            .zip(&ue)
            .map(|(u, x)| {
                let sim_u = mu.as_ref().map_or(0.0, |m| dot(x, m));
                let sim_l = ml.as_ref().map_or(0.0, |m| dot(x, m));
                (u.id.clone(), sim_u - lambda * sim_l)
            })
            .collect(),
    )
}

pub(crate) fn clamp_k(k: usize, available: usize, strategy: &str, warnings: &mut Vec<String>) -> usize {
    if k > available {
        let msg = format!("{strategy}: requested {k} instances but only {available} are unlabeled");
        tracing::warn!("{msg}");
        warnings.push(msg);
        available
    } else {
        k
    }
}
