//! Exhaustive optima for facility location and k-center on tiny pools.

use std::sync::Arc;

use alnlg_core::gateway::{Gateway, MockBackend};
use alnlg_core::strategy::{select_coreset, select_facility_location, LabeledView, StrategyContext, UnlabeledView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FL_RATIO: f64 = 1.0 - 1.0 / std::f64::consts::E;
const SLACK: f64 = 1e-12;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Index sets of size `k` drawn from `0..n`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

/// Facility location over `unl`, each point's coverage starting at its best
/// clipped similarity to `lab`.
pub fn fl_value(unl: &[Vec<f64>], lab: &[Vec<f64>], picked: &[usize]) -> f64 {
    unl.iter()
        .map(|e| {
            lab.iter()
                .map(|l| cos(e, l))
                .chain(picked.iter().map(|&j| cos(e, &unl[j])))
                .fold(0.0f64, |m, s| m.max(s.max(0.0)))
        })
        .sum()
}

pub fn fl_opt(unl: &[Vec<f64>], lab: &[Vec<f64>], k: usize) -> f64 {
    subsets(unl.len(), k).iter().map(|s| fl_value(unl, lab, s)).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest distance from an unlabeled point to its nearest center.
pub fn radius(unl: &[Vec<f64>], lab: &[Vec<f64>], picked: &[usize]) -> f64 {
    unl.iter()
        .map(|e| lab.iter().chain(picked.iter().map(|&j| &unl[j])).map(|c| dist(e, c)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

pub fn kcenter_opt(unl: &[Vec<f64>], lab: &[Vec<f64>], k: usize) -> f64 {
    subsets(unl.len(), k).iter().map(|s| radius(unl, lab, s)).fold(f64::INFINITY, f64::min)
}

/// A pool of unlabeled and labeled points plus the context the strategies see.
pub struct Pool {
    pub unl: Vec<Vec<f64>>,
    pub lab: Vec<Vec<f64>>,
    pub ctx: StrategyContext,
}

impl Pool {
    /// Ids `u0..` and `l0..` sort in index order, so `ctx.unlabeled()[i]` is `unl[i]`.
    pub fn new(unl: Vec<Vec<f64>>, lab: Vec<Vec<f64>>) -> Self {
        let mut ctx = StrategyContext::new(
            (0..unl.len()).map(|i| UnlabeledView { id: format!("u{i}"), input: String::new() }).collect(),
            (0..lab.len())
                .map(|i| LabeledView { id: format!("l{i}"), input: String::new(), annotation: String::new() })
                .collect(),
        );
        for (i, v) in unl.iter().enumerate() {
            ctx.embeddings.insert(format!("u{i}"), v.clone());
        }
        for (i, v) in lab.iter().enumerate() {
            ctx.embeddings.insert(format!("l{i}"), v.clone());
        }
        Self { unl, lab, ctx }
    }

    /// `n` unlabeled and `m` labeled texts embedded by the mock backend.
    pub fn mock(n: usize, m: usize, dim: usize, seed: u64) -> Self {
        let gw = Gateway::new(Arc::new(MockBackend::new(seed).with_dim(dim)));
        let texts: Vec<String> = (0..n).map(|i| format!("unlabeled text {i}")).chain((0..m).map(|i| format!("labeled text {i}"))).collect();
        let mut vs: Vec<Vec<f64>> = gw.embed(&texts).unwrap().into_iter().map(|e| e.values).collect();
        let lab = vs.split_off(n);
        Self::new(vs, lab)
    }

    fn indices(&self, ids: &[String]) -> Vec<usize> {
        ids.iter().map(|id| id[1..].parse().unwrap()).collect()
    }

    /// Greedy facility-location value against the exhaustive optimum.
    pub fn check_fl(&self, k: usize) -> Result<(f64, f64), String> {
        let picked = self.indices(&select_facility_location(&self.ctx, k, true).map_err(|e| e.to_string())?.ids);
        let got = fl_value(&self.unl, &self.lab, &picked);
        let opt = fl_opt(&self.unl, &self.lab, k.min(self.unl.len()));
        if got + SLACK < FL_RATIO * opt {
            return Err(format!("facility location f(S) = {got} < (1 - 1/e) * {opt}"));
        }
        Ok((got, opt))
    }

    /// Greedy k-center radius against the exhaustive optimum.
    pub fn check_coreset(&self, k: usize) -> Result<(f64, f64), String> {
        let picked = self.indices(&select_coreset(&self.ctx, k).map_err(|e| e.to_string())?.ids);
        let got = radius(&self.unl, &self.lab, &picked);
        let opt = kcenter_opt(&self.unl, &self.lab, k.min(self.unl.len()));
        if got > 2.0 * opt + SLACK {
            return Err(format!("coreset radius {got} > 2 * {opt}"));
        }
        Ok((got, opt))
    }
}

/// Worst observed approximation ratios over `trials` random mock-embedded
/// pools of at most 8 unlabeled points: (min FL ratio, max coreset ratio).
pub fn optimality_trials(trials: usize, seed: u64) -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fl_worst = f64::INFINITY;
    let mut cs_worst: f64 = 0.0;
    for t in 0..trials {
        let n = rng.random_range(1..=8);
        let m = if t % 2 == 0 { 0 } else { rng.random_range(1..=3) };
        let dim = [2, 3, 5, 16][rng.random_range(0..4)];
        let k = rng.random_range(1..=n);
        let pool = Pool::mock(n, m, dim, rng.random());
        let ctx = |e: String| format!("trial {t} (n={n}, labeled={m}, dim={dim}, k={k}): {e}");
        let (got, opt) = pool.check_fl(k).map_err(ctx)?;
        if opt > 0.0 {
            fl_worst = fl_worst.min(got / opt);
        }
        let (got, opt) = pool.check_coreset(k).map_err(ctx)?;
        if opt > 0.0 {
            cs_worst = cs_worst.max(got / opt);
        }
    }
    Ok((fl_worst, cs_worst))
}
