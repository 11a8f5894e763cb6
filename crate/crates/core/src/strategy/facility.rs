//! Greedy facility-location selection with lazy gain evaluation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::diversity::clamp_k;
use super::{dot, unit, StrategyContext, StrategyError};

/// Selection order plus the realized greedy trace: `gains[t]` is the marginal
/// gain of `ids[t]`, `values[t]` is `f` after it was added.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FacilityTrace {
    pub ids: Vec<String>,
    pub gains: Vec<f64>,
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

/// `f(S) = sum_i max_{j in S} max(cos(e_i, e_j), 0)` over the rows of
/// `embeddings`, with `S` given as row indices. Empty `S` gives 0.
pub fn facility_value(embeddings: &[Vec<f64>], selected: &[usize]) -> f64 {
    let units: Vec<Vec<f64>> = embeddings.iter().map(|e| unit(e)).collect();
    units
        .iter()
        .map(|e| selected.iter().map(|&j| dot(e, &units[j]).max(0.0)).fold(0.0, f64::max))
        .sum()
}

#[derive(PartialEq)]
struct Entry {
    gain: f64,
    idx: usize,
    step: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Max-heap on gain, then smallest index (= smallest id).
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.partial_cmp(&other.gain).unwrap_or(Ordering::Equal).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedily maximizes facility location over the unlabeled pool.
///
/// `condition_on_labeled` seeds each point's coverage with its best similarity
/// to the labeled set, so later rounds favour regions not yet covered. With it
/// off (or nothing labeled) this is the plain objective over `U`.
pub fn select_facility_location(
    ctx: &StrategyContext,
    k: usize,
    condition_on_labeled: bool,
) -> Result<FacilityTrace, StrategyError> {
    let unl = ctx.unlabeled();
    let mut trace = FacilityTrace::default();
    let k = clamp_k(k, unl.len(), "facility_location", &mut trace.warnings);
    if k == 0 {
        return Ok(trace);
    }
    let emb: Vec<Vec<f64>> = unl.iter().map(|u| ctx.embedding(&u.id).map(unit)).collect::<Result<_, _>>()?;
    let sim = |i: usize, j: usize| dot(&emb[i], &emb[j]).max(0.0);

    let mut cover: Vec<f64> = if condition_on_labeled && !ctx.labeled().is_empty() {
        let lab: Vec<Vec<f64>> =
            ctx.labeled().iter().map(|l| ctx.embedding(&l.id).map(unit)).collect::<Result<_, _>>()?;
        emb.par_iter().map(|e| lab.iter().map(|l| dot(e, l).max(0.0)).fold(0.0, f64::max)).collect()
    } else {
        vec![0.0; unl.len()]
    };
    let gain = |c: usize, cover: &[f64]| -> f64 { (0..cover.len()).map(|i| (sim(i, c) - cover[i]).max(0.0)).sum() };

    let initial: Vec<f64> = (0..unl.len()).into_par_iter().map(|c| gain(c, &cover)).collect();
    let mut heap: BinaryHeap<Entry> = initial.into_iter().enumerate().map(|(idx, gain)| Entry { gain, idx, step: 0 }).collect();

    for step in 0..k {
        // Gains only shrink as coverage grows, so a top entry that is fresh
        // for this step beats every stale bound below it.
        let chosen = loop {
            let top = heap.pop().expect("heap holds every unselected candidate");
            if top.step == step {
                break top;
            }
            heap.push(Entry { gain: gain(top.idx, &cover), idx: top.idx, step });
        };
        for (i, c) in cover.iter_mut().enumerate() {
            *c = c.max(sim(i, chosen.idx));
        }
        trace.ids.push(unl[chosen.idx].id.clone());
        trace.gains.push(chosen.gain);
        trace.values.push(cover.iter().sum());
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(points: &[(&str, Vec<f64>)]) -> StrategyContext {
        let mut c = StrategyContext::from_ids(points.iter().map(|(id, _)| *id));
        for (id, v) in points {
            c = c.with_embedding(*id, v.clone());
        }
        c
    }

    #[test]
    fn two_clusters_one_each() {
        let c = ctx(&[
            ("a", vec![1.0, 0.01]),
            ("b", vec![1.0, -0.01]),
            ("c", vec![0.01, 1.0]),
            ("d", vec![-0.01, 1.0]),
        ]);
        let t = select_facility_location(&c, 2, true).unwrap();
        let first = &t.ids[0];
        let second = &t.ids[1];
        let cluster = |id: &str| if id == "a" || id == "b" { 0 } else { 1 };
        assert_ne!(cluster(first), cluster(second));
    }

    #[test]
    fn identical_embeddings() {
        let c = ctx(&[("b", vec![1.0, 1.0]), ("a", vec![1.0, 1.0]), ("c", vec![1.0, 1.0])]);
        let t = select_facility_location(&c, 2, true).unwrap();
        assert_eq!(t.ids[0], "a");
        assert!(t.gains[1].abs() < 1e-12);
    }

    #[test]
    fn exhaustion_selects_everything() {
        let c = ctx(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![1.0, 1.0])]);
        let t = select_facility_location(&c, 5, true).unwrap();
        let mut ids = t.ids.clone();
        ids.sort();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn trace_matches_objective() {
        let pts = vec![vec![1.0, 0.2, 0.0], vec![0.3, 1.0, 0.1], vec![0.0, 0.1, 1.0], vec![0.7, 0.7, 0.0]];
        let c = ctx(&[("a", pts[0].clone()), ("b", pts[1].clone()), ("c", pts[2].clone()), ("d", pts[3].clone())]);
        let t = select_facility_location(&c, 3, false).unwrap();
        let idx: Vec<usize> = t.ids.iter().map(|id| (id.as_bytes()[0] - b'a') as usize).collect();
        for s in 1..=3 {
            assert!((facility_value(&pts, &idx[..s]) - t.values[s - 1]).abs() < 1e-9);
        }
    }

    #[test]
    fn labeled_conditioning_avoids_covered_region() {
        let mut c = StrategyContext::new(
            vec![
                crate::strategy::UnlabeledView { id: "a".into(), input: String::new() },
                crate::strategy::UnlabeledView { id: "b".into(), input: String::new() },
                crate::strategy::UnlabeledView { id: "c".into(), input: String::new() },
            ],
            vec![crate::strategy::LabeledView { id: "l".into(), input: String::new(), annotation: "y".into() }],
        );
        for (id, v) in [("a", vec![1.0, 0.0]), ("b", vec![1.0, 0.05]), ("c", vec![0.0, 1.0]), ("l", vec![1.0, 0.0])] {
            c = c.with_embedding(id, v);
        }
        assert_eq!(select_facility_location(&c, 1, true).unwrap().ids, vec!["c"]);
        assert_eq!(select_facility_location(&c, 1, false).unwrap().ids, vec!["b"]);
    }
}
