use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::dataset::Instance;

/// Partition of the dataset plus loop position. The single source of truth for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    pub labeled_ids: Vec<String>,
    pub unlabeled_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Completed query-label-train rounds.
    pub iteration: u32,
    pub model_ref: String,
    pub rng_seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("config error: {0}")]
    Config(String),
    #[error("state error: `{0}` is not in the unlabeled set")]
    NotUnlabeled(String),
    #[error("state error: `{0}` appears twice in one batch")]
    DuplicateInBatch(String),
    #[error("state error: unknown id `{0}`")]
    UnknownId(String),
    #[error("partition invariant violated: {0}")]
    Partition(String),
}

/// Deterministic seeded split. The first `ceil(test_fraction * N)` shuffled ids
/// become the test set; the rest are unlabeled, kept in dataset order.
pub fn init_split(instances: &[Instance], test_fraction: f64, seed: u64) -> Result<PoolState, PoolError> {
    if instances.is_empty() {
        return Err(PoolError::Config("dataset is empty".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(PoolError::Config(format!("test_fraction must be in [0, 1), got {test_fraction}")));
    }
    let n = instances.len();
    let n_test = (test_fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut rest: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    rest.sort_unstable();
    Ok(PoolState {
        labeled_ids: Vec::new(),
        unlabeled_ids: rest.into_iter().map(|i| instances[i].id.clone()).collect(),
        test_ids: test.into_iter().map(|i| instances[i].id.clone()).collect(),
        iteration: 0,
        model_ref: String::new(),
        rng_seed: seed,
    })
}

/// SHA-256 over ids, inputs and references. Stored in checkpoints so a resume
/// against a different dataset is refused.
pub fn dataset_digest(instances: &[Instance]) -> String {
    let mut hasher = Sha256::new();
    for inst in instances {
        hasher.update(inst.id.as_bytes());
        hasher.update([0u8]);
        hasher.update(inst.input.as_bytes());
        hasher.update([0u8]);
        for r in &inst.references {
            hasher.update(r.as_bytes());
            hasher.update([1u8]);
        }
        hasher.update([2u8]);
    }
    hex::encode(hasher.finalize())
}

/// One produced annotation headed for the labeled set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotated {
    pub id: String,
    pub annotation: String,
    pub annotator: String,
}

impl Annotated {
    pub fn new(id: impl Into<String>, annotation: impl Into<String>, annotator: impl Into<String>) -> Self {
        Self { id: id.into(), annotation: annotation.into(), annotator: annotator.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Empty,
    Budget,
    Refused,
    Backend,
    HumanSkip,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveReport {
    pub moved: Vec<String>,
    pub skipped: Vec<(String, SkipReason)>,
}

/// Instances plus their partition. Mutations keep the partition invariant.
#[derive(Debug, Clone)]
pub struct Pool {
    instances: Vec<Instance>,
    index: HashMap<String, usize>,
    state: PoolState,
}

impl Pool {
    pub fn new(instances: Vec<Instance>, state: PoolState) -> Result<Self, PoolError> {
        let index = instances.iter().enumerate().map(|(i, inst)| (inst.id.clone(), i)).collect();
        let pool = Self { instances, index, state };
        pool.check_invariants()?;
        Ok(pool)
    }

    pub fn split(instances: Vec<Instance>, test_fraction: f64, seed: u64) -> Result<Self, PoolError> {
        let state = init_split(&instances, test_fraction, seed)?;
        Self::new(instances, state)
    }

    /// Train instances become the unlabeled pool and a separately supplied test
    /// file populates the test set; no fraction is drawn.
    pub fn with_test_set(train: Vec<Instance>, test: Vec<Instance>, seed: u64) -> Result<Self, PoolError> {
        if train.is_empty() {
            return Err(PoolError::Config("dataset is empty".into()));
        }
        let state = PoolState {
            labeled_ids: Vec::new(),
            unlabeled_ids: train.iter().map(|i| i.id.clone()).collect(),
            test_ids: test.iter().map(|i| i.id.clone()).collect(),
            iteration: 0,
            model_ref: String::new(),
            rng_seed: seed,
        };
        let mut all = train;
        all.extend(test);
        Self::new(all, state)
    }

    pub fn state(&self) -> &PoolState {
        &self.state
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.index.get(id).map(|&i| &self.instances[i])
    }

    pub fn set_model_ref(&mut self, model_ref: impl Into<String>) {
        self.state.model_ref = model_ref.into();
    }

    pub fn complete_iteration(&mut self) {
        self.state.iteration += 1;
    }

    pub fn labeled(&self) -> impl Iterator<Item = &Instance> {
        self.state.labeled_ids.iter().map(|id| &self.instances[self.index[id]])
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = &Instance> {
        self.state.unlabeled_ids.iter().map(|id| &self.instances[self.index[id]])
    }

    pub fn test(&self) -> impl Iterator<Item = &Instance> {
        self.state.test_ids.iter().map(|id| &self.instances[self.index[id]])
    }

    /// Move annotated instances from unlabeled to labeled, in the given order.
    /// All ids are validated before anything changes. Empty annotations are
    /// skipped and reported rather than moved.
    pub fn move_to_labeled(&mut self, annotated: &[Annotated]) -> Result<MoveReport, PoolError> {
        let unlabeled: HashSet<&str> = self.state.unlabeled_ids.iter().map(String::as_str).collect();
        let mut batch = HashSet::new();
        for a in annotated {
            if !unlabeled.contains(a.id.as_str()) {
                return Err(PoolError::NotUnlabeled(a.id.clone()));
            }
            if !batch.insert(a.id.as_str()) {
                return Err(PoolError::DuplicateInBatch(a.id.clone()));
            }
        }

        let mut report = MoveReport::default();
        let mut moving = HashSet::new();
        for a in annotated {
            if a.annotation.trim().is_empty() {
                report.skipped.push((a.id.clone(), SkipReason::Empty));
                continue;
            }
            let inst = &mut self.instances[self.index[&a.id]];
            inst.annotation = Some(a.annotation.clone());
            inst.annotator = Some(a.annotator.clone());
            self.state.labeled_ids.push(a.id.clone());
            moving.insert(a.id.clone());
            report.moved.push(a.id.clone());
        }
        self.state.unlabeled_ids.retain(|id| !moving.contains(id));
        Ok(report)
    }

    /// Annotations of the labeled set, for checkpointing.
    pub fn annotations(&self) -> BTreeMap<String, (String, String)> {
        self.labeled()
            .map(|i| {
                (
                    i.id.clone(),
                    (i.annotation.clone().unwrap_or_default(), i.annotator.clone().unwrap_or_default()),
                )
            })
            .collect()
    }

    /// Rebuild a pool from freshly loaded instances plus checkpointed state.
    pub fn restore(
        mut instances: Vec<Instance>,
        state: PoolState,
        annotations: &BTreeMap<String, (String, String)>,
    ) -> Result<Self, PoolError> {
        for inst in &mut instances {
            inst.annotation = None;
            inst.annotator = None;
            if let Some((text, who)) = annotations.get(&inst.id) {
                inst.annotation = Some(text.clone());
                inst.annotator = Some(who.clone());
            }
        }
        Self::new(instances, state)
    }

    pub fn check_invariants(&self) -> Result<(), PoolError> {
        let s = &self.state;
        let mut seen = HashSet::new();
        for id in s.labeled_ids.iter().chain(&s.unlabeled_ids).chain(&s.test_ids) {
            if !self.index.contains_key(id) {
                return Err(PoolError::UnknownId(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(PoolError::Partition(format!("`{id}` appears in more than one set")));
            }
        }
        if seen.len() != self.instances.len() {
            return Err(PoolError::Partition(format!(
                "{} ids partitioned but dataset has {}",
                seen.len(),
                self.instances.len()
            )));
        }
        if self.index.len() != self.instances.len() {
            return Err(PoolError::Partition("duplicate instance ids".into()));
        }
        let labeled: HashSet<&str> = s.labeled_ids.iter().map(String::as_str).collect();
        for inst in &self.instances {
            if inst.annotation.is_some() != labeled.contains(inst.id.as_str()) {
                return Err(PoolError::Partition(format!(
                    "`{}` has annotation={} but labeled={}",
                    inst.id,
                    inst.annotation.is_some(),
                    labeled.contains(inst.id.as_str())
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn instances(n: usize) -> Vec<Instance> {
        (0..n).map(|i| Instance::new(format!("{i:02}"), format!("input {i}")).with_references([format!("ref {i}")])).collect()
    }

    #[test]
    fn split_sizes() {
        let s = init_split(&instances(10), 0.2, 7).unwrap();
        assert_eq!(s.test_ids.len(), 2);
        assert_eq!(s.unlabeled_ids.len(), 8);
        assert!(s.labeled_ids.is_empty());
        assert_eq!(s.iteration, 0);
    }

    #[test]
    fn zero_fraction_gives_empty_test_set() {
        let s = init_split(&instances(10), 0.0, 7).unwrap();
        assert!(s.test_ids.is_empty());
        assert_eq!(s.unlabeled_ids.len(), 10);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let a = init_split(&instances(50), 0.2, 11).unwrap();
        let b = init_split(&instances(50), 0.2, 11).unwrap();
        let c = init_split(&instances(50), 0.2, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.test_ids, c.test_ids);
    }

    #[test]
    fn fraction_of_one_is_rejected() {
        assert!(matches!(init_split(&instances(3), 1.0, 0), Err(PoolError::Config(_))));
        assert!(matches!(init_split(&[], 0.2, 0), Err(PoolError::Config(_))));
    }

    #[test]
    fn separate_test_file_populates_test_ids() {
        let train = instances(4);
        let test = vec![Instance::new("t1", "x"), Instance::new("t2", "y")];
        let pool = Pool::with_test_set(train, test, 3).unwrap();
        assert_eq!(pool.state().test_ids, vec!["t1", "t2"]);
        assert_eq!(pool.state().unlabeled_ids.len(), 4);
    }

    #[test]
    fn move_three_of_eight() {
        let mut pool = Pool::split(instances(10), 0.2, 7).unwrap();
        let ids: Vec<String> = pool.state().unlabeled_ids[..3].to_vec();
        let batch: Vec<Annotated> = ids.iter().map(|id| Annotated::new(id.clone(), "label", "oracle")).collect();
        let report = pool.move_to_labeled(&batch).unwrap();
        assert_eq!(report.moved, ids);
        assert_eq!(pool.state().labeled_ids.len(), 3);
        assert_eq!(pool.state().unlabeled_ids.len(), 5);
        pool.check_invariants().unwrap();
    }

    #[test]
    fn moving_a_labeled_id_fails_without_mutation() {
        let mut pool = Pool::split(instances(10), 0.2, 7).unwrap();
        let first = pool.state().unlabeled_ids[0].clone();
        let second = pool.state().unlabeled_ids[1].clone();
        pool.move_to_labeled(&[Annotated::new(first.clone(), "x", "h")]).unwrap();
        let before = pool.state().clone();
        let err = pool
            .move_to_labeled(&[Annotated::new(second, "y", "h"), Annotated::new(first.clone(), "x", "h")])
            .unwrap_err();
        assert_eq!(err, PoolError::NotUnlabeled(first));
        assert_eq!(pool.state(), &before);
    }

    #[test]
    fn empty_annotation_is_skipped_and_reported() {
        let mut pool = Pool::split(instances(10), 0.2, 7).unwrap();
        let ids: Vec<String> = pool.state().unlabeled_ids[..3].to_vec();
        let batch = vec![
            Annotated::new(ids[0].clone(), "a", "h"),
            Annotated::new(ids[1].clone(), "   ", "h"),
            Annotated::new(ids[2].clone(), "c", "h"),
        ];
        let report = pool.move_to_labeled(&batch).unwrap();

        // Replay against a plain set model of the partition.
        let mut ref_labeled: Vec<String> = Vec::new();
        let mut ref_unlabeled: Vec<String> = init_split(&instances(10), 0.2, 7).unwrap().unlabeled_ids;
        for a in &batch {
            if !a.annotation.trim().is_empty() {
                ref_labeled.push(a.id.clone());
                ref_unlabeled.retain(|x| x != &a.id);
            }
        }
        assert_eq!(pool.state().labeled_ids, ref_labeled);
        assert_eq!(pool.state().unlabeled_ids, ref_unlabeled);
        assert_eq!(report.moved.len(), 2);
        assert_eq!(report.skipped, vec![(ids[1].clone(), SkipReason::Empty)]);
        assert!(pool.get(&ids[1]).unwrap().annotation.is_none());
    }

    #[test]
    fn restore_roundtrip_keeps_annotations() {
        let mut pool = Pool::split(instances(6), 0.0, 1).unwrap();
        let id = pool.state().unlabeled_ids[2].clone();
        pool.move_to_labeled(&[Annotated::new(id.clone(), "ans", "oracle")]).unwrap();
        let restored = Pool::restore(instances(6), pool.state().clone(), &pool.annotations()).unwrap();
        assert_eq!(restored.get(&id).unwrap().annotation.as_deref(), Some("ans"));
        assert_eq!(restored.state(), pool.state());
    }

    proptest! {
        #[test]
        fn partition_holds_after_random_moves(n in 1usize..40, frac in 0.0f64..0.9, seed: u64, picks in proptest::collection::vec(0usize..40, 0..20)) {
            let mut pool = Pool::split(instances(n), frac, seed).unwrap();
            for p in picks {
                let unl = pool.state().unlabeled_ids.clone();
                if unl.is_empty() { break; }
                let id = unl[p % unl.len()].clone();
                let text = if p % 5 == 0 { "" } else { "x" };
                pool.move_to_labeled(&[Annotated::new(id, text, "h")]).unwrap();
                pool.check_invariants().unwrap();
            }
        }
    }
}
