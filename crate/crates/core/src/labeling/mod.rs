//! Producing annotations: ground-truth oracles, an LLM agent with a cost
//! ledger, and a leased task queue for human annotators.

mod ledger;
mod llm;
mod queue;

pub use ledger::{compute_cost, CostLedger, PriceSheet};
pub use llm::{annotate_batch_llm, AgentSpec, LlmOutcome, LlmTask, LlmTaskResult, PromptTemplate};
pub use queue::{AnnotationTask, HumanQueue, QueueCounts, QueueError, SubmitAck, TaskStatus, DEFAULT_LEASE};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::pool::{Annotated, Instance};
use crate::text::stable_hash;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation error: instance `{0}` has no reference to act as oracle label")]
    MissingReference(String),
}

pub const ORACLE_ANNOTATOR: &str = "oracle";

/// Ground truth as annotation: the first reference, verbatim.
pub fn oracle_annotate(instances: &[&Instance]) -> Result<Vec<Annotated>, LabelError> {
    instances
        .iter()
        .map(|i| {
            let r = i.references.first().ok_or_else(|| LabelError::MissingReference(i.id.clone()))?;
            Ok(Annotated::new(&i.id, r, ORACLE_ANNOTATOR))
        })
        .collect()
}

/// Oracle that returns a wrong label with probability `error_rate`, to study
/// error accumulation from an imperfect annotator. The decision for an id is
/// a pure function of `(seed, id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyOracle {
    pub error_rate: f64,
    pub seed: u64,
}

impl NoisyOracle {
    pub fn new(error_rate: f64, seed: u64) -> Result<Self, LabelError> {
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(LabelError::Config(format!("noisy oracle error rate must be in [0, 1], got {error_rate}")));
        }
        Ok(Self { error_rate, seed })
    }

    /// `distractors` supplies wrong answers; a wrong label is a distractor
    /// reference that differs from the instance's own first reference.
    pub fn annotate(&self, instances: &[&Instance], distractors: &[Instance]) -> Result<Vec<Annotated>, LabelError> {
        let truth = oracle_annotate(instances)?;
        Ok(truth
            .into_iter()
            .map(|mut a| {
                let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[&self.seed.to_le_bytes(), a.id.as_bytes()]));
                if rng.random::<f64>() < self.error_rate {
                    let wrong: Vec<&String> =
                        distractors.iter().filter_map(|d| d.references.first()).filter(|r| **r != a.annotation).collect();
                    a.annotation = if wrong.is_empty() {
                        format!("not {}", a.annotation)
                    } else {
                        wrong[rng.random_range(0..wrong.len())].clone()
                    };
                }
                a.annotator = "noisy_oracle".into();
                a
            })
            .collect())
    }
}
