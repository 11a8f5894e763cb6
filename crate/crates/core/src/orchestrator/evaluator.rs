use crate::gateway::{DecodeParams, Gateway};
use crate::metrics::{evaluate_model, EvalError, MetricId, MetricReport};
use crate::pool::Instance;

/// What an evaluator sees after a round's training step.
pub struct EvalInput<'a> {
    pub gateway: &'a Gateway,
    pub model_ref: &'a str,
    pub eval: &'a [Instance],
    /// Every labeled instance, including any held out for evaluation.
    pub labeled: &'a [Instance],
    pub decode: &'a DecodeParams,
}

pub trait Evaluator: Send + Sync {
    /// Metric names this evaluator reports; stopping thresholds must use one of them.
    fn metric_names(&self) -> Vec<String>;

    /// `Ok(None)` means evaluation was skipped for this round.
    fn evaluate(&self, input: &EvalInput<'_>) -> Result<Option<MetricReport>, EvalError>;
}

/// Greedy decoding of the eval set scored against references.
#[derive(Debug, Clone)]
pub struct GenerationEvaluator {
    pub metrics: Vec<MetricId>,
    /// Rounds with fewer eval instances are skipped.
    pub min_eval_size: usize,
}

impl GenerationEvaluator {
    pub fn new(metrics: Vec<MetricId>, min_eval_size: usize) -> Self {
        Self { metrics, min_eval_size }
    }
}

impl Evaluator for GenerationEvaluator {
    fn metric_names(&self) -> Vec<String> {
        self.metrics.iter().map(|m| m.as_str().to_string()).collect()
    }

    fn evaluate(&self, input: &EvalInput<'_>) -> Result<Option<MetricReport>, EvalError> {
        if input.eval.is_empty() || input.eval.len() < self.min_eval_size {
            return Ok(None);
        }
        evaluate_model(input.gateway, input.model_ref, input.eval, &self.metrics, input.decode).map(Some)
    }
}
