//! Reference-based metrics and the per-iteration evaluation runner.

mod overlap;

pub use overlap::{bleu_corpus, rouge_l, rouge_n, sentence_bleu, BleuError};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{DecodeParams, Gateway, GatewayError};
use crate::pool::Instance;
use crate::text::{normalize_answer, normalize_basic};

/// 1 iff the prediction equals the first reference after lowercasing and
/// whitespace normalization.
pub fn exact_match<S: AsRef<str>>(prediction: &str, references: &[S]) -> f64 {
    match references.first() {
        Some(r) if normalize_basic(prediction) == normalize_basic(r.as_ref()) => 1.0,
        _ => 0.0,
    }
}

/// 1 iff the prediction equals any reference after answer normalization
/// (lowercase, punctuation and articles removed).
pub fn relaxed_exact_match<S: AsRef<str>>(prediction: &str, references: &[S]) -> f64 {
    let p = normalize_answer(prediction);
    if references.iter().any(|r| normalize_answer(r.as_ref()) == p) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "exact_match")]
    ExactMatch,
    #[serde(rename = "relaxed_exact_match")]
    RelaxedExactMatch,
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rouge2")]
    Rouge2,
    #[serde(rename = "rougeL")]
    RougeL,
    #[serde(rename = "bleu")]
    Bleu,
}

impl MetricId {
    pub const ALL: [MetricId; 6] = [
        MetricId::ExactMatch,
        MetricId::RelaxedExactMatch,
        MetricId::Rouge1,
        MetricId::Rouge2,
        MetricId::RougeL,
        MetricId::Bleu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::ExactMatch => "exact_match",
            MetricId::RelaxedExactMatch => "relaxed_exact_match",
            MetricId::Rouge1 => "rouge1",
            MetricId::Rouge2 => "rouge2",
            MetricId::RougeL => "rougeL",
            MetricId::Bleu => "bleu",
        }
    }

    /// Per-instance value; ROUGE takes the best reference. Not used for BLEU,
    /// which is pooled at corpus level.
    fn instance_score(self, prediction: &str, references: &[String]) -> f64 {
        let best = |f: &dyn Fn(&str) -> f64| references.iter().map(|r| f(r)).fold(0.0, f64::max);
        match self {
            MetricId::ExactMatch => exact_match(prediction, references),
            MetricId::RelaxedExactMatch => relaxed_exact_match(prediction, references),
            MetricId::Rouge1 => best(&|r| rouge_n(prediction, r, 1)),
            MetricId::Rouge2 => best(&|r| rouge_n(prediction, r, 2)),
            MetricId::RougeL => best(&|r| rouge_l(prediction, r)),
            MetricId::Bleu => unreachable!("bleu is a corpus metric"),
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| EvalError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub count: usize,
}

impl MetricReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.values.get(metric).copied()
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("instance `{0}` has no references to evaluate against")]
    NoReferences(String),
    #[error("evaluation aborted: {0}")]
    Gateway(#[from] GatewayError),
}

impl EvalError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, EvalError::Gateway(e) if e.is_retriable())
    }
}

/// Scores predictions against each instance's references. BLEU is computed
/// over the whole set; the other metrics are per-instance means.
pub fn score_predictions(
    predictions: &[String],
    eval: &[Instance],
    metrics: &[MetricId],
) -> Result<MetricReport, EvalError> {
    if eval.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    if let Some(i) = eval.iter().find(|i| i.references.is_empty()) {
        return Err(EvalError::NoReferences(i.id.clone()));
    }
    let mut values = BTreeMap::new();
    for &m in metrics {
        let v = if m == MetricId::Bleu {
            let refs: Vec<Vec<String>> = eval.iter().map(|i| i.references.clone()).collect();
            bleu_corpus(predictions, &refs).expect("lengths checked above")
        } else {
            let sum: f64 = predictions.iter().zip(eval).map(|(p, i)| m.instance_score(p, &i.references)).sum();
            sum / eval.len() as f64
        };
        values.insert(m.as_str().to_string(), v);
    }
    Ok(MetricReport { values, count: eval.len() })
}

/// Greedy generation for every eval instance, then [`score_predictions`].
/// Any backend failure fails the whole evaluation.
pub fn evaluate_model(
    gateway: &Gateway,
    model_ref: &str,
    eval: &[Instance],
    metrics: &[MetricId],
    decode: &DecodeParams,
) -> Result<MetricReport, EvalError> {
    if eval.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let greedy = DecodeParams { temperature: 0.0, num_samples: 1, logprobs_k: 0, ..decode.clone() };
    let prompts: Vec<String> = eval.iter().map(|i| i.input.clone()).collect();
    let generations = gateway.generate_many(model_ref, &prompts, &greedy)?;
    let predictions: Vec<String> =
        generations.into_iter().map(|g| g.into_iter().next().map(|r| r.text).unwrap_or_default()).collect();
    score_predictions(&predictions, eval, metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::gateway::MockBackend;

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("Paris", &["Paris"]), 1.0);
        assert_eq!(exact_match(" paris ", &["Paris"]), 1.0);
        assert_eq!(exact_match("Lyon", &["Paris"]), 0.0);
        assert_eq!(exact_match("City of Light", &["Paris", "City of Light"]), 0.0);
    }

    #[test]
    fn relaxed_examples() {
        assert_eq!(relaxed_exact_match("the Eiffel Tower", &["Eiffel Tower"]), 1.0);
        assert_eq!(relaxed_exact_match("City of Light", &["Paris", "City of Light"]), 1.0);
        assert_eq!(relaxed_exact_match("London", &["Paris", "City of Light"]), 0.0);
    }

    #[test]
    fn metric_ids_roundtrip() {
        for m in MetricId::ALL {
            assert_eq!(m.as_str().parse::<MetricId>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("bertscore".parse::<MetricId>().is_err());
    }

    fn eval_set() -> Vec<Instance> {
        vec![
            Instance::new("0", "capital of france").with_references(["Paris"]),
            Instance::new("1", "two plus two").with_references(["4", "four"]),
        ]
    }

    #[test]
    fn evaluate_with_scripted_mock() {
        let backend = MockBackend::new(1).script("capital of france", "paris").script("two plus two", "four");
        let gw = Gateway::new(Arc::new(backend));
        let r = evaluate_model(&gw, "m", &eval_set(), &[MetricId::ExactMatch, MetricId::RelaxedExactMatch], &DecodeParams::default())
            .unwrap();
        assert_eq!(r.get("exact_match"), Some(0.5));
        assert_eq!(r.get("relaxed_exact_match"), Some(1.0));
        assert_eq!(r.count, 2);
    }

    #[test]
    fn evaluate_is_deterministic_and_all_or_nothing() {
        let gw = Gateway::mock(5);
        let a = evaluate_model(&gw, "m", &eval_set(), &MetricId::ALL, &DecodeParams::default()).unwrap();
        let b = evaluate_model(&gw, "m", &eval_set(), &MetricId::ALL, &DecodeParams::default()).unwrap();
        assert_eq!(a, b);
        let failing = Gateway::new(Arc::new(MockBackend::new(5).fail_on("two plus two")));
        assert!(evaluate_model(&failing, "m", &eval_set(), &MetricId::ALL, &DecodeParams::default()).is_err());
        assert!(matches!(
            evaluate_model(&gw, "m", &[], &MetricId::ALL, &DecodeParams::default()),
            Err(EvalError::EmptyEvalSet)
        ));
    }
}
