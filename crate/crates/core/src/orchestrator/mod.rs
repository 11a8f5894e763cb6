//! The active-learning loop: select, label, train, evaluate, record, stop.
//!
//! [`Runner`] executes one phase per [`Runner::step`] and checkpoints the run
//! directory after each, so a run killed at any point resumes from the last
//! completed phase without repeating paid annotation calls.

mod context;
mod evaluator;
mod runner;

pub use context::{prepare_context, ContextCache};
pub use evaluator::{EvalInput, Evaluator, GenerationEvaluator};
pub use runner::{load_run_data, round_seed, run, Phase, RunDeps, RunOutcome, RunProgress, Runner, RUN_FILES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Mode, StoppingCriterion};
use crate::gateway::GatewayError;
use crate::labeling::{CostLedger, LabelError, QueueError};
use crate::metrics::{EvalError, MetricReport};
use crate::pool::{CheckpointError, DatasetError, LogError, PoolError, PoolState, SkipReason};
use crate::strategy::StrategyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    LabeledCount,
    Metric,
    IterationLimit,
    /// The unlabeled pool is empty.
    Exhausted,
    /// A round labeled nothing.
    Starved,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("serializes");
        f.write_str(s.as_str().expect("string variant"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop(StopReason),
}

/// Rounds a run may complete: the initial query plus `num_iterations` in AL
/// mode, exactly one in ED mode.
pub fn round_limit(mode: Mode, iteration_limit: u32) -> u32 {
    match mode {
        Mode::Al => iteration_limit.saturating_add(1),
        Mode::Ed => 1,
    }
}

/// First satisfied criterion, checked in the order budget, labeled count,
/// metric threshold, iteration limit; then an empty unlabeled pool.
/// `IterationLimit` counts rounds after the initial query.
pub fn check_stopping(
    state: &PoolState,
    criteria: &[StoppingCriterion],
    ledger: &CostLedger,
    latest: Option<&MetricReport>,
    mode: Mode,
) -> Decision {
    let has = |pred: &dyn Fn(&StoppingCriterion) -> bool| criteria.iter().any(pred);
    if has(&|c| matches!(c, StoppingCriterion::BudgetExhausted)) && ledger.budget_reached() {
        return Decision::Stop(StopReason::Budget);
    }
    if has(&|c| matches!(c, StoppingCriterion::LabeledCount { value } if state.labeled_ids.len() >= *value)) {
        return Decision::Stop(StopReason::LabeledCount);
    }
    if let Some(report) = latest {
        if has(&|c| matches!(c, StoppingCriterion::MetricThreshold { metric, value } if report.get(metric).is_some_and(|v| v >= *value)))
        {
            return Decision::Stop(StopReason::Metric);
        }
    }
    let limit = criteria
        .iter()
        .filter_map(|c| match c {
            StoppingCriterion::IterationLimit { value } => Some(*value),
            _ => None,
        })
        .min();
    let rounds = match (mode, limit) {
        (Mode::Ed, _) => Some(1),
        (Mode::Al, Some(l)) => Some(round_limit(Mode::Al, l)),
        (Mode::Al, None) => None,
    };
    if rounds.is_some_and(|r| state.iteration >= r) {
        return Decision::Stop(StopReason::IterationLimit);
    }
    if state.unlabeled_ids.is_empty() {
        return Decision::Stop(StopReason::Exhausted);
    }
    Decision::Continue
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("strategy `{strategy}`: {source}")]
    Strategy {
        strategy: String,
        #[source]
        source: StrategyError,
    },
    #[error("strategy `{strategy}`: {source}")]
    Gateway {
        strategy: String,
        #[source]
        source: GatewayError,
    },
    #[error("labeling: {0}")]
    Label(#[from] LabelError),
    #[error("labeling: {0}")]
    Queue(#[from] QueueError),
    #[error("model backend: {0}")]
    Backend(GatewayError),
    #[error("training: {0}")]
    Training(GatewayError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("run directory: {0}")]
    Io(String),
    #[error("human labeling timed out waiting for round {0}")]
    HumanTimeout(u32),
    #[error("resume refused: {0}")]
    Mismatch(String),
}

/// Token and spend totals at the end of a round.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub spent: f64,
}

impl From<&CostLedger> for LedgerSnapshot {
    fn from(l: &CostLedger) -> Self {
        Self { input_tokens: l.input_tokens, output_tokens: l.output_tokens, spent: l.spent }
    }
}

/// One learning-curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub labeled_count: usize,
    /// `None` when evaluation was skipped (too few eval instances).
    pub metrics: Option<MetricReport>,
    pub skipped_eval: bool,
    pub selected: Vec<String>,
    /// Strategy actually used; differs from the configured one when round 0
    /// fell back to random.
    pub strategy: String,
    pub fallback: bool,
    pub skipped: Vec<(String, SkipReason)>,
    pub model_ref: String,
    pub ledger: LedgerSnapshot,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Wall-clock milliseconds per phase of one round. Kept out of the curve so
/// curves of identical runs are byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub iteration: u32,
    pub select_ms: u64,
    pub label_ms: u64,
    pub train_ms: u64,
    pub evaluate_ms: u64,
}
