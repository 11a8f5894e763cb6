use serde::{Deserialize, Serialize};

use super::LabelError;
use crate::gateway::Usage;

/// Prices per million tokens. `batch_discount` multiplies the cost of calls
/// made in batch mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceSheet {
    pub input_per_1m: f64,
    pub output_per_1m: f64,
    #[serde(default = "default_discount")]
    pub batch_discount: f64,
}

fn default_discount() -> f64 {
    0.5
}

impl Default for PriceSheet {
    fn default() -> Self {
        Self { input_per_1m: 0.0, output_per_1m: 0.0, batch_discount: default_discount() }
    }
}

impl PriceSheet {
    pub fn new(input_per_1m: f64, output_per_1m: f64) -> Self {
        Self { input_per_1m, output_per_1m, batch_discount: default_discount() }
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        if !(self.input_per_1m >= 0.0 && self.input_per_1m.is_finite())
            || !(self.output_per_1m >= 0.0 && self.output_per_1m.is_finite())
        {
            return Err(LabelError::Config("prices must be finite and >= 0".into()));
        }
        if !(self.batch_discount > 0.0 && self.batch_discount <= 1.0) {
            return Err(LabelError::Config(format!("batch discount must be in (0, 1], got {}", self.batch_discount)));
        }
        Ok(())
    }
}

/// `(in * input_per_1m / 1e6 + out * output_per_1m / 1e6) * (batch ? discount : 1)`.
pub fn compute_cost(input_tokens: u64, output_tokens: u64, prices: &PriceSheet, batch: bool) -> f64 {
    let base = input_tokens as f64 * prices.input_per_1m / 1e6 + output_tokens as f64 * prices.output_per_1m / 1e6;
    if batch {
        base * prices.batch_discount
    } else {
        base
    }
}

/// Cumulative annotation spend. `spent` is the running sum of per-call costs
/// in call order, so replaying the annotation log reproduces it exactly.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub spent: f64,
    pub budget: Option<f64>,
    pub calls: u64,
    /// Set once a projected call no longer fits the remaining budget.
    #[serde(default)]
    pub exhausted: bool,
}

impl CostLedger {
    pub fn new(budget: Option<f64>) -> Self {
        Self { budget, ..Self::default() }
    }

    pub fn record(&mut self, usage: Usage, cost: f64) {
        self.input_tokens += usage.input_tokens;
        self.output_tokens += usage.output_tokens;
        self.spent += cost;
        self.calls += 1;
    }

    pub fn remaining(&self) -> Option<f64> {
        self.budget.map(|b| b - self.spent)
    }

    /// Mean cost of the calls recorded so far.
    pub fn mean_cost(&self) -> Option<f64> {
        (self.calls > 0).then(|| self.spent / self.calls as f64)
    }

    /// Whether a call projected to cost `projected` (on top of `reserved`
    /// already committed to in-flight calls) keeps spend within budget.
    pub fn fits(&self, reserved: f64, projected: f64) -> bool {
        match self.budget {
            Some(b) => self.spent + reserved + projected <= b,
            None => true,
        }
    }

    pub fn budget_reached(&self) -> bool {
        self.exhausted || self.budget.is_some_and(|b| self.spent >= b)
    }
}
