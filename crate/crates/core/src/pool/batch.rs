use serde::{Deserialize, Serialize};

use super::state::PoolError;

/// A per-round query size: a fraction in (0, 1) of the reference pool, or an
/// absolute count when >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BatchSizeSpec(f64);

impl BatchSizeSpec {
    pub fn new(value: f64) -> Result<Self, PoolError> {
        if !value.is_finite() || value <= 0.0 {
            return Err(PoolError::Config(format!("batch size must be positive, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_fraction(self) -> bool {
        self.0 < 1.0
    }

    pub fn resolve(self, reference_pool_size: usize, unlabeled: usize) -> usize {
        let raw = if self.is_fraction() {
            (self.0 * reference_pool_size as f64).ceil() as usize
        } else {
            self.0.round() as usize
        };
        raw.min(unlabeled)
    }
}

/// Resolve a batch size. The reference pool is the initial train-pool size so
/// fractional sizes give the same count every round; the result is clamped to
/// what is still unlabeled.
pub fn resolve_batch_size(spec: f64, reference_pool_size: usize, unlabeled: usize) -> Result<usize, PoolError> {
    Ok(BatchSizeSpec::new(spec)?.resolve(reference_pool_size, unlabeled))
}
