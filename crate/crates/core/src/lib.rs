//! Pool-based active learning for text-generation annotation.
//!
//! The crate is organised around the loop it drives:
//!
//! - [`pool`] owns the dataset, the labeled/unlabeled/test partition and
//!   durable checkpoints of run state.
//! - [`gateway`] talks to acquisition, embedding and annotation models, either
//!   over an OpenAI-compatible wire protocol or through a deterministic mock.
//! - [`strategy`] ranks unlabeled instances by informativeness.
//! - [`labeling`] turns selections into annotations (human queue, LLM agent
//!   with a cost ledger, or a ground-truth oracle).
//! - [`metrics`] scores predictions against references.
//! - [`orchestrator`] runs select → label → train → evaluate until a stopping
//!   criterion fires, checkpointing after every phase.
//! - [`bench`] repeats runs over strategies and seeds and averages the curves.

pub mod bench;
pub mod config;
pub mod gateway;
pub mod labeling;
pub mod metrics;
pub mod orchestrator;
pub mod pool;
pub mod presets;
pub mod strategy;
pub mod text;

pub use config::RunConfig;
pub use pool::{Instance, Pool, PoolState};
