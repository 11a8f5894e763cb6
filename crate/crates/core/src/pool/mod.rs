//! Dataset ownership, the labeled/unlabeled/test partition, and durable run state.

mod batch;
mod checkpoint;
mod dataset;
mod log;
mod state;

pub use batch::{resolve_batch_size, BatchSizeSpec};
pub use checkpoint::{CheckpointError, CheckpointStore};
pub use dataset::{load_dataset, parse_dataset, DatasetError, DatasetFormat, FieldMapping, Instance};
pub use log::{AnnotationLog, AnnotationRecord, LogError};
pub use state::{dataset_digest, init_split, Annotated, MoveReport, Pool, PoolError, PoolState, SkipReason};
