//! Model construction, training under each augmentation regime, checkpoints,
//! the batched score oracle and evaluation-sample selection.

mod checkpoint;
mod oracle;
mod samples;
mod train;

pub use checkpoint::{ModelCheckpoint, TrainingMeta};
pub use oracle::{ClassifierOracle, ScoreOracle};
pub use samples::{passes_filter, select_eval_samples, EvalSample, SampleFilter};
pub use train::{build_model, evaluate_accuracy, train, EpochRecord, Hyperparams};
