//! Multilayer perceptron over embedding vectors.
//!
//! `1024 → 512 → 256 → 3`, ReLU and inverted dropout on the hidden layers,
//! softmax cross-entropy, Adam with L2 weight decay and early stopping on the
//! validation loss. Arithmetic is f64; checkpoints store f32.

mod checkpoint;
mod eval;
mod mlp;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use eval::{evaluate, ClassMetrics, EvalReport, PrecisionRecall};
pub use mlp::{cross_entropy, softmax, Cache, Gradients, Layer, Mlp, Mode, DEFAULT_SIZES, DEFAULT_PARAM_COUNT};
pub use optim::{Adam, AdamConfig};
pub use train::{train, DataSplit, EarlyStopping, EpochRecord, RunLog, StopDecision, TrainConfig, TrainOutcome};
