//! Meta-training: backpropagation through the unrolled solve loop with an
//! ADAM outer optimizer.

pub mod adam;
pub mod driver;
pub mod loss;
pub mod tape;

pub use adam::{adam_step, AdamParams, AdamState};
pub use driver::{train_meta, train_rows_to_csv, Checkpoint, MetaTrainConfig, TrainProblemKind, TrainRow};
pub use loss::{meta_loss, GroundTruth, LossWeights};
pub use tape::{bptt_gradients, fd_gradcheck, unroll_forward, BatchStats, Tape, TrainingInstance};
