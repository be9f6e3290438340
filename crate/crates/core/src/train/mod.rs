//! Datasets, rotation protocols, the training loop and rotated evaluation.

mod data;
mod protocol;
mod trainer;

pub use data::{generate_dataset, shape_seed, Dataset, Split};
pub use protocol::{EvalProtocol, RotMode};
pub use trainer::{evaluate, train_model, EpochLog, EvalReport, Phase, TrainOptions, TrainOutcome};
