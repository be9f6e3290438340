//! Model assembly from configuration, cost accounting and checkpoints.

mod arch;
mod binarize;
mod checkpoint;
mod config;
mod cost;
mod model;

pub use arch::{
    architecture, stage_linears, stage_norms, Backbone, BackboneRegistry, Baseline, DgcnnLike, LayerRole,
    PointNetLike, Stage,
};
pub use binarize::{binarize_plan, binary_target, BinarizePlan};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, MAGIC, VERSION,
};
pub use config::{split_channels, BinarizeScheme, Config, ModelConfig, TrainConfig};
pub use cost::{count_model_ops, count_ops, LayerOps, OpCounter, Table1Mode};
pub use model::{build_model, Model, Prepared};
