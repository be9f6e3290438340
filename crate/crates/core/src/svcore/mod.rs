//! Scalar/vector feature algebra: vector mapping, equivariant frames,
//! invariant projection, the SVBlock, pooling, normalization and the
//! invariant head.

mod block;
mod head;
mod layers;
mod linear;
mod norm;
mod ops;

pub use block::{
    reweighting_factors, scalar_update, svblock_forward, vector_update, Activation, BlockSpec, BoundBlock,
    SVBlockParams, Toggles,
};
pub use head::{invariant_head, invariant_head_vars};
pub use layers::{
    update_running_stats, xavier_uniform, BoundLinear, BoundNorm, LinearSpec, NormKind, NormRecord, NormSpec,
    NORM_MOMENTUM,
};
pub use linear::{LinearParams, Precision};
pub use norm::{equivariant_norm, NormParams, ScalarNorm, StatsMode, VectorNorm};
pub use ops::{
    aggregate, aggregate_vars, batched_edges, coordinate_frame, invariant_projection, regroup_edges, regroup_vars,
    vector_mapping, SvVars,
};
