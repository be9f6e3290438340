//! Reverse-mode differentiation over the operations the networks use,
//! with a named parameter store, Adam, learning-rate schedules and a
//! finite-difference checker.

mod gradcheck;
mod graph;
mod params;
mod schedule;

pub use gradcheck::{finite_difference_check, finite_difference_check_many, relative_error, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, NormStats, PoolMode, Var, NORM_EPS};
pub use params::{adam_step, AdamConfig, ParamKind, ParamStore};
pub use schedule::{lr_schedule, schedule_by_name, Cosine, LrSchedule, MultiStep};
