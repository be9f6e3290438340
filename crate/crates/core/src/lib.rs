//! Rotation-equivariant, binarizable scalar–vector networks for point clouds.

pub mod autodiff;
pub mod binkernel;
pub mod error;
pub mod geometry;
pub mod netbuild;
pub mod svcore;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
