//! Binarization primitives and binary linear algebra.
//!
//! `Sign` maps reals to `{-1, +1}` with `Sign(0) = +1`. Gradients through it
//! use a clipped straight-through estimator that passes the upstream gradient
//! only where `-1.2 < x < 1.2`.

mod gemm;
mod pack;
mod registry;

pub use gemm::{
    binary_linear_full, binary_linear_full_unpacked, binary_weight_linear, naive_sign_gemm,
    sign_add_gemm, xnor_popcount_gemm, IntMatrix,
};
pub use pack::{bitpack, bitpack_columns, PackedSignMatrix};
pub use registry::{bench_kernel, BenchRow, GemmKernel, KernelRegistry, PreparedGemm};

use crate::error::{ensure_param, Error, Result};
use crate::tensor::Tensor;

/// Half-width of the open interval where the straight-through estimator passes gradients.
pub const STE_CLIP: f64 = 1.2;

#[inline]
pub fn sign(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::param("sign of NaN"));
    }
    Ok(if x >= 0.0 { 1.0 } else { -1.0 })
}

pub fn sign_tensor(x: &Tensor) -> Result<Tensor> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = sign(*v)?;
    }
    Ok(out)
}

/// Whether the estimator lets a gradient through at the pre-sign value `x`.
#[inline]
pub fn ste_passes(x: f64) -> bool {
    -STE_CLIP < x && x < STE_CLIP
}

pub fn ste_backward(grad_out: &Tensor, x_saved: &Tensor) -> Result<Tensor> {
    ensure_param!(
        grad_out.shape() == x_saved.shape(),
        "ste_backward shape mismatch: {:?} vs {:?}",
        grad_out.shape(),
        x_saved.shape()
    );
    Ok(grad_out.zip_map(x_saved, |g, x| if ste_passes(x) { g } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_values() {
        assert_eq!(sign(0.0).unwrap(), 1.0);
        assert_eq!(sign(-0.0).unwrap(), 1.0);
        assert_eq!(sign(-0.3).unwrap(), -1.0);
        assert_eq!(sign(1.2).unwrap(), 1.0);
        assert!(sign(f64::NAN).is_err());
        assert!(sign_tensor(&Tensor::column(&[1.0, f64::NAN])).is_err());
    }

    #[test]
    fn sign_is_scale_invariant() {
        let x = Tensor::column(&[-3.0, -1e-9, 0.0, 2.5, 7.0]);
        let s = sign_tensor(&x).unwrap();
        for c in [1e-6, 0.5, 3.0, 1e6] {
            assert_eq!(sign_tensor(&x.scale(c)).unwrap(), s);
        }
    }

    #[test]
    fn ste_piecewise() {
        let g = Tensor::column(&[2.0, 2.0, 1.0, 1.0, 1.0]);
        let x = Tensor::column(&[0.5, 1.3, -1.2, 1.2, -1.1999]);
        let out = ste_backward(&g, &x).unwrap();
        assert_eq!(out.data(), &[2.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(ste_backward(&g, &Tensor::column(&[0.0])).is_err());
    }
}
