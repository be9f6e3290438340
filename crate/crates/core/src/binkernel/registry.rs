//! Named GEMM kernels for the throughput benchmark.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gemm::{sign_add_gemm, xnor_popcount_gemm};
use super::pack::{bitpack, bitpack_columns, PackedSignMatrix};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

/// A square-GEMM implementation that can be timed on `±1` operands.
pub trait GemmKernel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Converts operands to the kernel's native layout. Not timed.
    fn prepare(&self, a: &Tensor, b: &Tensor) -> Result<Box<dyn PreparedGemm>>;
}

pub trait PreparedGemm {
    /// Runs the product once and returns a checksum so the work is observable.
    fn run(&self) -> Result<f64>;
}

struct Xnor;
struct XnorOperands(PackedSignMatrix, PackedSignMatrix);

impl GemmKernel for Xnor {
    fn name(&self) -> &'static str {
        "xnor"
    }

    fn prepare(&self, a: &Tensor, b: &Tensor) -> Result<Box<dyn PreparedGemm>> {
        Ok(Box::new(XnorOperands(bitpack(a)?, bitpack_columns(b)?)))
    }
}

impl PreparedGemm for XnorOperands {
    fn run(&self) -> Result<f64> {
        let out = xnor_popcount_gemm(&self.0, &self.1)?;
        Ok(out.data.iter().sum::<i64>() as f64)
    }
}

struct SignAdd;
struct SignAddOperands(PackedSignMatrix, Tensor);

impl GemmKernel for SignAdd {
    fn name(&self) -> &'static str {
        "signadd"
    }

    fn prepare(&self, a: &Tensor, b: &Tensor) -> Result<Box<dyn PreparedGemm>> {
        // A·B = Sᵀ·B with S = Aᵀ, and the columns of S are the rows of A
        Ok(Box::new(SignAddOperands(bitpack(a)?, b.clone())))
    }
}

impl PreparedGemm for SignAddOperands {
    fn run(&self) -> Result<f64> {
        Ok(sign_add_gemm(&self.0, &self.1)?.sum())
    }
}

struct FloatRef;
struct FloatOperands(Tensor, Tensor);

impl GemmKernel for FloatRef {
    fn name(&self) -> &'static str {
        "floatref"
    }

    fn prepare(&self, a: &Tensor, b: &Tensor) -> Result<Box<dyn PreparedGemm>> {
        Ok(Box::new(FloatOperands(a.clone(), b.clone())))
    }
}

impl PreparedGemm for FloatOperands {
    fn run(&self) -> Result<f64> {
        Ok(matmul(&self.0, &self.1)?.sum())
    }
}

pub struct KernelRegistry {
    kernels: Vec<Box<dyn GemmKernel>>,
}

impl Default for KernelRegistry {
    fn default() -> Self {
        let mut reg = KernelRegistry {
            kernels: Vec::new(),
        };
        reg.register(Box::new(Xnor));
        reg.register(Box::new(SignAdd));
        reg.register(Box::new(FloatRef));
        reg
    }
}

impl KernelRegistry {
    pub fn register(&mut self, kernel: Box<dyn GemmKernel>) {
        self.kernels.retain(|k| k.name() != kernel.name());
        self.kernels.push(kernel);
    }

    pub fn get(&self, name: &str) -> Result<&dyn GemmKernel> {
        self.kernels
            .iter()
            .find(|k| k.name() == name)
            .map(|k| k.as_ref())
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown kernel '{name}' (available: {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.kernels.iter().map(|k| k.name()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kernel: String,
    pub n: usize,
    pub trials: usize,
    /// Wall-clock nanoseconds per multiply-accumulate slot (`n³` per product).
    pub ns_per_op: f64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "kernel,n,trials,ns_per_op";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{:.6}", self.kernel, self.n, self.trials, self.ns_per_op)
    }
}

/// Times `trials` square `n×n·n×n` products on random `±1` operands.
pub fn bench_kernel(kernel: &dyn GemmKernel, n: usize, trials: usize, seed: u64) -> Result<BenchRow> {
    if n == 0 || trials == 0 {
        return Err(Error::param("bench needs n ≥ 1 and trials ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut signs = |rows, cols| {
        let data = (0..rows * cols)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Tensor::from_vec(rows, cols, data)
    };
    let a = signs(n, n)?;
    let b = signs(n, n)?;
    let prepared = kernel.prepare(&a, &b)?;
    let start = Instant::now();
    let mut checksum = 0.0;
    for _ in 0..trials {
        checksum += prepared.run()?;
    }
    let elapsed = start.elapsed().as_nanos() as f64;
    std::hint::black_box(checksum);
    Ok(BenchRow {
        kernel: kernel.name().to_string(),
        n,
        trials,
        ns_per_op: elapsed / (trials as f64 * (n as f64).powi(3)),
    })
}
