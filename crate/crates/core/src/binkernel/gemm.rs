use rayon::prelude::*;

use super::pack::{bitpack_columns, PackedSignMatrix};
use super::{sign, sign_tensor};
use crate::error::{ensure_param, Result};
use crate::svcore::{LinearParams, Precision};
use crate::tensor::{matmul_tn, Tensor};

const PAR_ROWS: usize = 16;

/// Row-major integer matrix produced by the binary GEMM kernels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

impl IntMatrix {
    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("shape is consistent")
    }
}

/// `±1` GEMM on packed operands: `A (m×n) · B (n×p)`.
///
/// `a` holds the rows of `A`; `b_cols` holds the *columns* of `B`, each
/// packed as a row (`bitpack_columns(B)`), so both operands stream along the
/// shared inner dimension. Every entry is `2·popcount(XNOR(a_i, b_j)) − n`
/// with the padding bits masked out.
pub fn xnor_popcount_gemm(a: &PackedSignMatrix, b_cols: &PackedSignMatrix) -> Result<IntMatrix> {
    ensure_param!(
        a.cols() == b_cols.cols(),
        "xnor gemm inner dimension mismatch: {} vs {}",
        a.cols(),
        b_cols.cols()
    );
    let (m, p, n) = (a.rows(), b_cols.rows(), a.cols() as i64);
    let wpr = a.words_per_row();
    let masks: Vec<u64> = (0..wpr).map(|w| a.valid_mask(w)).collect();
    let mut data = vec![0i64; m * p];
    if p == 0 {
        return Ok(IntMatrix { rows: m, cols: p, data });
    }
    let kernel = |(i, out): (usize, &mut [i64])| {
        let ar = a.row_words(i);
        for (j, o) in out.iter_mut().enumerate() {
            let br = b_cols.row_words(j);
            let mut agree = 0u32;
            for w in 0..wpr {
                agree += (!(ar[w] ^ br[w]) & masks[w]).count_ones();
            }
            *o = 2 * agree as i64 - n;
        }
    };
    if m >= PAR_ROWS {
        data.par_chunks_mut(p).enumerate().for_each(kernel);
    } else {
        data.chunks_mut(p).enumerate().for_each(kernel);
    }
    Ok(IntMatrix { rows: m, cols: p, data })
}

/// Reference `±1` integer GEMM on unpacked operands.
pub fn naive_sign_gemm(a: &Tensor, b: &Tensor) -> Result<IntMatrix> {
    ensure_param!(a.cols() == b.rows(), "naive gemm inner dimension mismatch");
    let (m, n, p) = (a.rows(), a.cols(), b.cols());
    let mut data = vec![0i64; m * p];
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0i64;
            for k in 0..n {
                acc += (a[(i, k)] as i64) * (b[(k, j)] as i64);
            }
            data[i * p + j] = acc;
        }
    }
    Ok(IntMatrix { rows: m, cols: p, data })
}

/// `Sᵀ · X` where `w_cols` packs the columns of a `±1` matrix `S (in×out)`.
///
/// Only additions and subtractions touch `x`; the result matches a dense
/// product with `±1` weights bit for bit.
pub fn sign_add_gemm(w_cols: &PackedSignMatrix, x: &Tensor) -> Result<Tensor> {
    ensure_param!(
        w_cols.cols() == x.rows(),
        "sign-add gemm dimension mismatch: weight in-dim {} vs input rows {}",
        w_cols.cols(),
        x.rows()
    );
    let n = x.cols();
    let mut out = Tensor::zeros(w_cols.rows(), n);
    if n == 0 {
        return Ok(out);
    }
    let kernel = |(o, orow): (usize, &mut [f64])| {
        let words = w_cols.row_words(o);
        for i in 0..w_cols.cols() {
            let xrow = x.row(i);
            if words[i / 64] >> (i % 64) & 1 == 1 {
                for (y, &v) in orow.iter_mut().zip(xrow) {
                    *y += v;
                }
            } else {
                for (y, &v) in orow.iter_mut().zip(xrow) {
                    *y -= v;
                }
            }
        }
    };
    if w_cols.rows() >= PAR_ROWS && n * x.rows() >= 1024 {
        out.data_mut().par_chunks_mut(n).enumerate().for_each(kernel);
    } else {
        out.data_mut().chunks_mut(n).enumerate().for_each(kernel);
    }
    Ok(out)
}

fn check_linear(x: &Tensor, params: &LinearParams, mode: Precision) -> Result<()> {
    ensure_param!(
        params.mode == mode,
        "expected a {mode:?} layer, got {:?}",
        params.mode
    );
    ensure_param!(
        x.rows() == params.in_dim(),
        "input has {} channels, layer expects {}",
        x.rows(),
        params.in_dim()
    );
    params.validate()
}

fn scale_and_shift(mut y: Tensor, params: &LinearParams) -> Tensor {
    let n = y.cols();
    for o in 0..y.rows() {
        let g = params.gamma.as_ref().map_or(1.0, |g| g[o]);
        let b = params.bias.as_ref().map_or(0.0, |b| b[o]);
        for v in &mut y.data_mut()[o * n..(o + 1) * n] {
            *v = g * *v + b;
        }
    }
    y
}

fn shifted_signs(x: &Tensor, params: &LinearParams) -> Result<Tensor> {
    let mut xs = x.clone();
    let n = x.cols();
    for i in 0..x.rows() {
        let beta = params.beta.as_ref().map_or(0.0, |b| b[i]);
        for v in &mut xs.data_mut()[i * n..(i + 1) * n] {
            *v = sign(*v - beta)?;
        }
    }
    Ok(xs)
}

/// `Y = γ ⊙ (Sign(W)ᵀ · Sign(X − β)) + bias`, evaluated with XNOR-popcount.
pub fn binary_linear_full(x: &Tensor, params: &LinearParams) -> Result<Tensor> {
    check_linear(x, params, Precision::BinaryFull)?;
    let w_cols = bitpack_columns(&sign_tensor(&params.weight)?)?;
    let x_cols = bitpack_columns(&shifted_signs(x, params)?)?;
    let acc = xnor_popcount_gemm(&w_cols, &x_cols)?;
    Ok(scale_and_shift(acc.to_tensor(), params))
}

/// Same function as [`binary_linear_full`] computed with dense float products.
pub fn binary_linear_full_unpacked(x: &Tensor, params: &LinearParams) -> Result<Tensor> {
    check_linear(x, params, Precision::BinaryFull)?;
    let ws = sign_tensor(&params.weight)?;
    let xs = shifted_signs(x, params)?;
    Ok(scale_and_shift(matmul_tn(&ws, &xs)?, params))
}

/// `Y = γ ⊙ (Sign(W)ᵀ · X) + bias`, using additions only.
pub fn binary_weight_linear(x: &Tensor, params: &LinearParams) -> Result<Tensor> {
    check_linear(x, params, Precision::BinaryWeight)?;
    let w_cols = bitpack_columns(&sign_tensor(&params.weight)?)?;
    Ok(scale_and_shift(sign_add_gemm(&w_cols, x)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binkernel::bitpack;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    fn random_real(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn xnor_small_cases() {
        let a = bitpack(&Tensor::from_rows(&[&[1.0, 1.0, -1.0, -1.0]])).unwrap();
        let b = bitpack(&Tensor::from_rows(&[&[1.0, -1.0, -1.0, 1.0]])).unwrap();
        assert_eq!(xnor_popcount_gemm(&a, &b).unwrap().data, vec![0]);
        for n in [1, 63, 64, 65, 130] {
            let row = bitpack(&Tensor::filled(1, n, -1.0)).unwrap();
            assert_eq!(xnor_popcount_gemm(&row, &row).unwrap().data, vec![n as i64]);
        }
        let c = bitpack(&Tensor::filled(1, 5, 1.0)).unwrap();
        assert!(xnor_popcount_gemm(&a, &c).is_err());
    }

    #[test]
    fn xnor_matches_naive_256() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_signs(&mut rng, 256, 256);
        let b = random_signs(&mut rng, 256, 256);
        let fast = xnor_popcount_gemm(&bitpack(&a).unwrap(), &bitpack_columns(&b).unwrap()).unwrap();
        assert_eq!(fast, naive_sign_gemm(&a, &b).unwrap());
    }

    #[test]
    fn binary_full_examples() {
        let x = Tensor::column(&[2.0, -3.0]);
        let mut p = LinearParams::full(Tensor::column(&[1.0, -1.0])).into_binary_full();
        assert_eq!(binary_linear_full(&x, &p).unwrap().data(), &[2.0]);
        p.gamma = Some(vec![0.0]);
        assert_eq!(binary_linear_full(&x, &p).unwrap().data(), &[0.0]);
        let fp = LinearParams::full(Tensor::column(&[1.0, -1.0]));
        assert!(binary_linear_full(&x, &fp).is_err());
        assert!(binary_linear_full(&Tensor::column(&[1.0]), &p).is_err());
    }

    #[test]
    fn binary_full_matches_sign_multiply_64() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = LinearParams::full(random_real(&mut rng, 64, 64)).into_binary_full();
        p.beta = Some((0..64).map(|_| rng.random_range(-0.5..0.5)).collect());
        p.gamma = Some((0..64).map(|_| rng.random_range(0.1..2.0)).collect());
        let x = random_real(&mut rng, 64, 64);
        let fast = binary_linear_full(&x, &p).unwrap();
        // naive oracle: elementwise sign then scalar loops
        let mut want = Tensor::zeros(64, 64);
        for o in 0..64 {
            for n in 0..64 {
                let mut acc = 0.0;
                for i in 0..64 {
                    let xs = if x[(i, n)] - p.beta.as_ref().unwrap()[i] >= 0.0 { 1.0 } else { -1.0 };
                    let ws = if p.weight[(i, o)] >= 0.0 { 1.0 } else { -1.0 };
                    acc += xs * ws;
                }
                want[(o, n)] = p.gamma.as_ref().unwrap()[o] * acc;
            }
        }
        assert!(fast.bit_eq(&want));
        assert!(fast.bit_eq(&binary_linear_full_unpacked(&x, &p).unwrap()));
    }

    #[test]
    fn binary_weight_examples() {
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mut p = LinearParams::full(Tensor::filled(2, 1, 0.7)).into_binary_weight();
        p.gamma = Some(vec![2.0]);
        assert_eq!(binary_weight_linear(&x, &p).unwrap().data(), &[8.0, 12.0]);
        let zero = Tensor::zeros(2, 3);
        assert_eq!(binary_weight_linear(&zero, &p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn binary_weight_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = LinearParams::full(random_real(&mut rng, 37, 19)).into_binary_weight();
        p.gamma = Some((0..19).map(|_| rng.random_range(0.1..2.0)).collect());
        let x = random_real(&mut rng, 37, 50);
        let got = binary_weight_linear(&x, &p).unwrap();
        let dense = matmul_tn(&sign_tensor(&p.weight).unwrap(), &x).unwrap();
        let mut want = dense.clone();
        for o in 0..19 {
            for v in want.row_mut(o) {
                *v *= p.gamma.as_ref().unwrap()[o];
            }
        }
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }
}
