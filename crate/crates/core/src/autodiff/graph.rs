//! Eager tape for reverse-mode differentiation.
//!
//! Every operation computes its value immediately and appends a node holding
//! whatever the backward rule needs. [`Graph::backward`] walks the nodes in
//! reverse recording order and accumulates gradients additively, so a value
//! consumed twice receives the sum of both contributions.

use std::collections::BTreeMap;

use crate::binkernel::{bitpack_columns, ste_passes, xnor_popcount_gemm};
use crate::error::{ensure_param, Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, sum3, Tensor};

/// Variance floor shared by every normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

/// Statistics source for a normalization node.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a> {
    /// Use statistics of the current batch (training).
    Batch,
    /// Use stored running statistics (evaluation).
    Running { mean: &'a [f64], var: &'a [f64] },
}

enum Op {
    Input,
    Param(String),
    Linear {
        x: Var,
        w: Var,
        bias: Option<Var>,
    },
    BinaryFull {
        x: Var,
        w: Var,
        beta: Var,
        gamma: Var,
        bias: Option<Var>,
        shifted: Tensor,
        x_signs: Tensor,
        w_signs: Tensor,
        acc: Tensor,
    },
    BinaryWeight {
        x: Var,
        w: Var,
        gamma: Option<Var>,
        w_signs: Tensor,
        acc: Tensor,
    },
    Sign(Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    ConcatRows(Vec<Var>),
    Pool {
        x: Var,
        group: usize,
        interleave: usize,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    ScaleSegments {
        x: Var,
        factors: Var,
        seg_cols: usize,
    },
    Project {
        frame: Var,
        v: Var,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
        interleave: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch: Option<(Vec<f64>, Vec<f64>)>,
    },
    VectorNorm {
        x: Var,
        log_scale: Var,
        denom: Vec<f64>,
        norms: Tensor,
        batch_mean_norm: Option<Vec<f64>>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    WeightedSum {
        x: Var,
        weights: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn row_sums(t: &Tensor) -> Vec<f64> {
    (0..t.rows()).map(|r| t.row(r).iter().sum()).collect()
}

fn add_rows(t: &mut Tensor, per_row: &[f64]) {
    let n = t.cols();
    for (r, &b) in per_row.iter().enumerate() {
        for v in &mut t.data_mut()[r * n..(r + 1) * n] {
            *v += b;
        }
    }
}

fn scale_rows(t: &mut Tensor, per_row: &[f64]) {
    let n = t.cols();
    for (r, &s) in per_row.iter().enumerate() {
        for v in &mut t.data_mut()[r * n..(r + 1) * n] {
            *v *= s;
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a constant (data) leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Records a trainable leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push(value, Op::Param(name.into()))
    }

    /// `y = wᵀx + bias` with `w: in×out`, `x: in×N`, `bias: out×1`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        ensure_param!(
            xv.rows() == wv.rows(),
            "linear: input has {} channels, weight expects {}",
            xv.rows(),
            wv.rows()
        );
        let mut y = matmul_tn(wv, xv)?;
        if let Some(b) = bias {
            let bv = self.value(b);
            ensure_param!(bv.shape() == (y.rows(), 1), "linear: bias shape {:?}", bv.shape());
            add_rows(&mut y, bv.data());
        }
        Ok(self.push(y, Op::Linear { x, w, bias }))
    }

    /// `y = γ ⊙ (Sign(w)ᵀ · Sign(x − β)) + bias` through the XNOR kernel.
    pub fn binary_full(
        &mut self,
        x: Var,
        w: Var,
        beta: Var,
        gamma: Var,
        bias: Option<Var>,
    ) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (bv, gv) = (self.value(beta), self.value(gamma));
        ensure_param!(
            xv.rows() == wv.rows(),
            "binary_full: input has {} channels, weight expects {}",
            xv.rows(),
            wv.rows()
        );
        ensure_param!(bv.shape() == (xv.rows(), 1), "binary_full: beta shape {:?}", bv.shape());
        ensure_param!(gv.shape() == (wv.cols(), 1), "binary_full: gamma shape {:?}", gv.shape());
        let n = xv.cols();
        let mut shifted = xv.clone();
        for (i, &b) in bv.data().iter().enumerate() {
            for v in &mut shifted.data_mut()[i * n..(i + 1) * n] {
                *v -= b;
            }
        }
        let x_signs = crate::binkernel::sign_tensor(&shifted)?;
        let w_signs = crate::binkernel::sign_tensor(wv)?;
        let acc = xnor_popcount_gemm(&bitpack_columns(&w_signs)?, &bitpack_columns(&x_signs)?)?
            .to_tensor();
        let mut y = acc.clone();
        scale_rows(&mut y, gv.data());
        if let Some(b) = bias {
            let bias_v = self.value(b);
            ensure_param!(bias_v.shape() == (y.rows(), 1), "binary_full: bias shape");
            add_rows(&mut y, bias_v.data());
        }
        Ok(self.push(
            y,
            Op::BinaryFull {
                x,
                w,
                beta,
                gamma,
                bias,
                shifted,
                x_signs,
                w_signs,
                acc,
            },
        ))
    }

    /// `y = γ ⊙ (Sign(w)ᵀ · x)` through the addition-only kernel.
    pub fn binary_weight(&mut self, x: Var, w: Var, gamma: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        ensure_param!(
            xv.rows() == wv.rows(),
            "binary_weight: input has {} channels, weight expects {}",
            xv.rows(),
            wv.rows()
        );
        let w_signs = crate::binkernel::sign_tensor(wv)?;
        let acc = crate::binkernel::sign_add_gemm(&bitpack_columns(&w_signs)?, xv)?;
        let mut y = acc.clone();
        if let Some(g) = gamma {
            let gv = self.value(g);
            ensure_param!(gv.shape() == (y.rows(), 1), "binary_weight: gamma shape {:?}", gv.shape());
            scale_rows(&mut y, gv.data());
        }
        Ok(self.push(
            y,
            Op::BinaryWeight {
                x,
                w,
                gamma,
                w_signs,
                acc,
            },
        ))
    }

    /// Elementwise `Sign` with the clipped straight-through gradient.
    pub fn sign(&mut self, x: Var) -> Result<Var> {
        let y = crate::binkernel::sign_tensor(self.value(x))?;
        Ok(self.push(y, Op::Sign(x)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_param!(self.value(a).shape() == self.value(b).shape(), "add: shape mismatch");
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_param!(self.value(a).shape() == self.value(b).shape(), "sub: shape mismatch");
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure_param!(!parts.is_empty(), "concat_rows: nothing to concatenate");
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::vstack(&tensors)?;
        Ok(self.push(y, Op::ConcatRows(parts.to_vec())))
    }

    /// Pools consecutive groups of `group` sites.
    ///
    /// Columns are laid out `site * interleave + component`; output column
    /// `g * interleave + c` pools input columns `(g * group + t) * interleave + c`.
    pub fn pool(&mut self, x: Var, group: usize, interleave: usize, mode: PoolMode) -> Result<Var> {
        let xv = self.value(x);
        ensure_param!(group >= 1 && interleave >= 1, "pool: group and interleave must be ≥ 1");
        ensure_param!(
            xv.cols() % (group * interleave) == 0,
            "pool: {} columns not divisible into groups of {group}×{interleave}",
            xv.cols()
        );
        let groups = xv.cols() / (group * interleave);
        let out_cols = groups * interleave;
        let mut y = Tensor::zeros(xv.rows(), out_cols);
        let mut argmax = Vec::new();
        if mode == PoolMode::Max {
            argmax = vec![0; xv.rows() * out_cols];
        }
        for r in 0..xv.rows() {
            let row = xv.row(r);
            for g in 0..groups {
                for c in 0..interleave {
                    let oc = g * interleave + c;
                    let col = |t: usize| (g * group + t) * interleave + c;
                    match mode {
                        PoolMode::Mean => {
                            let s: f64 = (0..group).map(|t| row[col(t)]).sum();
                            y[(r, oc)] = s / group as f64;
                        }
                        PoolMode::Max => {
                            let mut best = col(0);
                            for t in 1..group {
                                if row[col(t)] > row[best] {
                                    best = col(t);
                                }
                            }
                            y[(r, oc)] = row[best];
                            argmax[r * out_cols + oc] = best;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            y,
            Op::Pool {
                x,
                group,
                interleave,
                mode,
                argmax,
            },
        ))
    }

    /// Multiplies each column segment of `x` by a per-row factor.
    ///
    /// `x: r × (S·seg_cols)` and `factors: r × S`; column `c` uses factor
    /// column `c / seg_cols`.
    pub fn scale_segments(&mut self, x: Var, factors: Var, seg_cols: usize) -> Result<Var> {
        let (xv, fv) = (self.value(x), self.value(factors));
        ensure_param!(seg_cols >= 1, "scale_segments: empty segment");
        ensure_param!(
            fv.rows() == xv.rows() && fv.cols() * seg_cols == xv.cols(),
            "scale_segments: factors {:?} incompatible with input {:?} (segment {seg_cols})",
            fv.shape(),
            xv.shape()
        );
        let mut y = xv.clone();
        for r in 0..xv.rows() {
            let f = fv.row(r);
            for (c, v) in y.row_mut(r).iter_mut().enumerate() {
                *v *= f[c / seg_cols];
            }
        }
        Ok(self.push(y, Op::ScaleSegments { x, factors, seg_cols }))
    }

    /// Invariant projection `v_cᵀ v` per site.
    ///
    /// `frame: 3 × 3N` and `v: q × 3N` give `3q × N` with row `a * q + c`
    /// holding `⟨frame axis a, vector channel c⟩`.
    pub fn project(&mut self, frame: Var, v: Var) -> Result<Var> {
        let (fv, vv) = (self.value(frame), self.value(v));
        ensure_param!(fv.rows() == 3, "project: frame must have 3 axes, has {}", fv.rows());
        ensure_param!(
            fv.cols() == vv.cols() && fv.cols() % 3 == 0,
            "project: frame columns {} vs vector columns {}",
            fv.cols(),
            vv.cols()
        );
        let q = vv.rows();
        let n = vv.cols() / 3;
        let mut y = Tensor::zeros(3 * q, n);
        for a in 0..3 {
            let f = fv.row(a);
            for c in 0..q {
                let vr = vv.row(c);
                let out = y.row_mut(a * q + c);
                for (s, o) in out.iter_mut().enumerate() {
                    let k = 3 * s;
                    *o = sum3(f[k] * vr[k], f[k + 1] * vr[k + 1], f[k + 2] * vr[k + 2]);
                }
            }
        }
        Ok(self.push(y, Op::Project { frame, v }))
    }

    /// Selects sites: output site `j` copies input site `index[j]`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, interleave: usize) -> Result<Var> {
        let xv = self.value(x);
        ensure_param!(interleave >= 1 && xv.cols() % interleave == 0, "gather: bad interleave");
        let sites = xv.cols() / interleave;
        if let Some(&bad) = index.iter().find(|&&i| i >= sites) {
            return Err(Error::Internal(format!(
                "gather index {bad} out of range for {sites} sites"
            )));
        }
        let mut y = Tensor::zeros(xv.rows(), index.len() * interleave);
        for r in 0..xv.rows() {
            let src = xv.row(r);
            let dst = y.row_mut(r);
            for (j, &i) in index.iter().enumerate() {
                dst[j * interleave..(j + 1) * interleave]
                    .copy_from_slice(&src[i * interleave..(i + 1) * interleave]);
            }
        }
        Ok(self.push(y, Op::Gather { x, index, interleave }))
    }

    /// Per-row standardization over columns followed by `γ x̂ + β`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, stats: NormStats<'_>) -> Result<Var> {
        let xv = self.value(x);
        let (r, n) = xv.shape();
        ensure_param!(
            self.value(gamma).shape() == (r, 1) && self.value(beta).shape() == (r, 1),
            "batch_norm: affine parameters must be {r}×1"
        );
        let (mean, var, batch) = match stats {
            NormStats::Batch => {
                ensure_param!(n > 0, "batch_norm: empty batch");
                let mean: Vec<f64> = row_sums(xv).into_iter().map(|s| s / n as f64).collect();
                let var: Vec<f64> = (0..r)
                    .map(|i| xv.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / n as f64)
                    .collect();
                (mean.clone(), var.clone(), Some((mean, var)))
            }
            NormStats::Running { mean, var } => {
                ensure_param!(mean.len() == r && var.len() == r, "batch_norm: running stats length");
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = xv.clone();
        for i in 0..r {
            for v in xhat.row_mut(i) {
                *v = (*v - mean[i]) * inv_std[i];
            }
        }
        let mut y = xhat.clone();
        scale_rows(&mut y, self.value(gamma).data());
        add_rows(&mut y, self.value(beta).data());
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            },
        ))
    }

    /// Rescales each vector channel by `exp(log_scale) / (mean ‖v‖ + ε)`.
    ///
    /// Only norms are touched; directions pass through unchanged.
    /// `running_mean_norm` selects evaluation mode.
    pub fn vector_norm(&mut self, x: Var, log_scale: Var, running_mean_norm: Option<&[f64]>) -> Result<Var> {
        let xv = self.value(x);
        let q = xv.rows();
        ensure_param!(xv.cols() % 3 == 0, "vector_norm: columns must be coordinate triples");
        ensure_param!(self.value(log_scale).shape() == (q, 1), "vector_norm: scale must be {q}×1");
        let n = xv.cols() / 3;
        let mut norms = Tensor::zeros(q, n);
        for c in 0..q {
            let row = xv.row(c);
            for s in 0..n {
                let k = 3 * s;
                norms[(c, s)] = sum3(row[k] * row[k], row[k + 1] * row[k + 1], row[k + 2] * row[k + 2]).sqrt();
            }
        }
        let (mean_norm, batch_mean_norm) = match running_mean_norm {
            None => {
                ensure_param!(n > 0, "vector_norm: empty batch");
                let m: Vec<f64> = row_sums(&norms).into_iter().map(|s| s / n as f64).collect();
                (m.clone(), Some(m))
            }
            Some(m) => {
                ensure_param!(m.len() == q, "vector_norm: running stats length");
                (m.to_vec(), None)
            }
        };
        let denom: Vec<f64> = mean_norm.iter().map(|m| m + NORM_EPS).collect();
        let factor: Vec<f64> = self
            .value(log_scale)
            .data()
            .iter()
            .zip(&denom)
            .map(|(ls, d)| ls.exp() / d)
            .collect();
        let mut y = xv.clone();
        scale_rows(&mut y, &factor);
        Ok(self.push(
            y,
            Op::VectorNorm {
                x,
                log_scale,
                denom,
                norms,
                batch_mean_norm,
            },
        ))
    }

    /// Mean softmax cross-entropy of `logits: C × B` against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (classes, batch) = lv.shape();
        ensure_param!(labels.len() == batch, "cross_entropy: {} labels for {batch} samples", labels.len());
        ensure_param!(batch > 0, "cross_entropy: empty batch");
        ensure_param!(labels.iter().all(|&l| l < classes), "cross_entropy: label out of range");
        let mut probs = Tensor::zeros(classes, batch);
        let mut loss = 0.0;
        for b in 0..batch {
            let max = (0..classes).map(|c| lv[(c, b)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..classes).map(|c| (lv[(c, b)] - max).exp()).sum();
            for c in 0..classes {
                probs[(c, b)] = (lv[(c, b)] - max).exp() / z;
            }
            loss += z.ln() + max - lv[(labels[b], b)];
        }
        let y = Tensor::filled(1, 1, loss / batch as f64);
        Ok(self.push(
            y,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `Σ x ⊙ weights` as a `1×1` value.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        ensure_param!(self.value(x).shape() == weights.shape(), "weighted_sum: shape mismatch");
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(Tensor::filled(1, 1, s), Op::WeightedSum { x, weights }))
    }

    /// Batch statistics `(mean, variance)` recorded by a training-mode
    /// [`Graph::batch_norm`] node.
    pub fn batch_norm_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes.get(v.0)?.op {
            Op::BatchNorm {
                batch: Some((m, var)),
                ..
            } => Some((m, var)),
            _ => None,
        }
    }

    /// Batch mean norms recorded by a training-mode [`Graph::vector_norm`] node.
    pub fn vector_norm_stats(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes.get(v.0)?.op {
            Op::VectorNorm {
                batch_mean_norm: Some(m),
                ..
            } => Some(m),
            _ => None,
        }
    }

    /// Reverse pass from a `1×1` value with upstream gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "value {} was not recorded on this tape ({} nodes)",
                loss.0,
                self.nodes.len()
            )));
        }
        ensure_param!(
            self.value(loss).shape() == (1, 1),
            "backward needs a scalar loss, got {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(name), Some(g)) = (&node.op, &grads[idx]) {
                match by_name.get_mut(name) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        by_name.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        Ok(Gradients { grads, by_name })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, bias } => {
                acc(grads, *x, matmul(self.value(*w), g)?);
                acc(grads, *w, matmul_nt(self.value(*x), g)?);
                if let Some(b) = bias {
                    acc(grads, *b, Tensor::column(&row_sums(g)));
                }
            }
            Op::BinaryFull {
                x,
                w,
                beta,
                gamma,
                bias,
                shifted,
                x_signs,
                w_signs,
                acc: prod,
            } => {
                let gamma_v = self.value(*gamma).data();
                let dgamma: Vec<f64> = (0..g.rows())
                    .map(|o| g.row(o).iter().zip(prod.row(o)).map(|(a, b)| a * b).sum())
                    .collect();
                acc(grads, *gamma, Tensor::column(&dgamma));
                if let Some(b) = bias {
                    acc(grads, *b, Tensor::column(&row_sums(g)));
                }
                let mut dprod = g.clone();
                scale_rows(&mut dprod, gamma_v);
                let dxs = matmul(w_signs, &dprod)?;
                let dx = ste_mask(&dxs, shifted);
                let dbeta: Vec<f64> = row_sums(&dx).into_iter().map(|s| -s).collect();
                acc(grads, *x, dx);
                acc(grads, *beta, Tensor::column(&dbeta));
                let dws = matmul_nt(x_signs, &dprod)?;
                acc(grads, *w, ste_mask(&dws, self.value(*w)));
            }
            Op::BinaryWeight {
                x,
                w,
                gamma,
                w_signs,
                acc: prod,
            } => {
                let mut dprod = g.clone();
                if let Some(gm) = gamma {
                    let dgamma: Vec<f64> = (0..g.rows())
                        .map(|o| g.row(o).iter().zip(prod.row(o)).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(grads, *gm, Tensor::column(&dgamma));
                    scale_rows(&mut dprod, self.value(*gm).data());
                }
                acc(grads, *x, matmul(w_signs, &dprod)?);
                let dws = matmul_nt(self.value(*x), &dprod)?;
                acc(grads, *w, ste_mask(&dws, self.value(*w)));
            }
            Op::Sign(x) => acc(grads, *x, ste_mask(g, self.value(*x))),
            Op::Relu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                acc(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                acc(grads, *x, d);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.scale(-1.0));
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let slice = Tensor::from_vec(
                        rows,
                        g.cols(),
                        g.data()[start * g.cols()..(start + rows) * g.cols()].to_vec(),
                    )?;
                    acc(grads, p, slice);
                    start += rows;
                }
            }
            Op::Pool {
                x,
                group,
                interleave,
                mode,
                argmax,
            } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                let out_cols = g.cols();
                for r in 0..g.rows() {
                    for oc in 0..out_cols {
                        let gv = g[(r, oc)];
                        match mode {
                            PoolMode::Max => dx[(r, argmax[r * out_cols + oc])] += gv,
                            PoolMode::Mean => {
                                let (gi, c) = (oc / interleave, oc % interleave);
                                let share = gv / *group as f64;
                                for t in 0..*group {
                                    dx[(r, (gi * group + t) * interleave + c)] += share;
                                }
                            }
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::ScaleSegments { x, factors, seg_cols } => {
                let (xv, fv) = (self.value(*x), self.value(*factors));
                let mut dx = g.clone();
                let mut df = Tensor::zeros(fv.rows(), fv.cols());
                for r in 0..xv.rows() {
                    let f = fv.row(r);
                    let xr = xv.row(r);
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        df[(r, c / seg_cols)] += *d * xr[c];
                        *d *= f[c / seg_cols];
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *factors, df);
            }
            Op::Project { frame, v } => {
                let (fv, vv) = (self.value(*frame), self.value(*v));
                let q = vv.rows();
                let n = g.cols();
                let mut df = Tensor::zeros(3, fv.cols());
                let mut dv = Tensor::zeros(q, vv.cols());
                for a in 0..3 {
                    for c in 0..q {
                        let gr = g.row(a * q + c);
                        for s in 0..n {
                            let gs = gr[s];
                            if gs == 0.0 {
                                continue;
                            }
                            for d in 0..3 {
                                let k = 3 * s + d;
                                df[(a, k)] += gs * vv[(c, k)];
                                dv[(c, k)] += gs * fv[(a, k)];
                            }
                        }
                    }
                }
                acc(grads, *frame, df);
                acc(grads, *v, dv);
            }
            Op::Gather { x, index, interleave } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    let src = g.row(r);
                    let dst = dx.row_mut(r);
                    for (j, &i) in index.iter().enumerate() {
                        for d in 0..*interleave {
                            dst[i * interleave + d] += src[j * interleave + d];
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            } => {
                let gamma_v = self.value(*gamma).data();
                let dgamma: Vec<f64> = (0..g.rows())
                    .map(|r| g.row(r).iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum())
                    .collect();
                acc(grads, *gamma, Tensor::column(&dgamma));
                acc(grads, *beta, Tensor::column(&row_sums(g)));
                let n = g.cols() as f64;
                let mut dx = g.clone();
                for r in 0..g.rows() {
                    let k = gamma_v[r] * inv_std[r];
                    if batch.is_some() {
                        let sum_g: f64 = g.row(r).iter().sum();
                        let sum_gx: f64 = g.row(r).iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                        let xr = xhat.row(r);
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = k * (*d - sum_g / n - xr[c] * sum_gx / n);
                        }
                    } else {
                        for d in dx.row_mut(r) {
                            *d *= k;
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::VectorNorm {
                x,
                log_scale,
                denom,
                norms,
                batch_mean_norm,
            } => {
                let xv = self.value(*x);
                let scale: Vec<f64> = self.value(*log_scale).data().iter().map(|v| v.exp()).collect();
                let dls: Vec<f64> = (0..g.rows())
                    .map(|r| g.row(r).iter().zip(node.value.row(r)).map(|(a, b)| a * b).sum())
                    .collect();
                acc(grads, *log_scale, Tensor::column(&dls));
                let n = norms.cols();
                let mut dx = g.clone();
                for c in 0..g.rows() {
                    let k = scale[c] / denom[c];
                    let gx: f64 = g.row(c).iter().zip(xv.row(c)).map(|(a, b)| a * b).sum();
                    let through_mean = batch_mean_norm.is_some();
                    let coeff = scale[c] / (denom[c] * denom[c]) * gx / n as f64;
                    let xr = xv.row(c);
                    let nr = norms.row(c);
                    for (col, d) in dx.row_mut(c).iter_mut().enumerate() {
                        *d *= k;
                        if through_mean {
                            let nv = nr[col / 3];
                            if nv > 0.0 {
                                *d -= coeff * xr[col] / nv;
                            }
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let up = g[(0, 0)];
                let batch = labels.len() as f64;
                let mut d = probs.clone();
                for (b, &l) in labels.iter().enumerate() {
                    d[(l, b)] -= 1.0;
                }
                acc(grads, *logits, d.scale(up / batch));
            }
            Op::WeightedSum { x, weights } => {
                acc(grads, *x, weights.scale(g[(0, 0)]));
            }
        }
        Ok(())
    }
}

fn ste_mask(g: &Tensor, pre_sign: &Tensor) -> Tensor {
    g.zip_map(pre_sign, |gv, x| if ste_passes(x) { gv } else { 0.0 })
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded value.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0)?.as_ref()
    }

    /// Gradients of named parameters, summed over every binding of a name.
    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.by_name
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }
}
