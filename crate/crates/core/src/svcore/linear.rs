use serde::{Deserialize, Serialize};

use crate::binkernel::{binary_linear_full, binary_weight_linear};
use crate::error::{ensure_param, Result};
use crate::tensor::{matmul_tn, Tensor};

/// Arithmetic used by a linear layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    FullPrecision,
    /// `X · Sign(W)`, computed with additions. Safe on vector features.
    BinaryWeight,
    /// `Sign(X − β) · Sign(W)`, computed with XNOR-popcount. Scalars only.
    BinaryFull,
}

impl Precision {
    pub fn is_binary(self) -> bool {
        self != Precision::FullPrecision
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::FullPrecision => "full_precision",
            Precision::BinaryWeight => "binary_weight",
            Precision::BinaryFull => "binary_full",
        }
    }
}

/// Weights of one linear map, stored `in_dim × out_dim`.
///
/// `beta` shifts inputs per input channel before `Sign` and only exists in
/// [`Precision::BinaryFull`]; `gamma` rescales outputs per output channel in
/// both binary modes.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub mode: Precision,
    pub beta: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

impl LinearParams {
    pub fn full(weight: Tensor) -> Self {
        LinearParams {
            weight,
            mode: Precision::FullPrecision,
            beta: None,
            gamma: None,
            bias: None,
        }
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Self {
        self.bias = Some(bias);
        self
    }

    /// Switches to sign weights with unit output scales.
    pub fn into_binary_weight(mut self) -> Self {
        self.mode = Precision::BinaryWeight;
        self.beta = None;
        self.gamma = Some(vec![1.0; self.out_dim()]);
        self
    }

    /// Switches to sign weights and sign inputs with `β = 0`, `γ = 1`.
    pub fn into_binary_full(mut self) -> Self {
        self.mode = Precision::BinaryFull;
        self.beta = Some(vec![0.0; self.in_dim()]);
        self.gamma = Some(vec![1.0; self.out_dim()]);
        self
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (i, o) = (self.in_dim(), self.out_dim());
        ensure_param!(
            self.weight.data().iter().all(|v| v.is_finite()),
            "non-finite weight"
        );
        if let Some(g) = &self.gamma {
            ensure_param!(g.len() == o, "gamma has {} entries, expected {o}", g.len());
            ensure_param!(g.iter().all(|v| v.is_finite()), "non-finite gamma");
        }
        if let Some(b) = &self.bias {
            ensure_param!(b.len() == o, "bias has {} entries, expected {o}", b.len());
        }
        match (self.mode, &self.beta) {
            (Precision::BinaryFull, Some(b)) => {
                ensure_param!(b.len() == i, "beta has {} entries, expected {i}", b.len())
            }
            (Precision::BinaryFull, None) => {}
            (_, Some(_)) => {
                return Err(crate::Error::param(format!(
                    "beta is only allowed in binary_full mode, layer is {}",
                    self.mode.as_str()
                )))
            }
            (_, None) => {}
        }
        Ok(())
    }

    /// Applies the layer to `x: in_dim × N`, returning `out_dim × N`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self.mode {
            Precision::FullPrecision => {
                self.validate()?;
                ensure_param!(
                    x.rows() == self.in_dim(),
                    "input has {} channels, layer expects {}",
                    x.rows(),
                    self.in_dim()
                );
                let mut y = matmul_tn(&self.weight, x)?;
                if let Some(b) = &self.bias {
                    let n = y.cols();
                    for (o, &bo) in b.iter().enumerate() {
                        for v in &mut y.data_mut()[o * n..(o + 1) * n] {
                            *v += bo;
                        }
                    }
                }
                Ok(y)
            }
            Precision::BinaryWeight => binary_weight_linear(x, self),
            Precision::BinaryFull => binary_linear_full(x, self),
        }
    }
}
