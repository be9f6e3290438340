//! Named layer descriptions and their binding onto a tape.
//!
//! Parameters live in a [`ParamStore`] under dotted names; a spec knows its
//! names and shapes, and `bind` records the current values as graph leaves.

use rand::Rng;

use super::linear::{LinearParams, Precision};
use crate::autodiff::{Graph, NormStats, ParamStore, Var};
use crate::error::{ensure_param, Error, Result};
use crate::tensor::Tensor;

/// Momentum of the running normalization statistics.
pub const NORM_MOMENTUM: f64 = 0.1;

/// Uniform Xavier initialization in `±√(6/(fan_in+fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_vec(fan_in, fan_out, data).expect("sized above")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSpec {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub mode: Precision,
    pub bias: bool,
}

impl LinearSpec {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        LinearSpec {
            name: name.into(),
            in_dim,
            out_dim,
            mode: Precision::FullPrecision,
            bias,
        }
    }

    pub fn key(&self, part: &str) -> String {
        format!("{}.{part}", self.name)
    }

    /// Names of every tensor this layer owns in its current mode.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec![self.key("weight")];
        if self.bias {
            out.push(self.key("bias"));
        }
        if self.mode == Precision::BinaryFull {
            out.push(self.key("beta"));
        }
        if self.mode.is_binary() {
            out.push(self.key("gamma"));
        }
        out
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.insert(&self.key("weight"), xavier_uniform(rng, self.in_dim, self.out_dim))?;
        if self.bias {
            store.insert(&self.key("bias"), Tensor::zeros(self.out_dim, 1))?;
        }
        self.insert_binary_params(store)
    }

    fn insert_binary_params(&self, store: &mut ParamStore) -> Result<()> {
        if self.mode == Precision::BinaryFull {
            store.insert(&self.key("beta"), Tensor::zeros(self.in_dim, 1))?;
        }
        if self.mode.is_binary() {
            store.insert(&self.key("gamma"), Tensor::filled(self.out_dim, 1, 1.0))?;
        }
        Ok(())
    }

    /// Switches a full-precision layer to `mode`, adding `β = 0` / `γ = 1`.
    /// Weights are kept as the latent real values behind `Sign`.
    pub fn binarize(&mut self, mode: Precision, store: &mut ParamStore) -> Result<()> {
        if self.mode.is_binary() {
            return Err(Error::State(format!("layer '{}' is already binarized", self.name)));
        }
        ensure_param!(mode.is_binary(), "binarize: target mode must be binary");
        self.mode = mode;
        self.insert_binary_params(store)
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> Result<BoundLinear> {
        let w = store.get(&self.key("weight"))?;
        ensure_param!(
            w.shape() == (self.in_dim, self.out_dim),
            "'{}' weight is {:?}, expected {:?}",
            self.name,
            w.shape(),
            (self.in_dim, self.out_dim)
        );
        let mut leaf = |part: &str| -> Result<Var> {
            let key = self.key(part);
            Ok(g.param(key.clone(), store.get(&key)?.clone()))
        };
        let weight = leaf("weight")?;
        let bias = if self.bias { Some(leaf("bias")?) } else { None };
        let beta = if self.mode == Precision::BinaryFull {
            Some(leaf("beta")?)
        } else {
            None
        };
        let gamma = if self.mode.is_binary() { Some(leaf("gamma")?) } else { None };
        Ok(BoundLinear {
            mode: self.mode,
            weight,
            bias,
            beta,
            gamma,
        })
    }

    /// Writes `params` into `store` under `name` and returns the matching spec.
    pub fn from_params(name: &str, params: &LinearParams, store: &mut ParamStore) -> Result<Self> {
        params.validate()?;
        let spec = LinearSpec {
            name: name.to_string(),
            in_dim: params.in_dim(),
            out_dim: params.out_dim(),
            mode: params.mode,
            bias: params.bias.is_some(),
        };
        store.insert(&spec.key("weight"), params.weight.clone())?;
        if let Some(b) = &params.bias {
            store.insert(&spec.key("bias"), Tensor::column(b))?;
        }
        if spec.mode == Precision::BinaryFull {
            let beta = params.beta.clone().unwrap_or_else(|| vec![0.0; spec.in_dim]);
            store.insert(&spec.key("beta"), Tensor::column(&beta))?;
        }
        if spec.mode.is_binary() {
            let gamma = params.gamma.clone().unwrap_or_else(|| vec![1.0; spec.out_dim]);
            store.insert(&spec.key("gamma"), Tensor::column(&gamma))?;
        }
        Ok(spec)
    }

    pub fn to_params(&self, store: &ParamStore) -> Result<LinearParams> {
        let col = |part: &str| -> Result<Vec<f64>> { Ok(store.get(&self.key(part))?.data().to_vec()) };
        Ok(LinearParams {
            weight: store.get(&self.key("weight"))?.clone(),
            mode: self.mode,
            beta: if self.mode == Precision::BinaryFull { Some(col("beta")?) } else { None },
            gamma: if self.mode.is_binary() { Some(col("gamma")?) } else { None },
            bias: if self.bias { Some(col("bias")?) } else { None },
        })
    }
}

/// A linear layer whose tensors are recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub mode: Precision,
    pub weight: Var,
    pub bias: Option<Var>,
    pub beta: Option<Var>,
    pub gamma: Option<Var>,
}

impl BoundLinear {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self.mode {
            Precision::FullPrecision => g.linear(x, self.weight, self.bias),
            Precision::BinaryWeight => {
                if self.bias.is_some() {
                    return Err(Error::param("binary_weight layers take no bias"));
                }
                g.binary_weight(x, self.weight, self.gamma)
            }
            Precision::BinaryFull => {
                let beta = self.beta.ok_or_else(|| Error::param("binary_full layer without beta"))?;
                let gamma = self.gamma.ok_or_else(|| Error::param("binary_full layer without gamma"))?;
                g.binary_full(x, self.weight, beta, gamma, self.bias)
            }
        }
    }

    /// Applies the map to vector channels `q × 3N`. Refuses anything that
    /// would break equivariance: input binarization, shifts and biases.
    pub fn apply_vectors(&self, g: &mut Graph, v: Var) -> Result<Var> {
        ensure_param!(
            self.mode != Precision::BinaryFull,
            "vector maps cannot binarize their inputs"
        );
        ensure_param!(
            self.bias.is_none() && self.beta.is_none(),
            "vector maps cannot carry a bias or shift"
        );
        self.apply(g, v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Scalar,
    Vector,
}

/// Per-channel normalization over scalar rows or vector norms.
#[derive(Clone, Debug, PartialEq)]
pub struct NormSpec {
    pub name: String,
    pub channels: usize,
    pub kind: NormKind,
}

impl NormSpec {
    pub fn scalar(name: impl Into<String>, channels: usize) -> Self {
        NormSpec {
            name: name.into(),
            channels,
            kind: NormKind::Scalar,
        }
    }

    pub fn vector(name: impl Into<String>, channels: usize) -> Self {
        NormSpec {
            name: name.into(),
            channels,
            kind: NormKind::Vector,
        }
    }

    pub fn key(&self, part: &str) -> String {
        format!("{}.{part}", self.name)
    }

    pub fn tensor_names(&self) -> Vec<String> {
        match self.kind {
            NormKind::Scalar => ["gamma", "beta", "running_mean", "running_var"]
                .iter()
                .map(|p| self.key(p))
                .collect(),
            NormKind::Vector => vec![self.key("log_scale"), self.key("running_mean_norm")],
        }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        let c = self.channels;
        match self.kind {
            NormKind::Scalar => {
                store.insert(&self.key("gamma"), Tensor::filled(c, 1, 1.0))?;
                store.insert(&self.key("beta"), Tensor::zeros(c, 1))?;
                store.insert_buffer(&self.key("running_mean"), Tensor::zeros(c, 1))?;
                store.insert_buffer(&self.key("running_var"), Tensor::filled(c, 1, 1.0))?;
            }
            NormKind::Vector => {
                store.insert(&self.key("log_scale"), Tensor::zeros(c, 1))?;
                store.insert_buffer(&self.key("running_mean_norm"), Tensor::filled(c, 1, 1.0))?;
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore, train: bool) -> Result<BoundNorm> {
        let leaf = |g: &mut Graph, part: &str| -> Result<Var> {
            let key = self.key(part);
            Ok(g.param(key.clone(), store.get(&key)?.clone()))
        };
        let buffer = |part: &str| -> Result<Vec<f64>> { Ok(store.get(&self.key(part))?.data().to_vec()) };
        let (a, b, running) = match self.kind {
            NormKind::Scalar => {
                let gamma = leaf(g, "gamma")?;
                let beta = leaf(g, "beta")?;
                let running = if train {
                    None
                } else {
                    Some((buffer("running_mean")?, buffer("running_var")?))
                };
                (gamma, Some(beta), running)
            }
            NormKind::Vector => {
                let log_scale = leaf(g, "log_scale")?;
                let running = if train {
                    None
                } else {
                    Some((buffer("running_mean_norm")?, Vec::new()))
                };
                (log_scale, None, running)
            }
        };
        Ok(BoundNorm {
            spec: self.clone(),
            scale: a,
            shift: b,
            running,
        })
    }
}

/// A training-mode normalization node whose batch statistics still need to
/// be folded into the running buffers.
#[derive(Clone, Debug)]
pub struct NormRecord {
    pub spec: NormSpec,
    pub node: Var,
}

#[derive(Clone, Debug)]
pub struct BoundNorm {
    spec: NormSpec,
    scale: Var,
    shift: Option<Var>,
    running: Option<(Vec<f64>, Vec<f64>)>,
}

impl BoundNorm {
    pub fn apply(&self, g: &mut Graph, x: Var, log: &mut Vec<NormRecord>) -> Result<Var> {
        let y = match self.spec.kind {
            NormKind::Scalar => {
                let stats = match &self.running {
                    Some((m, v)) => NormStats::Running { mean: m, var: v },
                    None => NormStats::Batch,
                };
                g.batch_norm(x, self.scale, self.shift.expect("scalar norm has a shift"), stats)?
            }
            NormKind::Vector => g.vector_norm(x, self.scale, self.running.as_ref().map(|r| r.0.as_slice()))?,
        };
        if self.running.is_none() {
            log.push(NormRecord {
                spec: self.spec.clone(),
                node: y,
            });
        }
        Ok(y)
    }
}

/// Moves running statistics toward the batch statistics recorded in `log`.
pub fn update_running_stats(g: &Graph, log: &[NormRecord], store: &mut ParamStore, momentum: f64) -> Result<()> {
    let blend = |store: &mut ParamStore, key: String, batch: &[f64]| -> Result<()> {
        let old = store.get(&key)?;
        let new = Tensor::from_vec(
            old.rows(),
            1,
            old.data()
                .iter()
                .zip(batch)
                .map(|(o, b)| (1.0 - momentum) * o + momentum * b)
                .collect(),
        )?;
        store.set(&key, new)
    };
    for rec in log {
        match rec.spec.kind {
            NormKind::Scalar => {
                let (m, v) = g
                    .batch_norm_stats(rec.node)
                    .ok_or_else(|| Error::Internal("missing batch-norm statistics".into()))?;
                let (m, v) = (m.to_vec(), v.to_vec());
                blend(store, rec.spec.key("running_mean"), &m)?;
                blend(store, rec.spec.key("running_var"), &v)?;
            }
            NormKind::Vector => {
                let m = g
                    .vector_norm_stats(rec.node)
                    .ok_or_else(|| Error::Internal("missing vector-norm statistics".into()))?
                    .to_vec();
                blend(store, rec.spec.key("running_mean_norm"), &m)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = xavier_uniform(&mut rng, 10, 14);
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(w.max_abs() <= bound);
        assert!(w.max_abs() > 0.8 * bound);
    }

    #[test]
    fn params_round_trip_through_store() {
        let p = LinearParams::full(Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 0.0]]))
            .with_bias(vec![0.1, 0.2])
            .into_binary_full();
        let mut store = ParamStore::new();
        let spec = LinearSpec::from_params("l", &p, &mut store).unwrap();
        assert_eq!(spec.to_params(&store).unwrap(), p);
        assert_eq!(spec.tensor_names().len(), 4);
    }

    #[test]
    fn double_binarization_is_a_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mut spec = LinearSpec::new("l", 3, 2, false);
        spec.init(&mut store, &mut rng).unwrap();
        spec.binarize(Precision::BinaryWeight, &mut store).unwrap();
        assert!(matches!(
            spec.binarize(Precision::BinaryFull, &mut store),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::new();
        let spec = NormSpec::scalar("bn", 1);
        spec.init(&mut store).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[&[1.0, 3.0]]));
        let bound = spec.bind(&mut g, &store, true).unwrap();
        let mut log = Vec::new();
        bound.apply(&mut g, x, &mut log).unwrap();
        update_running_stats(&g, &log, &mut store, NORM_MOMENTUM).unwrap();
        assert!((store.get("bn.running_mean").unwrap()[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((store.get("bn.running_var").unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
    }
}
