use super::layers::{update_running_stats, NormSpec, NORM_MOMENTUM};
use super::ops::SvVars;
use crate::autodiff::{Graph, ParamStore};
use crate::error::{ensure_param, Result};
use crate::geometry::SVFeature;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsMode {
    Train,
    Eval,
}

/// Affine batch normalization of scalar channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl ScalarNorm {
    pub fn new(channels: usize) -> Self {
        ScalarNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

/// Norm-only rescaling of vector channels by `scale / (mean ‖v‖ + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorNorm {
    /// Strictly positive per-channel scale.
    pub scale: Vec<f64>,
    pub running_mean_norm: Vec<f64>,
}

impl VectorNorm {
    pub fn new(channels: usize) -> Self {
        VectorNorm {
            scale: vec![1.0; channels],
            running_mean_norm: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormParams {
    pub scalar: Option<ScalarNorm>,
    pub vector: Option<VectorNorm>,
}

impl NormParams {
    pub fn new(scalar_channels: usize, vector_channels: usize) -> Self {
        NormParams {
            scalar: (scalar_channels > 0).then(|| ScalarNorm::new(scalar_channels)),
            vector: (vector_channels > 0).then(|| VectorNorm::new(vector_channels)),
        }
    }

    /// Writes the parameters into `store` under `prefix.snorm` / `prefix.vnorm`.
    pub(crate) fn to_store(&self, prefix: &str, store: &mut ParamStore) -> Result<(Option<NormSpec>, Option<NormSpec>)> {
        let s = match &self.scalar {
            Some(n) => {
                let c = n.gamma.len();
                ensure_param!(
                    n.beta.len() == c && n.running_mean.len() == c && n.running_var.len() == c,
                    "scalar norm vectors differ in length"
                );
                let spec = NormSpec::scalar(format!("{prefix}.snorm"), c);
                store.insert(&spec.key("gamma"), Tensor::column(&n.gamma))?;
                store.insert(&spec.key("beta"), Tensor::column(&n.beta))?;
                store.insert_buffer(&spec.key("running_mean"), Tensor::column(&n.running_mean))?;
                store.insert_buffer(&spec.key("running_var"), Tensor::column(&n.running_var))?;
                Some(spec)
            }
            None => None,
        };
        let v = match &self.vector {
            Some(n) => {
                let c = n.scale.len();
                ensure_param!(n.running_mean_norm.len() == c, "vector norm vectors differ in length");
                ensure_param!(
                    n.scale.iter().all(|s| *s > 0.0 && s.is_finite()),
                    "vector norm scales must be positive"
                );
                let spec = NormSpec::vector(format!("{prefix}.vnorm"), c);
                let log: Vec<f64> = n.scale.iter().map(|s| s.ln()).collect();
                store.insert(&spec.key("log_scale"), Tensor::column(&log))?;
                store.insert_buffer(&spec.key("running_mean_norm"), Tensor::column(&n.running_mean_norm))?;
                Some(spec)
            }
            None => None,
        };
        Ok((s, v))
    }

    /// Copies running statistics back from `store`.
    pub(crate) fn read_running(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        if let Some(n) = &mut self.scalar {
            n.running_mean = store.get(&format!("{prefix}.snorm.running_mean"))?.data().to_vec();
            n.running_var = store.get(&format!("{prefix}.snorm.running_var"))?.data().to_vec();
        }
        if let Some(n) = &mut self.vector {
            n.running_mean_norm = store.get(&format!("{prefix}.vnorm.running_mean_norm"))?.data().to_vec();
        }
        Ok(())
    }
}

/// Normalizes scalars per channel and rescales vector norms per channel.
///
/// `Train` uses batch statistics and moves the running statistics toward
/// them; `Eval` uses the running statistics and leaves `norm` untouched.
/// A missing path in `norm` passes that path through unchanged.
pub fn equivariant_norm(x: &SVFeature, mode: StatsMode, norm: &mut NormParams) -> Result<SVFeature> {
    let train = mode == StatsMode::Train;
    let mut store = ParamStore::new();
    let (sspec, vspec) = norm.to_store("norm", &mut store)?;
    let mut g = Graph::new();
    let mut vars = SvVars::record(&mut g, x);
    let mut log = Vec::new();
    if let (Some(spec), Some(s)) = (&sspec, vars.s) {
        vars.s = Some(spec.bind(&mut g, &store, train)?.apply(&mut g, s, &mut log)?);
    }
    if let (Some(spec), Some(v)) = (&vspec, vars.v) {
        vars.v = Some(spec.bind(&mut g, &store, train)?.apply(&mut g, v, &mut log)?);
    }
    let out = vars.read(&g)?;
    if train {
        update_running_stats(&g, &log, &mut store, NORM_MOMENTUM)?;
        norm.read_running("norm", &store)?;
    }
    Ok(out)
}
