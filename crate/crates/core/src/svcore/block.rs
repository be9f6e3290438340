use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BoundLinear, BoundNorm, LinearSpec, NormRecord, NormSpec};
use super::linear::LinearParams;
use super::norm::{NormParams, ScalarNorm, VectorNorm};
use super::ops::SvVars;
use crate::autodiff::{Graph, ParamStore, PoolMode, Var};
use crate::error::{ensure_param, Error, Result};
use crate::geometry::SVFeature;
use crate::tensor::Tensor;

/// The two interactions between the scalar and vector paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toggles {
    /// Concatenate the invariant projection of `V` onto the scalar input.
    pub scalar_concat: bool,
    /// Gate vector channels with factors computed from scalars.
    pub vector_reweight: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            scalar_concat: true,
            vector_reweight: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

/// Layer layout of one SVBlock.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub name: String,
    pub p_in: usize,
    pub q_in: usize,
    pub p_out: usize,
    pub q_out: usize,
    pub toggles: Toggles,
    pub frame: Option<LinearSpec>,
    pub scalar_mlp: Vec<(LinearSpec, Activation)>,
    pub scalar_norm: Option<NormSpec>,
    pub vector_map: Option<LinearSpec>,
    pub vector_norm: Option<NormSpec>,
    pub gate_mlp: Vec<(LinearSpec, Activation)>,
}

impl BlockSpec {
    /// Single-layer scalar and gate MLPs with normalization on both paths.
    pub fn standard(
        name: &str,
        (p_in, q_in): (usize, usize),
        (p_out, q_out): (usize, usize),
        toggles: Toggles,
        with_norm: bool,
    ) -> Result<Self> {
        let concat = toggles.scalar_concat && q_in > 0 && p_out > 0;
        let frame = concat.then(|| LinearSpec::new(format!("{name}.frame"), q_in, 3, false));
        let scalar_in = p_in + if concat { 3 * q_in } else { 0 };
        let mut scalar_mlp = Vec::new();
        if p_out > 0 {
            scalar_mlp.push((
                LinearSpec::new(format!("{name}.scalar0"), scalar_in, p_out, true),
                Activation::Relu,
            ));
        }
        let vector_map = (q_out > 0).then(|| LinearSpec::new(format!("{name}.vector"), q_in, q_out, false));
        let mut gate_mlp = Vec::new();
        if toggles.vector_reweight && q_out > 0 && p_in > 0 {
            gate_mlp.push((
                LinearSpec::new(format!("{name}.gate0"), p_in, q_out, true),
                Activation::Sigmoid,
            ));
        }
        let spec = BlockSpec {
            name: name.to_string(),
            p_in,
            q_in,
            p_out,
            q_out,
            toggles,
            frame,
            scalar_mlp,
            scalar_norm: (with_norm && p_out > 0).then(|| NormSpec::scalar(format!("{name}.snorm"), p_out)),
            vector_map,
            vector_norm: (with_norm && q_out > 0).then(|| NormSpec::vector(format!("{name}.vnorm"), q_out)),
            gate_mlp,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("block '{}': {msg}", self.name)));
        if self.p_out + self.q_out == 0 {
            return bad("block produces no channels".into());
        }
        if let Some(f) = &self.frame {
            if (f.in_dim, f.out_dim) != (self.q_in, 3) || self.q_in == 0 {
                return bad(format!("frame must be {}×3", self.q_in));
            }
        }
        let concat_rows = if self.frame.is_some() { 3 * self.q_in } else { 0 };
        if self.p_out > 0 {
            let mut width = self.p_in + concat_rows;
            if width == 0 || self.scalar_mlp.is_empty() {
                return bad("scalar output requested without scalar input".into());
            }
            for (l, _) in &self.scalar_mlp {
                if l.in_dim != width {
                    return bad(format!("scalar layer '{}' expects {} inputs, gets {width}", l.name, l.in_dim));
                }
                width = l.out_dim;
            }
            if width != self.p_out {
                return bad(format!("scalar MLP ends at {width}, expected {}", self.p_out));
            }
        } else if !self.scalar_mlp.is_empty() {
            return bad("scalar MLP present but no scalar output".into());
        }
        match &self.vector_map {
            Some(m) if self.q_in == 0 => return bad(format!("'{}' has no vector input", m.name)),
            Some(m) if (m.in_dim, m.out_dim) != (self.q_in, self.q_out) => {
                return bad(format!("vector map must be {}×{}", self.q_in, self.q_out))
            }
            None if self.q_out > 0 => return bad("vector output requested without a vector map".into()),
            _ => {}
        }
        if !self.gate_mlp.is_empty() {
            let mut width = self.p_in;
            for (l, _) in &self.gate_mlp {
                if l.in_dim != width {
                    return bad(format!("gate layer '{}' expects {} inputs, gets {width}", l.name, l.in_dim));
                }
                width = l.out_dim;
            }
            if width != self.q_out {
                return bad(format!("gate ends at {width}, expected {}", self.q_out));
            }
            if self.gate_mlp.last().map(|g| g.1) != Some(Activation::Sigmoid) {
                return bad("gate must end in a sigmoid".into());
            }
        }
        Ok(())
    }

    pub fn linears(&self) -> Vec<&LinearSpec> {
        let mut out: Vec<&LinearSpec> = self.frame.iter().collect();
        out.extend(self.scalar_mlp.iter().map(|(l, _)| l));
        out.extend(self.vector_map.iter());
        out.extend(self.gate_mlp.iter().map(|(l, _)| l));
        out
    }

    pub fn linears_mut(&mut self) -> Vec<&mut LinearSpec> {
        let mut out: Vec<&mut LinearSpec> = self.frame.iter_mut().collect();
        out.extend(self.scalar_mlp.iter_mut().map(|(l, _)| l));
        out.extend(self.vector_map.iter_mut());
        out.extend(self.gate_mlp.iter_mut().map(|(l, _)| l));
        out
    }

    pub fn norms(&self) -> Vec<&NormSpec> {
        self.scalar_norm.iter().chain(self.vector_norm.iter()).collect()
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for l in self.linears() {
            l.init(store, rng)?;
        }
        for n in self.norms() {
            n.init(store)?;
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore, train: bool) -> Result<BoundBlock> {
        let bind_all = |g: &mut Graph, layers: &[(LinearSpec, Activation)]| -> Result<Vec<(BoundLinear, Activation)>> {
            layers.iter().map(|(l, a)| Ok((l.bind(g, store)?, *a))).collect()
        };
        Ok(BoundBlock {
            frame: self.frame.as_ref().map(|f| f.bind(g, store)).transpose()?,
            scalar_mlp: bind_all(g, &self.scalar_mlp)?,
            scalar_norm: self.scalar_norm.as_ref().map(|n| n.bind(g, store, train)).transpose()?,
            vector_map: self.vector_map.as_ref().map(|m| m.bind(g, store)).transpose()?,
            vector_norm: self.vector_norm.as_ref().map(|n| n.bind(g, store, train)).transpose()?,
            gate_mlp: bind_all(g, &self.gate_mlp)?,
            reweight: self.toggles.vector_reweight,
        })
    }
}

/// A block whose parameters are recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundBlock {
    pub frame: Option<BoundLinear>,
    pub scalar_mlp: Vec<(BoundLinear, Activation)>,
    pub scalar_norm: Option<BoundNorm>,
    pub vector_map: Option<BoundLinear>,
    pub vector_norm: Option<BoundNorm>,
    pub gate_mlp: Vec<(BoundLinear, Activation)>,
    pub reweight: bool,
}

impl BoundBlock {
    /// `v_cᵀ v` with `v_c` from this block's frame, or `None` without a frame.
    pub fn projection(&self, g: &mut Graph, v: Option<Var>) -> Result<Option<Var>> {
        match (self.frame, v) {
            (Some(frame), Some(v)) => {
                let vc = frame.apply_vectors(g, v)?;
                Ok(Some(g.project(vc, v)?))
            }
            (Some(_), None) => Err(Error::param("block frame needs vector input")),
            (None, _) => Ok(None),
        }
    }

    /// Scalar path: concat → MLP, with normalization before the last activation.
    pub fn scalar_update(
        &self,
        g: &mut Graph,
        s: Option<Var>,
        v_in: Option<Var>,
        log: &mut Vec<NormRecord>,
    ) -> Result<Option<Var>> {
        if self.scalar_mlp.is_empty() {
            return Ok(None);
        }
        let parts: Vec<Var> = s.into_iter().chain(v_in).collect();
        let mut h = match parts.len() {
            0 => return Err(Error::param("scalar update has no input")),
            1 => parts[0],
            _ => g.concat_rows(&parts)?,
        };
        let last = self.scalar_mlp.len() - 1;
        for (i, (lin, act)) in self.scalar_mlp.iter().enumerate() {
            h = lin.apply(g, h)?;
            if i == last {
                if let Some(n) = &self.scalar_norm {
                    h = n.apply(g, h, log)?;
                }
            }
            h = act.apply(g, h);
        }
        Ok(Some(h))
    }

    /// Gate values `q_out × samples` from per-sample mean scalars.
    pub fn reweighting_factors(&self, g: &mut Graph, s: Var, sites_per_sample: usize) -> Result<Var> {
        ensure_param!(sites_per_sample > 0, "reweighting needs at least one site");
        ensure_param!(!self.gate_mlp.is_empty(), "block has no gate");
        let mut h = g.pool(s, sites_per_sample, 1, PoolMode::Mean)?;
        for (lin, act) in &self.gate_mlp {
            h = lin.apply(g, h)?;
            h = act.apply(g, h);
        }
        Ok(h)
    }

    /// Vector path: map → norm → optional per-sample channel gating.
    pub fn vector_update(
        &self,
        g: &mut Graph,
        v: Var,
        factors: Option<Var>,
        sites_per_sample: usize,
        log: &mut Vec<NormRecord>,
    ) -> Result<Var> {
        let map = self
            .vector_map
            .ok_or_else(|| Error::param("block has no vector map"))?;
        let mut h = map.apply_vectors(g, v)?;
        if let Some(n) = &self.vector_norm {
            h = n.apply(g, h, log)?;
        }
        if let (true, Some(f)) = (self.reweight, factors) {
            h = g.scale_segments(h, f, 3 * sites_per_sample)?;
        }
        Ok(h)
    }

    /// Full block over a batch of `samples` equally sized samples.
    pub fn forward(&self, g: &mut Graph, x: SvVars, samples: usize, log: &mut Vec<NormRecord>) -> Result<SvVars> {
        ensure_param!(
            samples > 0 && x.sites % samples == 0,
            "{} sites cannot be split into {samples} samples",
            x.sites
        );
        let per = x.sites / samples;
        let v_in = self.projection(g, x.v)?;
        let s = self.scalar_update(g, x.s, v_in, log)?;
        let v = match (self.vector_map, x.v) {
            (Some(_), Some(v)) => {
                let factors = match (self.gate_mlp.is_empty(), x.s) {
                    (false, Some(s)) => Some(self.reweighting_factors(g, s, per)?),
                    _ => None,
                };
                Some(self.vector_update(g, v, factors, per, log)?)
            }
            (Some(_), None) => return Err(Error::param("vector map needs vector input")),
            (None, _) => None,
        };
        Ok(SvVars { s, v, sites: x.sites })
    }
}

/// Explicit parameters of one SVBlock, for use outside a model.
///
/// `frame` is absent when the block does not concatenate projected vectors.
/// Normalization here always runs on stored statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SVBlockParams {
    pub frame: Option<LinearParams>,
    pub scalar_mlp: Vec<(LinearParams, Activation)>,
    pub vector_map: Option<LinearParams>,
    pub gate_mlp: Vec<(LinearParams, Activation)>,
    pub toggles: Toggles,
    pub norm: NormParams,
}

const PREFIX: &str = "block";

impl SVBlockParams {
    /// A randomly initialized standard block.
    pub fn random<R: Rng + ?Sized>(
        input: (usize, usize),
        output: (usize, usize),
        toggles: Toggles,
        with_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = BlockSpec::standard(PREFIX, input, output, toggles, with_norm)?;
        let mut store = ParamStore::new();
        spec.init(&mut store, rng)?;
        let to = |l: &LinearSpec| l.to_params(&store);
        Ok(SVBlockParams {
            frame: spec.frame.as_ref().map(to).transpose()?,
            scalar_mlp: spec
                .scalar_mlp
                .iter()
                .map(|(l, a)| Ok((to(l)?, *a)))
                .collect::<Result<_>>()?,
            vector_map: spec.vector_map.as_ref().map(to).transpose()?,
            gate_mlp: spec
                .gate_mlp
                .iter()
                .map(|(l, a)| Ok((to(l)?, *a)))
                .collect::<Result<_>>()?,
            toggles,
            norm: NormParams {
                scalar: with_norm.then(|| ScalarNorm::new(output.0)).filter(|_| output.0 > 0),
                vector: with_norm.then(|| VectorNorm::new(output.1)).filter(|_| output.1 > 0),
            },
        })
    }

    fn output_dims(&self) -> (usize, usize) {
        (
            self.scalar_mlp.last().map_or(0, |(l, _)| l.out_dim()),
            self.vector_map.as_ref().map_or(0, |m| m.out_dim()),
        )
    }

    /// Spec and parameter store for inputs with `p_in` scalar and `q_in` vector channels.
    pub fn to_store(&self, p_in: usize, q_in: usize) -> Result<(BlockSpec, ParamStore)> {
        let mut store = ParamStore::new();
        let (p_out, q_out) = self.output_dims();
        let layers = |store: &mut ParamStore, kind: &str, list: &[(LinearParams, Activation)]| -> Result<Vec<(LinearSpec, Activation)>> {
            list.iter()
                .enumerate()
                .map(|(i, (p, a))| Ok((LinearSpec::from_params(&format!("{PREFIX}.{kind}{i}"), p, store)?, *a)))
                .collect()
        };
        let frame = self
            .frame
            .as_ref()
            .filter(|_| self.toggles.scalar_concat)
            .map(|f| LinearSpec::from_params(&format!("{PREFIX}.frame"), f, &mut store))
            .transpose()?;
        let scalar_mlp = layers(&mut store, "scalar", &self.scalar_mlp)?;
        let vector_map = self
            .vector_map
            .as_ref()
            .map(|m| LinearSpec::from_params(&format!("{PREFIX}.vector"), m, &mut store))
            .transpose()?;
        let gate_mlp = if self.toggles.vector_reweight {
            layers(&mut store, "gate", &self.gate_mlp)?
        } else {
            Vec::new()
        };
        let (scalar_norm, vector_norm) = self.norm.to_store(PREFIX, &mut store)?;
        let spec = BlockSpec {
            name: PREFIX.to_string(),
            p_in,
            q_in,
            p_out,
            q_out,
            toggles: self.toggles,
            frame,
            scalar_mlp,
            scalar_norm,
            vector_map,
            vector_norm,
            gate_mlp,
        };
        spec.validate()?;
        Ok((spec, store))
    }
}

fn bound(params: &SVBlockParams, p_in: usize, q_in: usize, g: &mut Graph) -> Result<BoundBlock> {
    let (spec, store) = params.to_store(p_in, q_in)?;
    spec.bind(g, &store, false)
}

/// Scalar path on precomputed invariants `v_in` (`3q × N`, ignored when
/// scalar concatenation is off).
pub fn scalar_update(s: &Tensor, v_in: &Tensor, params: &SVBlockParams) -> Result<Tensor> {
    ensure_param!(s.cols() == v_in.cols(), "S and V_in cover different site counts");
    ensure_param!(v_in.rows() % 3 == 0, "V_in must have 3q rows");
    let mut g = Graph::new();
    let blk = bound(params, s.rows(), v_in.rows() / 3, &mut g)?;
    let sv = (s.rows() > 0).then(|| g.input(s.clone()));
    let vv = (blk.frame.is_some() && v_in.rows() > 0).then(|| g.input(v_in.clone()));
    let out = blk
        .scalar_update(&mut g, sv, vv, &mut Vec::new())?
        .ok_or_else(|| Error::param("block has no scalar path"))?;
    Ok(g.value(out).clone())
}

/// Gate factors `sigmoid(gate(mean_N S))`, one per output vector channel.
pub fn reweighting_factors(s: &Tensor, params: &SVBlockParams) -> Result<Vec<f64>> {
    ensure_param!(s.cols() > 0, "reweighting needs at least one site");
    ensure_param!(!params.gate_mlp.is_empty(), "block has no gate");
    let q_in = params.vector_map.as_ref().map_or(0, |m| m.in_dim());
    let mut g = Graph::new();
    let blk = bound(params, s.rows(), q_in, &mut g)?;
    let sv = g.input(s.clone());
    let f = blk.reweighting_factors(&mut g, sv, s.cols())?;
    Ok(g.value(f).data().to_vec())
}

/// Vector path with given factors; factors are skipped when re-weighting is off.
pub fn vector_update(v: &Tensor, params: &SVBlockParams, factors: &[f64]) -> Result<Tensor> {
    let q_out = params.output_dims().1;
    ensure_param!(
        factors.len() == q_out,
        "{} factors for {q_out} vector channels",
        factors.len()
    );
    let mut g = Graph::new();
    let p_in = params.gate_mlp.first().map_or(0, |(l, _)| l.in_dim());
    let blk = bound(params, p_in, v.rows(), &mut g)?;
    let vv = g.input(v.clone());
    let f = g.input(Tensor::column(factors));
    let out = blk.vector_update(&mut g, vv, Some(f), v.cols() / 3, &mut Vec::new())?;
    Ok(g.value(out).clone())
}

/// One SVBlock applied to a single sample.
pub fn svblock_forward(x: &SVFeature, params: &SVBlockParams) -> Result<SVFeature> {
    let mut g = Graph::new();
    let blk = bound(params, x.scalar_channels(), x.vector_channels(), &mut g)?;
    let vars = SvVars::record(&mut g, x);
    blk.forward(&mut g, vars, 1, &mut Vec::new())?.read(&g)
}
