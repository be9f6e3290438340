use super::layers::BoundLinear;
use super::linear::LinearParams;
use super::ops::{bind_params, SvVars};
use crate::autodiff::{Graph, Var};
use crate::error::{ensure_param, Error, Result};
use crate::geometry::SVFeature;
use crate::tensor::Tensor;

/// `concat(S, v_cᵀ v)` on a tape; `frame` must be present iff there are vectors.
pub fn invariant_head_vars(g: &mut Graph, x: SvVars, frame: Option<&BoundLinear>) -> Result<Var> {
    let mut parts: Vec<Var> = x.s.into_iter().collect();
    match (x.v, frame) {
        (Some(v), Some(f)) => {
            let vc = f.apply_vectors(g, v)?;
            parts.push(g.project(vc, v)?);
        }
        (Some(_), None) => return Err(Error::param("invariant head needs a frame for vector input")),
        _ => {}
    }
    match parts.len() {
        0 => Err(Error::param("invariant head has no input")),
        1 => Ok(parts[0]),
        _ => g.concat_rows(&parts),
    }
}

/// Fully invariant `(p + 3q) × N` features.
pub fn invariant_head(x: &SVFeature, frame: &LinearParams) -> Result<Tensor> {
    ensure_param!(
        frame.weight.shape() == (x.vector_channels(), 3),
        "head frame must be {}×3, got {:?}",
        x.vector_channels(),
        frame.weight.shape()
    );
    let mut g = Graph::new();
    let vars = SvVars::record(&mut g, x);
    let f = bind_params(&mut g, "head", frame)?;
    let out = if vars.v.is_some() {
        invariant_head_vars(&mut g, vars, Some(&f))?
    } else {
        invariant_head_vars(&mut g, vars, None)?
    };
    Ok(g.value(out).clone())
}
