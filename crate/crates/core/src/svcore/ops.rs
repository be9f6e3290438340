use super::layers::LinearSpec;
use super::linear::LinearParams;
use crate::autodiff::{Graph, ParamStore, PoolMode, Var};
use crate::error::{ensure_param, Error, Result};
use crate::geometry::{KnnGraph, SVFeature};
use crate::tensor::Tensor;

/// Scalar and vector channels of a feature recorded on a tape.
///
/// A path with zero channels is `None`; `sites` counts columns of the scalar
/// tensor (a third of the vector columns).
#[derive(Clone, Copy, Debug)]
pub struct SvVars {
    pub s: Option<Var>,
    pub v: Option<Var>,
    pub sites: usize,
}

impl SvVars {
    pub fn record(g: &mut Graph, x: &SVFeature) -> SvVars {
        SvVars {
            s: (x.scalar_channels() > 0).then(|| g.input(x.scalars.clone())),
            v: (x.vector_channels() > 0).then(|| g.input(x.vectors.clone())),
            sites: x.sites(),
        }
    }

    pub fn scalar_channels(&self, g: &Graph) -> usize {
        self.s.map_or(0, |s| g.value(s).rows())
    }

    pub fn vector_channels(&self, g: &Graph) -> usize {
        self.v.map_or(0, |v| g.value(v).rows())
    }

    pub fn read(&self, g: &Graph) -> Result<SVFeature> {
        let s = self
            .s
            .map_or_else(|| Tensor::zeros(0, self.sites), |s| g.value(s).clone());
        let v = self
            .v
            .map_or_else(|| Tensor::zeros(0, 3 * self.sites), |v| g.value(v).clone());
        SVFeature::new(s, v)
    }
}

/// Pools groups of `k` consecutive sites: scalars with `scalar_mode`,
/// vectors always with the mean.
pub fn aggregate_vars(g: &mut Graph, x: SvVars, k: usize, scalar_mode: PoolMode) -> Result<SvVars> {
    ensure_param!(k >= 1, "aggregate: k must be ≥ 1");
    ensure_param!(
        x.sites % k == 0,
        "aggregate: {} sites not divisible by k={k}",
        x.sites
    );
    let s = x.s.map(|s| g.pool(s, k, 1, scalar_mode)).transpose()?;
    let v = x.v.map(|v| g.pool(v, k, 3, PoolMode::Mean)).transpose()?;
    Ok(SvVars {
        s,
        v,
        sites: x.sites / k,
    })
}

/// Per-edge `[x_i ; x_j − x_i]` from per-node features, given edge
/// endpoints as site indices.
pub fn regroup_vars(g: &mut Graph, x: SvVars, centers: &[usize], neighbors: &[usize]) -> Result<SvVars> {
    ensure_param!(centers.len() == neighbors.len(), "regroup: endpoint lists differ in length");
    let mut pair = |var: Var, interleave: usize| -> Result<Var> {
        let c = g.gather(var, centers.to_vec(), interleave)?;
        let n = g.gather(var, neighbors.to_vec(), interleave)?;
        let d = g.sub(n, c)?;
        g.concat_rows(&[c, d])
    };
    let s = x.s.map(|s| pair(s, 1)).transpose()?;
    let v = x.v.map(|v| pair(v, 3)).transpose()?;
    Ok(SvVars {
        s,
        v,
        sites: centers.len(),
    })
}

/// Edge endpoints of several graphs laid side by side, each offset by the
/// node counts before it.
pub fn batched_edges(graphs: &[&KnnGraph]) -> (Vec<usize>, Vec<usize>) {
    let mut centers = Vec::new();
    let mut neighbors = Vec::new();
    let mut offset = 0;
    for g in graphs {
        for (e, &j) in g.flat().iter().enumerate() {
            centers.push(offset + e / g.k());
            neighbors.push(offset + j);
        }
        offset += g.nodes();
    }
    (centers, neighbors)
}

pub(crate) fn bind_params(
    g: &mut Graph,
    name: &str,
    params: &LinearParams,
) -> Result<super::layers::BoundLinear> {
    let mut store = ParamStore::new();
    let spec = LinearSpec::from_params(name, params, &mut store)?;
    spec.bind(g, &store)
}

/// Channel mixing `W` applied to every coordinate of every site.
pub fn vector_mapping(v: &Tensor, params: &LinearParams) -> Result<Tensor> {
    ensure_param!(v.cols() % 3 == 0, "vector tensor columns must be coordinate triples");
    ensure_param!(
        params.in_dim() == v.rows(),
        "vector map expects {} channels, input has {}",
        params.in_dim(),
        v.rows()
    );
    let mut g = Graph::new();
    let x = g.input(v.clone());
    let y = bind_params(&mut g, "map", params)?.apply_vectors(&mut g, x)?;
    Ok(g.value(y).clone())
}

/// Equivariant frame `v·W_c`, a `3 × 3N` vector tensor.
pub fn coordinate_frame(v: &Tensor, frame: &LinearParams) -> Result<Tensor> {
    ensure_param!(
        frame.out_dim() == 3,
        "frame weight must have 3 columns, has {}",
        frame.out_dim()
    );
    vector_mapping(v, frame)
}

/// `v_cᵀ v` per site, `3q × N`, frame-axis major.
pub fn invariant_projection(frame: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let f = g.input(frame.clone());
    let x = g.input(v.clone());
    let y = g.project(f, x)?;
    Ok(g.value(y).clone())
}

/// Pools the `k` edges of each node into the node.
pub fn aggregate(x: &SVFeature, k: usize, scalar_mode: PoolMode) -> Result<SVFeature> {
    let mut g = Graph::new();
    let vars = SvVars::record(&mut g, x);
    aggregate_vars(&mut g, vars, k, scalar_mode)?.read(&g)
}

/// Per-edge features `[s_i ; s_j − s_i]` and `[v_i ; v_j − v_i]`.
pub fn regroup_edges(x: &SVFeature, graph: &KnnGraph) -> Result<SVFeature> {
    if graph.nodes() != x.sites() {
        return Err(Error::Internal(format!(
            "graph indexes {} nodes but the feature has {} sites",
            graph.nodes(),
            x.sites()
        )));
    }
    let mut g = Graph::new();
    let vars = SvVars::record(&mut g, x);
    let (c, n) = batched_edges(&[graph]);
    regroup_vars(&mut g, vars, &c, &n)?.read(&g)
}
