use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{architecture, stage_linears, stage_linears_mut, stage_norms, LayerRole, Stage};
use super::binarize::{binarize_plan, BinarizePlan};
use super::config::{BinarizeScheme, Config, ModelConfig};
use crate::autodiff::{Graph, ParamStore, PoolMode, Var};
use crate::error::{ensure_param, Error, Result};
use crate::geometry::{edge_vectors, knn_graph, KnnGraph, PointCloud};
use crate::svcore::{
    aggregate_vars, batched_edges, invariant_head_vars, LinearSpec, NormRecord, SvVars,
};
use crate::tensor::Tensor;

/// A cloud with its neighbor graph computed once.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub cloud: PointCloud,
    pub graph: KnnGraph,
}

impl Prepared {
    pub fn new(cloud: PointCloud, k: usize) -> Result<Self> {
        let graph = knn_graph(&cloud, k)?;
        Ok(Prepared { cloud, graph })
    }
}

/// A built network: configuration, stage list and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: Config,
    stages: Vec<Stage>,
    pub store: ParamStore,
    binarized: bool,
}

/// Builds a model with fresh weights. A `vanilla` binarization scheme is
/// applied immediately; `two_step` starts in full precision.
pub fn build_model(cfg: &ModelConfig, rng_seed: u64) -> Result<Model> {
    Model::build(
        &Config {
            model: cfg.clone(),
            ..Config::default()
        },
        rng_seed,
    )
}

impl Model {
    pub fn build(config: &Config, rng_seed: u64) -> Result<Model> {
        config
            .validate()
            .map_err(|(key, msg)| Error::config(format!("{key}: {msg}")))?;
        let stages = architecture(&config.model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut store = ParamStore::new();
        for (_, l) in stage_linears(&stages) {
            l.init(&mut store, &mut rng)?;
        }
        for n in stage_norms(&stages) {
            n.init(&mut store)?;
        }
        let mut model = Model {
            config: config.clone(),
            stages,
            store,
            binarized: false,
        };
        if config.model.binarize == BinarizeScheme::Vanilla {
            binarize_plan(&mut model, BinarizePlan::Vanilla)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.config.model
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn is_binarized(&self) -> bool {
        self.binarized
    }

    pub(crate) fn set_binarized(&mut self) {
        self.binarized = true;
    }

    pub fn linears(&self) -> Vec<(LayerRole, &LinearSpec)> {
        stage_linears(&self.stages)
    }

    pub(crate) fn parts_mut(&mut self) -> (Vec<(LayerRole, &mut LinearSpec)>, &mut ParamStore) {
        (stage_linears_mut(&mut self.stages), &mut self.store)
    }

    /// One line per stage: kind, name and shapes.
    pub fn summary(&self) -> Vec<String> {
        let mut out = Vec::new();
        for st in &self.stages {
            out.push(match st {
                Stage::RawPoints => "raw_points s=3".into(),
                Stage::Extract { frame } => format!("extract frame={}x{} s=6 v=2", frame.in_dim, frame.out_dim),
                Stage::Block(b) => format!(
                    "{} in=({},{}) out=({},{}) {}",
                    b.name,
                    b.p_in,
                    b.q_in,
                    b.p_out,
                    b.q_out,
                    b.linears()
                        .iter()
                        .map(|l| format!("{}:{}x{}:{}", l.name, l.in_dim, l.out_dim, l.mode.as_str()))
                        .collect::<Vec<_>>()
                        .join(" ")
                ),
                Stage::Aggregate { k, .. } => format!("aggregate k={k}"),
                Stage::Regroup { k } => format!("regroup k={k}"),
                Stage::GlobalPool => "global_pool".into(),
                Stage::Head { frame } => match frame {
                    Some(f) => format!("head frame={}x3:{}", f.in_dim, f.mode.as_str()),
                    None => "head".into(),
                },
                Stage::Dense { linear, .. } => {
                    format!("{} {}x{}:{}", linear.name, linear.in_dim, linear.out_dim, linear.mode.as_str())
                }
            });
        }
        out
    }

    pub fn prepare(&self, cloud: PointCloud) -> Result<Prepared> {
        Prepared::new(cloud, self.config.model.k)
    }

    /// Records the network on `g` and returns logits `classes × batch`.
    ///
    /// All clouds in `batch` must have the same number of points. In training
    /// mode normalization uses batch statistics and appends to `log`.
    pub fn forward(&self, g: &mut Graph, batch: &[&Prepared], train: bool, log: &mut Vec<NormRecord>) -> Result<Var> {
        ensure_param!(!batch.is_empty(), "empty batch");
        let b = batch.len();
        let n = batch[0].cloud.len();
        ensure_param!(
            batch.iter().all(|p| p.cloud.len() == n),
            "all clouds in a batch must have the same number of points"
        );
        let k = self.config.model.k;
        for p in batch {
            ensure_param!(
                p.graph.k() == k && p.graph.nodes() == n,
                "neighbor graph does not match the cloud or k={k}"
            );
        }
        let store = &self.store;
        let mut x = SvVars {
            s: None,
            v: None,
            sites: 0,
        };
        for st in &self.stages {
            x = match st {
                Stage::RawPoints => {
                    let mut s = Tensor::zeros(3, b * n);
                    for (bi, p) in batch.iter().enumerate() {
                        for (i, pt) in p.cloud.points().iter().enumerate() {
                            for a in 0..3 {
                                s[(a, bi * n + i)] = pt[a];
                            }
                        }
                    }
                    SvVars {
                        s: Some(g.input(s)),
                        v: None,
                        sites: b * n,
                    }
                }
                Stage::Extract { frame } => {
                    let parts: Vec<Tensor> = batch
                        .iter()
                        .map(|p| edge_vectors(&p.cloud, &p.graph))
                        .collect::<Result<_>>()?;
                    let refs: Vec<&Tensor> = parts.iter().collect();
                    let v = g.input(Tensor::hstack(&refs)?);
                    let f = frame.bind(g, store)?;
                    let vc = f.apply_vectors(g, v)?;
                    let s = g.project(vc, v)?;
                    SvVars {
                        s: Some(s),
                        v: Some(v),
                        sites: b * n * k,
                    }
                }
                Stage::Block(spec) => spec.bind(g, store, train)?.forward(g, x, b, log)?,
                Stage::Aggregate { k, scalar_mode } => aggregate_vars(g, x, *k, *scalar_mode)?,
                Stage::Regroup { .. } => {
                    let graphs: Vec<&KnnGraph> = batch.iter().map(|p| &p.graph).collect();
                    let (c, nb) = batched_edges(&graphs);
                    crate::svcore::regroup_vars(g, x, &c, &nb)?
                }
                Stage::GlobalPool => aggregate_vars(g, x, x.sites / b, PoolMode::Max)?,
                Stage::Head { frame } => {
                    let f = frame.as_ref().map(|f| f.bind(g, store)).transpose()?;
                    let h = invariant_head_vars(g, x, f.as_ref())?;
                    SvVars {
                        s: Some(h),
                        v: None,
                        sites: x.sites,
                    }
                }
                Stage::Dense {
                    linear,
                    norm,
                    activation,
                } => {
                    let s = x.s.ok_or_else(|| Error::Internal("dense stage without scalar input".into()))?;
                    let mut h = linear.bind(g, store)?.apply(g, s)?;
                    if let Some(nrm) = norm {
                        h = nrm.bind(g, store, train)?.apply(g, h, log)?;
                    }
                    SvVars {
                        s: Some(activation.apply(g, h)),
                        v: None,
                        sites: x.sites,
                    }
                }
            };
        }
        x.s.ok_or_else(|| Error::Internal("network produced no output".into()))
    }

    /// Evaluation-mode logits for prepared clouds of equal size.
    pub fn logits_prepared(&self, batch: &[&Prepared]) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, batch, false, &mut Vec::new())?;
        Ok(g.value(out).clone())
    }

    /// Evaluation-mode logits `classes × clouds.len()`, one cloud at a time.
    pub fn logits(&self, clouds: &[PointCloud]) -> Result<Tensor> {
        let cols: Vec<Tensor> = clouds
            .iter()
            .map(|c| {
                let p = self.prepare(c.clone())?;
                self.logits_prepared(&[&p])
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = cols.iter().collect();
        Tensor::hstack(&refs)
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.store
            .iter()
            .filter(|(_, _, k)| *k == crate::autodiff::ParamKind::Trainable)
            .map(|(_, t, _)| t.len())
            .sum()
    }
}
