use super::config::{split_channels, ModelConfig};
use crate::autodiff::PoolMode;
use crate::error::{Error, Result};
use crate::svcore::{Activation, BlockSpec, LinearSpec, NormSpec};

/// One step of a network, interpreted by [`super::Model::forward`].
#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    /// Scalars are the raw coordinates of each point; no vectors.
    RawPoints,
    /// Per-edge vectors `[o_i ; o_ij − o_i]` plus their projection on a learned frame.
    Extract { frame: LinearSpec },
    Block(BlockSpec),
    /// Pools the `k` edges of every node.
    Aggregate { k: usize, scalar_mode: PoolMode },
    /// Per-node features back to per-edge `[x_i ; x_j − x_i]`.
    Regroup { k: usize },
    /// Pools all sites of each sample: scalars by max, vectors by mean.
    GlobalPool,
    /// Invariant features `concat(S, v_cᵀ v)`.
    Head { frame: Option<LinearSpec> },
    Dense {
        linear: LinearSpec,
        norm: Option<NormSpec>,
        activation: Activation,
    },
}

/// What a linear layer does, which decides how it may be binarized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRole {
    ExtractFrame,
    BlockFrame,
    Scalar,
    Vector,
    Gate,
    HeadFrame,
    Hidden,
    Classifier,
}

impl LayerRole {
    pub fn acts_on_vectors(self) -> bool {
        matches!(
            self,
            LayerRole::ExtractFrame | LayerRole::BlockFrame | LayerRole::Vector | LayerRole::HeadFrame
        )
    }
}

pub fn stage_linears(stages: &[Stage]) -> Vec<(LayerRole, &LinearSpec)> {
    let mut out = Vec::new();
    let last_dense = stages.iter().rposition(|s| matches!(s, Stage::Dense { .. }));
    for (i, st) in stages.iter().enumerate() {
        match st {
            Stage::Extract { frame } => out.push((LayerRole::ExtractFrame, frame)),
            Stage::Block(b) => {
                out.extend(b.frame.iter().map(|l| (LayerRole::BlockFrame, l)));
                out.extend(b.scalar_mlp.iter().map(|(l, _)| (LayerRole::Scalar, l)));
                out.extend(b.vector_map.iter().map(|l| (LayerRole::Vector, l)));
                out.extend(b.gate_mlp.iter().map(|(l, _)| (LayerRole::Gate, l)));
            }
            Stage::Head { frame } => out.extend(frame.iter().map(|l| (LayerRole::HeadFrame, l))),
            Stage::Dense { linear, .. } => {
                let role = if Some(i) == last_dense {
                    LayerRole::Classifier
                } else {
                    LayerRole::Hidden
                };
                out.push((role, linear));
            }
            _ => {}
        }
    }
    out
}

pub fn stage_linears_mut(stages: &mut [Stage]) -> Vec<(LayerRole, &mut LinearSpec)> {
    let mut out = Vec::new();
    let last_dense = stages.iter().rposition(|s| matches!(s, Stage::Dense { .. }));
    for (i, st) in stages.iter_mut().enumerate() {
        match st {
            Stage::Extract { frame } => out.push((LayerRole::ExtractFrame, frame)),
            Stage::Block(b) => {
                out.extend(b.frame.iter_mut().map(|l| (LayerRole::BlockFrame, l)));
                out.extend(b.scalar_mlp.iter_mut().map(|(l, _)| (LayerRole::Scalar, l)));
                out.extend(b.vector_map.iter_mut().map(|l| (LayerRole::Vector, l)));
                out.extend(b.gate_mlp.iter_mut().map(|(l, _)| (LayerRole::Gate, l)));
            }
            Stage::Head { frame } => out.extend(frame.iter_mut().map(|l| (LayerRole::HeadFrame, l))),
            Stage::Dense { linear, .. } => {
                let role = if Some(i) == last_dense {
                    LayerRole::Classifier
                } else {
                    LayerRole::Hidden
                };
                out.push((role, linear));
            }
            _ => {}
        }
    }
    out
}

pub fn stage_norms(stages: &[Stage]) -> Vec<&NormSpec> {
    let mut out = Vec::new();
    for st in stages {
        match st {
            Stage::Block(b) => out.extend(b.norms()),
            Stage::Dense { norm: Some(n), .. } => out.push(n),
            _ => {}
        }
    }
    out
}

/// A network family assembled from stages.
pub trait Backbone: Send + Sync {
    fn name(&self) -> &'static str;
    fn stages(&self, cfg: &ModelConfig) -> Result<Vec<Stage>>;
}

/// Channel counts flowing between stages while a plan is assembled.
struct Plan {
    stages: Vec<Stage>,
    dims: (usize, usize),
}

impl Plan {
    fn extract() -> Self {
        Plan {
            stages: vec![Stage::Extract {
                frame: LinearSpec::new("extract.frame", 2, 3, false),
            }],
            dims: (6, 2),
        }
    }

    fn block(&mut self, name: &str, out: (usize, usize), cfg: &ModelConfig) -> Result<()> {
        let spec = BlockSpec::standard(name, self.dims, out, cfg.toggles(), cfg.norm)?;
        self.stages.push(Stage::Block(spec));
        self.dims = out;
        Ok(())
    }

    fn finish(mut self, cfg: &ModelConfig) -> Vec<Stage> {
        let (p, q) = self.dims;
        self.stages.push(Stage::GlobalPool);
        self.stages.push(Stage::Head {
            frame: (q > 0).then(|| LinearSpec::new("head.frame", q, 3, false)),
        });
        let width = p + 3 * q;
        self.stages.push(Stage::Dense {
            linear: LinearSpec::new("mlp0", width, cfg.global_dim, true),
            norm: cfg.norm.then(|| NormSpec::scalar("mlp0.norm", cfg.global_dim)),
            activation: Activation::Relu,
        });
        self.stages.push(Stage::Dense {
            linear: LinearSpec::new("mlp1", cfg.global_dim, cfg.classes, true),
            norm: None,
            activation: Activation::Identity,
        });
        self.stages
    }
}

/// Edge features → first block on edges → pool over `k` → blocks on nodes.
pub struct PointNetLike;

impl Backbone for PointNetLike {
    fn name(&self) -> &'static str {
        "pointnet_like"
    }

    fn stages(&self, cfg: &ModelConfig) -> Result<Vec<Stage>> {
        let mut plan = Plan::extract();
        for (i, &c) in cfg.channel_plan().iter().enumerate() {
            plan.block(&format!("block{i}"), split_channels(c, cfg.sv_ratio), cfg)?;
            if i == 0 {
                plan.stages.push(Stage::Aggregate {
                    k: cfg.k,
                    scalar_mode: PoolMode::Max,
                });
            }
        }
        Ok(plan.finish(cfg))
    }
}

/// Edge features, then `[block → pool over k → regroup]` per width.
pub struct DgcnnLike;

impl Backbone for DgcnnLike {
    fn name(&self) -> &'static str {
        "dgcnn_like"
    }

    fn stages(&self, cfg: &ModelConfig) -> Result<Vec<Stage>> {
        let mut plan = Plan::extract();
        for (i, &c) in cfg.channel_plan().iter().enumerate() {
            plan.block(&format!("block{i}"), split_channels(c, cfg.sv_ratio), cfg)?;
            plan.stages.push(Stage::Aggregate {
                k: cfg.k,
                scalar_mode: PoolMode::Max,
            });
            plan.stages.push(Stage::Regroup { k: cfg.k });
            plan.dims = (2 * plan.dims.0, 2 * plan.dims.1);
        }
        Ok(plan.finish(cfg))
    }
}

/// Rotation-sensitive reference: a shared point MLP on raw coordinates.
pub struct Baseline;

impl Backbone for Baseline {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn stages(&self, cfg: &ModelConfig) -> Result<Vec<Stage>> {
        let mut plan = Plan {
            stages: vec![Stage::RawPoints],
            dims: (3, 0),
        };
        for (i, &c) in cfg.channel_plan().iter().enumerate() {
            plan.block(&format!("block{i}"), (c, 0), cfg)?;
        }
        Ok(plan.finish(cfg))
    }
}

pub struct BackboneRegistry {
    entries: Vec<Box<dyn Backbone>>,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        let mut r = BackboneRegistry { entries: Vec::new() };
        r.register(Box::new(PointNetLike));
        r.register(Box::new(DgcnnLike));
        r.register(Box::new(Baseline));
        r
    }
}

impl BackboneRegistry {
    pub fn register(&mut self, b: Box<dyn Backbone>) {
        self.entries.retain(|e| e.name() != b.name());
        self.entries.push(b);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Backbone> {
        self.entries
            .iter()
            .find(|b| b.name() == name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::config(format!("unknown backbone '{name}'")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|b| b.name()).collect()
    }
}

/// Stage list for `cfg` (full precision; binarization is applied separately).
pub fn architecture(cfg: &ModelConfig) -> Result<Vec<Stage>> {
    BackboneRegistry::default().get(&cfg.backbone)?.stages(cfg)
}
