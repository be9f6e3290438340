use std::fmt;

use super::arch::Stage;
use super::model::Model;
use crate::autodiff::ParamKind;
use crate::error::{ensure_param, Error, Result};
use crate::svcore::{LinearSpec, NormSpec, Precision};

/// Layer types compared in the feature-updating cost table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table1Mode {
    /// Plain `C1 → C2` linear layer on scalars.
    Vanilla,
    /// Full-precision SVBlock with a half/half split.
    SvFp,
    /// Binarized SVBlock with a half/half split.
    SvBinary,
}

impl Table1Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Table1Mode::Vanilla),
            "sv_fp" => Ok(Table1Mode::SvFp),
            "sv_binary" => Ok(Table1Mode::SvBinary),
            _ => Err(Error::param(format!("unknown cost mode '{s}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Table1Mode::Vanilla => "vanilla",
            Table1Mode::SvFp => "sv_fp",
            Table1Mode::SvBinary => "sv_binary",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerOps {
    pub name: String,
    pub macs: u64,
    pub adds: u64,
    pub bops: u64,
    /// Storage for trainable parameters: 1 bit per binary weight, 32 otherwise.
    pub param_bits: u64,
}

/// Operation tallies with a per-layer breakdown; totals always equal the
/// sum over layers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    layers: Vec<LayerOps>,
    macs: u64,
    adds: u64,
    bops: u64,
    param_bits: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: LayerOps) {
        self.macs += layer.macs;
        self.adds += layer.adds;
        self.bops += layer.bops;
        self.param_bits += layer.param_bits;
        self.layers.push(layer);
    }

    pub fn layers(&self) -> &[LayerOps] {
        &self.layers
    }

    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn adds(&self) -> u64 {
        self.adds
    }

    pub fn bops(&self) -> u64 {
        self.bops
    }

    pub fn param_bits(&self) -> u64 {
        self.param_bits
    }

    pub fn is_zero(&self) -> bool {
        self.macs == 0 && self.adds == 0 && self.bops == 0
    }

    /// Multi-line report: one line per layer, then a total line.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for l in &self.layers {
            s.push_str(&format!(
                "layer={} macs={} adds={} bops={} param_bits={}\n",
                l.name, l.macs, l.adds, l.bops, l.param_bits
            ));
        }
        s.push_str(&format!("{self}\n"));
        s
    }
}

impl fmt::Display for OpCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total macs={} ({:.1}M) adds={} ({:.1}M) bops={} ({:.1}M) param_bits={}",
            self.macs,
            self.macs as f64 / 1e6,
            self.adds,
            self.adds as f64 / 1e6,
            self.bops,
            self.bops as f64 / 1e6,
            self.param_bits
        )
    }
}

/// `num / den` rounded half up.
fn frac(num: u128, den: u128) -> u64 {
    ((num + den / 2) / den) as u64
}

/// Cost of updating `C1` input channels to `C2` output channels over `N`
/// sites for one of the three table layer types.
///
/// The SVBlock terms are: frame `3/2·N·C1`, projection `3/2·N·C1`, scalar
/// update `1/2·N·C1·C2`, gate factors `1/12·C1·C2` and vector update
/// `1/12·N·C1·C2`. Fractional counts are rounded to the nearest integer.
pub fn count_ops(c1: usize, c2: usize, n: usize, mode: Table1Mode) -> OpCounter {
    let (c1, c2, n) = (c1 as u128, c2 as u128, n as u128);
    let mut out = OpCounter::new();
    let layer = |name: &str| LayerOps {
        name: name.into(),
        ..Default::default()
    };
    if mode == Table1Mode::Vanilla {
        out.push(LayerOps {
            macs: (n * c1 * c2) as u64,
            ..layer("linear")
        });
        return out;
    }
    let binary = mode == Table1Mode::SvBinary;
    let frame = frac(3 * n * c1, 2);
    let projection = frac(3 * n * c1, 2);
    let scalar = frac(n * c1 * c2, 2);
    // the gate runs once per sample, so an empty sample has none
    let factors = if n == 0 { 0 } else { frac(c1 * c2, 12) };
    let vector = frac(n * c1 * c2, 12);
    out.push(if binary {
        LayerOps { adds: frame, ..layer("frame") }
    } else {
        LayerOps { macs: frame, ..layer("frame") }
    });
    out.push(LayerOps {
        macs: projection,
        ..layer("projection")
    });
    out.push(if binary {
        LayerOps { bops: scalar, ..layer("scalar_update") }
    } else {
        LayerOps { macs: scalar, ..layer("scalar_update") }
    });
    out.push(LayerOps {
        macs: factors,
        ..layer("factors")
    });
    out.push(if binary {
        LayerOps { adds: vector, ..layer("vector_update") }
    } else {
        LayerOps { macs: vector, ..layer("vector_update") }
    });
    out
}

fn linear_bits(model: &Model, l: &LinearSpec) -> u64 {
    let weight_bits = if l.mode.is_binary() { 1 } else { 32 };
    let mut bits = (l.in_dim * l.out_dim) as u64 * weight_bits;
    for name in l.tensor_names().iter().skip(1) {
        if let Ok(t) = model.store.get(name) {
            bits += 32 * t.len() as u64;
        }
    }
    bits
}

fn norm_bits(model: &Model, n: &NormSpec) -> u64 {
    n.tensor_names()
        .iter()
        .filter(|name| model.store.kind(name) == Some(ParamKind::Trainable))
        .filter_map(|name| model.store.get(name).ok())
        .map(|t| 32 * t.len() as u64)
        .sum()
}

/// Tally for `macs` worth of multiply-accumulates in a layer of `mode`:
/// sign weights turn them into additions, sign inputs and weights into
/// binary operations.
fn by_mode(name: &str, mode: Precision, count: u64, bits: u64) -> LayerOps {
    let mut l = LayerOps {
        name: name.into(),
        param_bits: bits,
        ..Default::default()
    };
    match mode {
        Precision::FullPrecision => l.macs = count,
        Precision::BinaryWeight => l.adds = count,
        Precision::BinaryFull => l.bops = count,
    }
    l
}

/// Per-sample costs of a whole model on clouds of `n_points` points.
///
/// Pooling, normalization and activations are not counted.
pub fn count_model_ops(model: &Model, n_points: usize) -> Result<OpCounter> {
    ensure_param!(n_points > 0, "n_points must be positive");
    let k = model.model_config().k as u64;
    let n = n_points as u64;
    let mut sites = n;
    let mut out = OpCounter::new();
    for st in model.stages() {
        match st {
            Stage::RawPoints => sites = n,
            Stage::Extract { frame } => {
                sites = n * k;
                let q = frame.in_dim as u64;
                out.push(by_mode(&frame.name, frame.mode, 9 * q * sites, linear_bits(model, frame)));
                out.push(LayerOps {
                    name: "extract.projection".into(),
                    macs: 9 * q * sites,
                    ..Default::default()
                });
            }
            Stage::Block(b) => {
                if let Some(f) = &b.frame {
                    out.push(by_mode(&f.name, f.mode, 9 * b.q_in as u64 * sites, linear_bits(model, f)));
                    out.push(LayerOps {
                        name: format!("{}.projection", b.name),
                        macs: 9 * b.q_in as u64 * sites,
                        ..Default::default()
                    });
                }
                for (l, _) in &b.scalar_mlp {
                    let ops = (l.in_dim * l.out_dim) as u64 * sites;
                    out.push(by_mode(&l.name, l.mode, ops, linear_bits(model, l)));
                }
                for (l, _) in &b.gate_mlp {
                    out.push(by_mode(&l.name, l.mode, (l.in_dim * l.out_dim) as u64, linear_bits(model, l)));
                }
                if let Some(l) = &b.vector_map {
                    let ops = 3 * (l.in_dim * l.out_dim) as u64 * sites;
                    out.push(by_mode(&l.name, l.mode, ops, linear_bits(model, l)));
                }
                let nb: u64 = b.norms().iter().map(|nm| norm_bits(model, nm)).sum();
                if nb > 0 {
                    out.push(LayerOps {
                        name: format!("{}.norm", b.name),
                        param_bits: nb,
                        ..Default::default()
                    });
                }
            }
            Stage::Aggregate { k, .. } => sites /= *k as u64,
            Stage::Regroup { k } => sites *= *k as u64,
            Stage::GlobalPool => sites = 1,
            Stage::Head { frame } => {
                if let Some(f) = frame {
                    let q = f.in_dim as u64;
                    out.push(by_mode(&f.name, f.mode, 9 * q * sites, linear_bits(model, f)));
                    out.push(LayerOps {
                        name: "head.projection".into(),
                        macs: 9 * q * sites,
                        ..Default::default()
                    });
                }
            }
            Stage::Dense { linear, norm, .. } => {
                let ops = (linear.in_dim * linear.out_dim) as u64 * sites;
                let bits = linear_bits(model, linear) + norm.as_ref().map_or(0, |nm| norm_bits(model, nm));
                out.push(by_mode(&linear.name, linear.mode, ops, bits));
            }
        }
    }
    Ok(out)
}
