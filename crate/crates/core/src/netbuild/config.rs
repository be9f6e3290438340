use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svcore::Toggles;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeScheme {
    None,
    Vanilla,
    TwoStep,
}

/// Network layout. Unset fields take desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `pointnet_like`, `dgcnn_like` or `baseline`.
    pub backbone: String,
    pub k: usize,
    /// Block widths `C_l`; empty selects the backbone's default plan.
    pub channels: Vec<usize>,
    /// Fraction of each width given to scalar channels.
    pub sv_ratio: f64,
    pub scalar_concat: bool,
    pub vector_reweight: bool,
    pub binarize: BinarizeScheme,
    pub keep_first_last_fp: bool,
    pub classes: usize,
    /// Hidden width of the classifier MLP.
    pub global_dim: usize,
    pub norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: "pointnet_like".into(),
            k: 16,
            channels: Vec::new(),
            sv_ratio: 0.5,
            scalar_concat: true,
            vector_reweight: true,
            binarize: BinarizeScheme::None,
            keep_first_last_fp: true,
            classes: 4,
            global_dim: 512,
            norm: true,
        }
    }
}

impl ModelConfig {
    pub fn toggles(&self) -> Toggles {
        Toggles {
            scalar_concat: self.scalar_concat,
            vector_reweight: self.vector_reweight,
        }
    }

    /// Channel plan with backbone defaults filled in.
    pub fn channel_plan(&self) -> Vec<usize> {
        if !self.channels.is_empty() {
            return self.channels.clone();
        }
        match self.backbone.as_str() {
            "dgcnn_like" => vec![64, 64, 128, 256],
            _ => vec![64, 128, 256],
        }
    }
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// `cosine` or `multistep`.
    pub schedule: String,
    pub lr_step: usize,
    pub lr_decay: f64,
    /// Full-precision epochs before switching in two-step training;
    /// unset means half of `epochs`.
    pub fp_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            lr: 0.005,
            schedule: "cosine".into(),
            lr_step: 20,
            lr_decay: 0.7,
            fp_epochs: None,
        }
    }
}

/// Contents of a config file: `[model]` and `[train]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line declaring `key = ...`, if any.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            msg: e.message().to_string(),
        })?;
        cfg.validate().map_err(|(key, msg)| Error::Config {
            line: key_line(text, key),
            msg,
        })?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Checks semantic constraints, naming the offending key.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let m = &self.model;
        if !super::BackboneRegistry::default().names().contains(&m.backbone.as_str()) {
            return Err(("backbone", format!("unknown backbone '{}'", m.backbone)));
        }
        if m.k == 0 {
            return Err(("k", "k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&m.sv_ratio) {
            return Err(("sv_ratio", format!("sv_ratio {} outside [0, 1]", m.sv_ratio)));
        }
        for &c in &m.channel_plan() {
            let (p, q) = split_channels(c, m.sv_ratio);
            if p + q == 0 {
                return Err(("channels", format!("width {c} leaves no channels at sv_ratio {}", m.sv_ratio)));
            }
        }
        if m.classes < 2 {
            return Err(("classes", "need at least 2 classes".into()));
        }
        if m.global_dim == 0 {
            return Err(("global_dim", "global_dim must be positive".into()));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(("batch_size", "batch_size must be positive".into()));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(("lr", "lr must be positive".into()));
        }
        if !["cosine", "multistep"].contains(&t.schedule.as_str()) {
            return Err(("schedule", format!("unknown schedule '{}'", t.schedule)));
        }
        if t.fp_epochs.is_some_and(|e| e > t.epochs) {
            return Err(("fp_epochs", "fp_epochs exceeds epochs".into()));
        }
        Ok(())
    }
}

/// Splits width `c` into `(p, q)`: `q = ⌊(1−r)·c/3⌋` vector channels and
/// `p = c − 3q` scalar channels. A ratio of exactly 0 has no scalar path,
/// so the remainder is dropped instead.
pub fn split_channels(c: usize, ratio: f64) -> (usize, usize) {
    // nudge so that e.g. (1 − 2/3)·9/3 lands on 1, not 0.999…
    let q = (((1.0 - ratio) * c as f64) / 3.0 + 1e-9).floor() as usize;
    if ratio == 0.0 {
        (0, q)
    } else {
        (c - 3 * q, q)
    }
}
