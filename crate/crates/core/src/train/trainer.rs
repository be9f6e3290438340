use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::data::{mix, Dataset};
use super::protocol::RotMode;
use crate::autodiff::{adam_step, schedule_by_name, AdamConfig, Graph};
use crate::error::{Error, Result};
use crate::geometry::{apply_rotation, knn_graph, KnnGraph};
use crate::netbuild::{binarize_plan, BinarizePlan, BinarizeScheme, Model, Prepared, TrainConfig};
use crate::svcore::{update_running_stats, NORM_MOMENTUM};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    FullPrecision,
    Binary,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::FullPrecision => "fp",
            Phase::Binary => "binary",
        }
    }
}

/// Metrics of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} phase={} lr={:.6} loss={:.6} acc={:.4}",
            self.epoch,
            self.phase.as_str(),
            self.lr,
            self.loss,
            self.train_acc
        )?;
        if let Some(t) = self.test_acc {
            write!(f, " test_acc={t:.4}")?;
        }
        Ok(())
    }
}

/// What a training run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Model with the highest test accuracy seen in the final phase, if a
    /// test set was given.
    pub best: Option<(Model, f64)>,
    pub log: Vec<EpochLog>,
}

/// Per-cloud neighbor graphs, computed once. Distances are rotation
/// invariant, so the graph of a rotated copy is reused.
struct Cached {
    data: Vec<(usize, crate::geometry::PointCloud, KnnGraph)>,
}

impl Cached {
    fn new(set: &Dataset, k: usize) -> Result<Self> {
        let data = set
            .clouds
            .par_iter()
            .map(|c| {
                let label = c.label.ok_or_else(|| Error::param("training cloud has no label"))?;
                Ok((label, c.clone(), knn_graph(c, k)?))
            })
            .collect::<Result<_>>()?;
        Ok(Cached { data })
    }
}

pub struct TrainOptions<'a> {
    pub train: &'a TrainConfig,
    pub train_rot: RotMode,
    /// Held-out data evaluated after every epoch.
    pub test: Option<(&'a Dataset, RotMode)>,
    pub seed: u64,
}

/// Trains `model` in place following its binarization scheme: `two_step`
/// runs full-precision epochs, binarizes, then finishes in binary mode.
/// `on_epoch` sees every epoch line as it is produced.
pub fn train_model(
    mut model: Model,
    train_set: &Dataset,
    opts: &TrainOptions<'_>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let cfg = opts.train;
    let k = model.model_config().k;
    let classes = model.model_config().classes;
    if let Some(l) = train_set.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::param(format!("label {l} exceeds model classes {classes}")));
    }
    let n0 = train_set.clouds.first().map(|c| c.len()).unwrap_or(0);
    if train_set.clouds.iter().any(|c| c.len() != n0) {
        return Err(Error::param("all training clouds must have the same number of points"));
    }
    let cached = Cached::new(train_set, k)?;
    let test_cached = match opts.test {
        Some((t, rot)) => Some((Cached::new(t, k)?, rot)),
        None => None,
    };
    let phases: Vec<(Phase, usize)> = match model.model_config().binarize {
        BinarizeScheme::TwoStep if !model.is_binarized() => {
            let fp = cfg.fp_epochs.unwrap_or(cfg.epochs / 2);
            vec![(Phase::FullPrecision, fp), (Phase::Binary, cfg.epochs - fp)]
        }
        _ if model.is_binarized() => vec![(Phase::Binary, cfg.epochs)],
        _ => vec![(Phase::FullPrecision, cfg.epochs)],
    };
    let adam = AdamConfig::default();
    let sched = schedule_by_name(&cfg.schedule, cfg.lr_step, cfg.lr_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut log = Vec::new();
    let mut best: Option<(Model, f64)> = None;
    let mut epoch = 0;
    let last_phase = phases.len() - 1;
    for (pi, &(phase, epochs)) in phases.iter().enumerate() {
        if phase == Phase::Binary && !model.is_binarized() {
            binarize_plan(&mut model, BinarizePlan::TwoStepPhase2)?;
        }
        for e in 0..epochs {
            epoch += 1;
            let lr = sched.lr(e, epochs, cfg.lr);
            let mut order: Vec<usize> = (0..cached.data.len()).collect();
            order.shuffle(&mut rng);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<Prepared> = chunk
                    .iter()
                    .map(|&i| {
                        let (_, c, g) = &cached.data[i];
                        let rot = opts.train_rot.sample(&mut rng);
                        Prepared {
                            cloud: apply_rotation(c, &rot),
                            graph: g.clone(),
                        }
                    })
                    .collect();
                let labels: Vec<usize> = chunk.iter().map(|&i| cached.data[i].0).collect();
                let refs: Vec<&Prepared> = batch.iter().collect();
                let mut g = Graph::new();
                let mut norms = Vec::new();
                let logits = model.forward(&mut g, &refs, true, &mut norms)?;
                correct += count_correct(g.value(logits), &labels);
                let loss = g.cross_entropy(logits, &labels)?;
                let lv = g.value(loss)[(0, 0)];
                if !lv.is_finite() {
                    return Err(Error::State(format!("loss diverged at epoch {epoch}")));
                }
                loss_sum += lv * chunk.len() as f64;
                let grads = g.backward(loss)?;
                update_running_stats(&g, &norms, &mut model.store, NORM_MOMENTUM)?;
                adam_step(&mut model.store, grads.params(), lr, &adam)?;
            }
            let n = cached.data.len() as f64;
            let test_acc = match &test_cached {
                Some((t, rot)) => Some(accuracy_cached(&model, t, *rot, mix(opts.seed, epoch as u64))?),
                None => None,
            };
            let line = EpochLog {
                epoch,
                phase,
                lr,
                loss: loss_sum / n,
                train_acc: correct as f64 / n,
                test_acc,
            };
            on_epoch(&line);
            log.push(line);
            if let (Some(acc), true) = (test_acc, pi == last_phase) {
                if best.as_ref().is_none_or(|(_, b)| acc > *b) {
                    best = Some((model.clone(), acc));
                }
            }
        }
    }
    Ok(TrainOutcome { model, best, log })
}

fn argmax_col(t: &Tensor, col: usize) -> usize {
    let mut best = 0;
    for r in 1..t.rows() {
        if t[(r, col)] > t[(best, col)] {
            best = r;
        }
    }
    best
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(b, &l)| argmax_col(logits, b) == l)
        .count()
}

/// Per-cloud logits under `rot`, one rotation per cloud drawn from `seed`.
fn rotated_logits(model: &Model, data: &Cached, rot: RotMode, seed: u64) -> Result<Vec<Tensor>> {
    data.data
        .par_iter()
        .enumerate()
        .map(|(i, (_, c, g))| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64));
            let r = rot.sample(&mut rng);
            let p = Prepared {
                cloud: apply_rotation(c, &r),
                graph: g.clone(),
            };
            model.logits_prepared(&[&p])
        })
        .collect()
}

fn accuracy_cached(model: &Model, data: &Cached, rot: RotMode, seed: u64) -> Result<f64> {
    let logits = rotated_logits(model, data, rot, seed)?;
    let correct = logits
        .iter()
        .zip(&data.data)
        .filter(|(l, (y, _, _))| argmax_col(l, 0) == *y)
        .count();
    Ok(correct as f64 / data.data.len() as f64)
}

/// Results of `K` independently rotated evaluation passes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// `max − min` accuracy across trials.
    pub spread: f64,
    /// Largest per-logit difference between any trial and the first.
    pub logit_spread: f64,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trials={} mean_acc={:.4} spread={:.4} logit_spread={:.3e}",
            self.accuracies.len(),
            self.mean,
            self.spread,
            self.logit_spread
        )
    }
}

/// Evaluates `trials` passes over `data`, each with fresh rotations.
pub fn evaluate(model: &Model, data: &Dataset, rot: RotMode, trials: usize, seed: u64) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::param("need at least one trial"));
    }
    let cached = Cached::new(data, model.model_config().k)?;
    let mut accuracies = Vec::with_capacity(trials);
    let mut first: Option<Vec<Tensor>> = None;
    let mut logit_spread = 0.0f64;
    for t in 0..trials {
        let logits = rotated_logits(model, &cached, rot, mix(seed, t as u64))?;
        let correct = logits
            .iter()
            .zip(&cached.data)
            .filter(|(l, (y, _, _))| argmax_col(l, 0) == *y)
            .count();
        accuracies.push(correct as f64 / cached.data.len() as f64);
        match &first {
            None => first = Some(logits),
            Some(f) => {
                for (a, b) in f.iter().zip(&logits) {
                    logit_spread = logit_spread.max(a.max_abs_diff(b));
                }
            }
        }
    }
    let mean = accuracies.iter().sum::<f64>() / trials as f64;
    let max = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = accuracies.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(EvalReport {
        accuracies,
        mean,
        spread: max - min,
        logit_spread,
    })
}
