use super::arch::LayerRole;
use super::model::Model;
use crate::error::{Error, Result};
use crate::svcore::Precision;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinarizePlan {
    /// Binary from the first step.
    Vanilla,
    /// Switch an already trained full-precision model and keep training.
    TwoStepPhase2,
}

/// Target precision of a layer, or `None` if it stays full precision.
///
/// Gates always stay full precision; vector-touching maps only binarize
/// weights; scalar layers binarize weights and inputs.
pub fn binary_target(role: LayerRole, keep_first_last_fp: bool) -> Option<Precision> {
    match role {
        LayerRole::Gate => None,
        LayerRole::ExtractFrame | LayerRole::Classifier if keep_first_last_fp => None,
        r if r.acts_on_vectors() => Some(Precision::BinaryWeight),
        _ => Some(Precision::BinaryFull),
    }
}

/// Switches every eligible layer to its binary mode and resets optimizer
/// state. Latent real weights, biases and norms keep their values; new
/// shifts start at 0 and scales at 1.
pub fn binarize_plan(model: &mut Model, plan: BinarizePlan) -> Result<()> {
    if model.is_binarized() {
        return Err(Error::State("model is already binarized".into()));
    }
    let keep = model.model_config().keep_first_last_fp;
    let (layers, store) = model.parts_mut();
    for (role, spec) in layers {
        if let Some(mode) = binary_target(role, keep) {
            spec.binarize(mode, store)?;
        }
    }
    store.reset_optimizer();
    let _ = plan;
    model.set_binarized();
    Ok(())
}
