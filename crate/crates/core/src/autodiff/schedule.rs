use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Learning rate as a function of the epoch index.
pub trait LrSchedule: Send + Sync {
    fn name(&self) -> &'static str;
    fn lr(&self, epoch: usize, total: usize, base_lr: f64) -> f64;
}

/// `base · (1 + cos(π·epoch/total)) / 2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Cosine;

impl LrSchedule for Cosine {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn lr(&self, epoch: usize, total: usize, base_lr: f64) -> f64 {
        if total == 0 {
            return base_lr;
        }
        let t = epoch.min(total) as f64 / total as f64;
        base_lr * (1.0 + (PI * t).cos()) / 2.0
    }
}

/// `base · decay^⌊epoch/step⌋`.
#[derive(Clone, Copy, Debug)]
pub struct MultiStep {
    pub step: usize,
    pub decay: f64,
}

impl Default for MultiStep {
    fn default() -> Self {
        MultiStep { step: 20, decay: 0.7 }
    }
}

impl LrSchedule for MultiStep {
    fn name(&self) -> &'static str {
        "multistep"
    }

    fn lr(&self, epoch: usize, _total: usize, base_lr: f64) -> f64 {
        base_lr * self.decay.powi((epoch / self.step.max(1)) as i32)
    }
}

/// Looks up a schedule by name.
pub fn schedule_by_name(name: &str, step: usize, decay: f64) -> Result<Box<dyn LrSchedule>> {
    match name {
        "cosine" => Ok(Box::new(Cosine)),
        "multistep" => Ok(Box::new(MultiStep { step, decay })),
        other => Err(Error::param(format!(
            "unknown learning-rate schedule '{other}' (expected cosine or multistep)"
        ))),
    }
}

pub fn lr_schedule(kind: &str, epoch: usize, total: usize, base_lr: f64, step: usize, decay: f64) -> Result<f64> {
    Ok(schedule_by_name(kind, step, decay)?.lr(epoch, total, base_lr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(lr_schedule("cosine", 0, 60, 0.001, 20, 0.7).unwrap(), 0.001);
        assert!(lr_schedule("cosine", 60, 60, 0.001, 20, 0.7).unwrap().abs() < 1e-18);
        let mid = lr_schedule("cosine", 30, 60, 0.001, 20, 0.7).unwrap();
        assert!((mid - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn multistep_decay() {
        let lr = lr_schedule("multistep", 40, 200, 0.001, 20, 0.7).unwrap();
        assert!((lr - 0.00049).abs() < 1e-15);
        assert_eq!(lr_schedule("multistep", 19, 200, 0.001, 20, 0.7).unwrap(), 0.001);
        assert!(lr_schedule("step", 0, 1, 0.1, 1, 0.5).is_err());
    }
}
