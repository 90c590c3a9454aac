//! Adam with linear warmup and cosine decay.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::encoding::EncodedExample;
use crate::error::{ConfigError, Error, Result};
use crate::rng::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            peak_lr: 3e-3,
            warmup_steps: 20,
            total_steps: 500,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    /// Full-scale settings: peak rate 5e-5 after 30k warmup steps, batches
    /// of 256. The total step count is unknown; 300k is a placeholder.
    pub fn full_scale() -> Self {
        Self {
            peak_lr: 5e-5,
            warmup_steps: 30_000,
            total_steps: 300_000,
            batch_size: 256,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.total_steps == 0 || self.batch_size == 0 {
            return Err(ConfigError::new("training: total_steps and batch_size must be positive"));
        }
        if self.warmup_steps > self.total_steps {
            return Err(ConfigError::new("training: warmup_steps exceeds total_steps"));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(ConfigError::new("training: peak_lr must be positive"));
        }
        Ok(())
    }
}

/// Learning rate at `step`: `peak * step / warmup` up to the end of the
/// warmup, then a half cosine that reaches 0 at `total_steps`. Training
/// applies steps `1..=total_steps`.
pub fn lr_at(s: &TrainSchedule, step: usize) -> f64 {
    if step <= s.warmup_steps {
        if s.warmup_steps == 0 {
            return s.peak_lr;
        }
        return s.peak_lr * step as f64 / s.warmup_steps as f64;
    }
    if step >= s.total_steps {
        return 0.0;
    }
    let span = (s.total_steps - s.warmup_steps).max(1) as f64;
    let progress = (step - s.warmup_steps) as f64 / span;
    s.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss: f64,
    pub trace: Vec<TraceEntry>,
}

/// Where training stopped when it diverged.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainFailure {
    pub step: usize,
    pub message: String,
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        Error::model(format!("training diverged at step {}: {}", f.step, f.message))
    }
}

struct Batcher<'a> {
    data: &'a [EncodedExample],
    order: Vec<usize>,
    at: usize,
    epoch: u64,
    seed: u64,
}

impl<'a> Batcher<'a> {
    fn new(data: &'a [EncodedExample], seed: u64) -> Self {
        let mut b = Self {
            data,
            order: (0..data.len()).collect(),
            at: 0,
            epoch: 0,
            seed,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut derive_rng(self.seed, "shuffle", self.epoch));
        self.at = 0;
    }

    fn next(&mut self, size: usize) -> Vec<EncodedExample> {
        let size = size.min(self.data.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.at == self.order.len() {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.data[self.order[self.at]].clone());
            self.at += 1;
        }
        out
    }
}

/// Runs `schedule.total_steps` Adam updates on `data`. `on_step` sees every
/// trace entry as it is produced.
pub fn train(
    params: &mut ModelParams,
    data: &[EncodedExample],
    schedule: &TrainSchedule,
    adam: &AdamConfig,
    mut on_step: impl FnMut(&TraceEntry),
) -> Result<TrainReport> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let n = params.num_params();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut batches = Batcher::new(data, schedule.seed);
    let mut trace = Vec::with_capacity(schedule.total_steps);
    let mut final_loss = f64::NAN;

    for step in 1..=schedule.total_steps {
        let batch = batches.next(schedule.batch_size);
        let (loss, mut grad) = params.backward(&batch).map_err(|e| TrainFailure {
            step,
            message: e.to_string(),
        })?;
        if !loss.is_finite() {
            return Err(TrainFailure {
                step,
                message: format!("loss is {loss}"),
            }
            .into());
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if let Some(clip) = adam.clip_norm {
            if norm > clip {
                let s = clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        let lr = lr_at(schedule, step);
        let t = step as i32;
        let c1 = 1.0 - adam.beta1.powi(t);
        let c2 = 1.0 - adam.beta2.powi(t);
        for (i, w) in params.values_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g;
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g * g;
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + adam.eps);
            *w -= lr * (update + adam.weight_decay * *w);
        }
        let entry = TraceEntry {
            step,
            loss,
            lr,
            grad_norm: norm,
        };
        on_step(&entry);
        trace.push(entry);
        final_loss = loss;
    }
    Ok(TrainReport {
        steps: schedule.total_steps,
        final_loss,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_endpoints() {
        let s = TrainSchedule {
            peak_lr: 1.0,
            warmup_steps: 10,
            total_steps: 110,
            ..Default::default()
        };
        assert_eq!(lr_at(&s, 0), 0.0);
        assert!((lr_at(&s, 1) - 0.1).abs() < 1e-12);
        assert_eq!(lr_at(&s, 10), 1.0);
        assert!((lr_at(&s, 60) - 0.5).abs() < 1e-12);
        assert!(lr_at(&s, 110).abs() < 1e-12);
        for step in 10..110 {
            assert!(lr_at(&s, step + 1) <= lr_at(&s, step));
        }
    }

    #[test]
    fn full_scale_schedule_values() {
        let p = TrainSchedule::full_scale();
        assert_eq!((p.peak_lr, p.warmup_steps, p.batch_size), (5e-5, 30_000, 256));
        assert!(p.validate().is_ok());
    }

    #[test]
    fn schedule_validation() {
        let bad = TrainSchedule {
            warmup_steps: 10,
            total_steps: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
