//! Adam with inverse-square-root warmup and a deterministic training loop.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Example, LossBreakdown, Seq2Seq, TrainingBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            peak_lr: 2e-3,
            warmup_steps: 200,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: Some(1.0),
            seed: 1,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config("peak_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Linear warmup to `peak` over `warmup` steps, then `peak * sqrt(warmup / step)`.
/// `step` counts from 1.
pub fn inverse_sqrt_lr(step: usize, peak: f64, warmup: usize) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup.max(1) as f64;
    peak * (step / warmup).min((warmup / step).sqrt())
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: usize,
}

impl Adam {
    pub fn new(model: &Seq2Seq) -> Self {
        let zeros = |m: &Seq2Seq| m.params().values.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self { m: zeros(model), v: zeros(model), t: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn apply(&mut self, model: &mut Seq2Seq, grads: &[Array2<f64>], config: &TrainConfig) -> f64 {
        self.t += 1;
        let lr = inverse_sqrt_lr(self.t, config.peak_lr, config.warmup_steps);
        let scale = match config.clip_norm {
            Some(c) => {
                let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let params = &mut model.params_mut().values;
        for (i, g) in grads.iter().enumerate() {
            let (m, v, p) = (&mut self.m[i], &mut self.v[i], &mut params[i]);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + config.eps);
            });
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub cross_entropy: f64,
    pub duration: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,cross_entropy,duration,total\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6e},{:.6},{:.6},{:.6}", r.step, r.lr, r.cross_entropy, r.duration, r.total);
        }
        s
    }
}

/// Owns the model during updates.
pub struct Trainer {
    pub model: Seq2Seq,
    adam: Adam,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(model: Seq2Seq, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&model);
        Ok(Self { model, adam, config })
    }

    pub fn step_count(&self) -> usize {
        self.adam.steps_taken()
    }

    /// One forward/backward pass and Adam update.
    pub fn backward_and_step(&mut self, batch: &TrainingBatch) -> Result<(LossBreakdown, f64)> {
        let step = self.adam.steps_taken() as u64 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step);
        let (loss, grads) = self.model.loss_and_grads(batch, Some(&mut rng))?;
        let lr = self.adam.apply(&mut self.model, &grads, &self.config);
        Ok((loss, lr))
    }

    /// Runs `config.steps` updates over seed-shuffled epochs of `examples`.
    pub fn fit(&mut self, examples: &[Example], mut on_log: impl FnMut(&LogRow)) -> Result<TrainingLog> {
        if examples.is_empty() {
            return Err(Error::invalid("no training examples"));
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut cursor = order.len();
        let mut log = TrainingLog::default();
        let bs = self.config.batch_size.min(examples.len());
        let mut acc = (0.0, 0.0, 0.0, 0usize);
        for step in 1..=self.config.steps {
            if cursor + bs > order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            let chunk: Vec<Example> = order[cursor..cursor + bs].iter().map(|&i| examples[i].clone()).collect();
            cursor += bs;
            let batch = TrainingBatch::from_examples(&chunk);
            let (loss, lr) = self.backward_and_step(&batch)?;
            acc = (acc.0 + loss.cross_entropy, acc.1 + loss.duration, acc.2 + loss.total, acc.3 + 1);
            if step % self.config.log_every.max(1) == 0 || step == self.config.steps {
                let n = acc.3 as f64;
                let row = LogRow { step, lr, cross_entropy: acc.0 / n, duration: acc.1 / n, total: acc.2 / n };
                on_log(&row);
                log.rows.push(row);
                acc = (0.0, 0.0, 0.0, 0);
            }
        }
        Ok(log)
    }

    pub fn into_model(self) -> Seq2Seq {
        self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        assert!((inverse_sqrt_lr(1, 1e-3, 100) - 1e-5).abs() < 1e-18);
        assert!((inverse_sqrt_lr(100, 1e-3, 100) - 1e-3).abs() < 1e-18);
        assert!((inverse_sqrt_lr(400, 1e-3, 100) - 5e-4).abs() < 1e-18);
    }
}
