//! AdamW with linear warmup and gradient accumulation.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LR: f64 = 5e-3;
pub const DEFAULT_ACCUMULATION: usize = 64;

/// Linear ramp to `max_lr` over `warmup_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup_steps: usize,
    pub max_lr: f64,
}

impl LrSchedule {
    pub fn new(warmup_steps: usize, max_lr: f64) -> Self {
        Self { warmup_steps, max_lr }
    }

    /// Warmup of one epoch: `ceil(train_size / (micro_batch × accumulation))` steps.
    pub fn one_epoch_warmup(train_size: usize, micro_batch: usize, accumulation: usize, max_lr: f64) -> Self {
        let per_step = (micro_batch * accumulation).max(1);
        Self::new(train_size.div_ceil(per_step), max_lr)
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.max_lr;
        }
        let frac = (step as f64 / self.warmup_steps as f64).min(1.0);
        self.max_lr * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub accumulation: usize,
    pub schedule: LrSchedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            accumulation: DEFAULT_ACCUMULATION,
            schedule: LrSchedule::new(0, DEFAULT_MAX_LR),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
    pub(crate) step: u64,
    pub(crate) pending: Vec<Vec<f64>>,
    pub(crate) pending_count: usize,
}

impl AdamW {
    pub fn new(params: &ParamStore, config: AdamWConfig) -> Result<Self> {
        if config.accumulation == 0 {
            return Err(Error::Config("accumulation count must be at least 1".into()));
        }
        let zeros = || params.iter().map(|p| vec![0.0; p.data.len()]).collect::<Vec<_>>();
        Ok(Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
            pending: zeros(),
            pending_count: 0,
        })
    }

    /// Completed parameter updates.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn pending_micro_batches(&self) -> usize {
        self.pending_count
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.pending.iter_mut().zip(grads.buffers()) {
            p.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        self.pending_count += 1;
    }

    /// Add one micro-batch gradient; update once `accumulation` have been
    /// collected. Returns whether parameters changed.
    pub fn micro_step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<bool> {
        self.accumulate(grads);
        if self.pending_count >= self.config.accumulation {
            self.step(params)?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Apply the mean of the pending micro-batch gradients.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.pending_count == 0 {
            return Err(Error::NothingAccumulated);
        }
        self.step += 1;
        let c = &self.config;
        let lr = c.schedule.lr_at(self.step);
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let inv = 1.0 / self.pending_count as f64;
        for (i, p) in params.iter_mut().enumerate() {
            let decay = if p.decay { c.weight_decay } else { 0.0 };
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &mut self.pending[i]);
            for j in 0..p.data.len() {
                let gj = g[j] * inv;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.data[j] -= lr * (mhat / (vhat.sqrt() + c.eps) + decay * p.data[j]);
                g[j] = 0.0;
            }
        }
        self.pending_count = 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn warmup_schedule() {
        let s = LrSchedule::new(100, DEFAULT_MAX_LR);
        assert_eq!(s.lr_at(100), 5e-3);
        assert!((s.lr_at(50) - 2.5e-3).abs() < 1e-18);
        assert_eq!(s.lr_at(1000), 5e-3);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(LrSchedule::one_epoch_warmup(1000, 1, 64, 5e-3).warmup_steps, 16);
    }

    #[test]
    fn step_before_accumulation_fails() {
        let mut store = ParamStore::new();
        store.add("w", 1, 2, Init::Ones, true, &mut ChaCha8Rng::seed_from_u64(0));
        let mut opt = AdamW::new(&store, AdamWConfig::default()).unwrap();
        assert!(matches!(opt.step(&mut store), Err(Error::NothingAccumulated)));
        let bad = AdamWConfig { accumulation: 0, ..AdamWConfig::default() };
        assert!(AdamW::new(&store, bad).is_err());
    }

    #[test]
    fn updates_only_every_accumulation_count() {
        let mut store = ParamStore::new();
        store.add("w", 1, 2, Init::Ones, true, &mut ChaCha8Rng::seed_from_u64(0));
        let cfg = AdamWConfig { accumulation: 3, ..AdamWConfig::default() };
        let mut opt = AdamW::new(&store, cfg).unwrap();
        let mut g = store.zero_grads();
        g.0[0] = vec![1.0, -1.0];
        let before = store.clone();
        assert!(!opt.micro_step(&mut store, &g).unwrap());
        assert!(!opt.micro_step(&mut store, &g).unwrap());
        assert_eq!(store, before);
        assert!(opt.micro_step(&mut store, &g).unwrap());
        assert_ne!(store, before);
        assert_eq!(opt.steps(), 1);
    }
}
