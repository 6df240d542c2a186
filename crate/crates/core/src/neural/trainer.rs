//! Epoch loop shared by the emotion and generator trainers.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::optim::{AdamW, AdamWConfig, LrSchedule};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub micro_batch: usize,
    pub accumulation: usize,
    pub max_lr: f64,
    pub weight_decay: f64,
    /// Warmup steps; `None` means one epoch.
    pub warmup_steps: Option<usize>,
    /// Stop after this many optimizer updates.
    pub max_updates: Option<u64>,
    /// Dev evaluation interval in updates; `None` evaluates once per epoch.
    pub eval_every: Option<u64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            micro_batch: 16,
            accumulation: 1,
            max_lr: super::optim::DEFAULT_MAX_LR,
            weight_decay: 0.01,
            warmup_steps: None,
            max_updates: None,
            eval_every: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.micro_batch == 0 || self.accumulation == 0 {
            return Err(Error::Config("epochs, micro_batch and accumulation must be ≥ 1".into()));
        }
        if !(self.max_lr > 0.0) {
            return Err(Error::Config("max_lr must be positive".into()));
        }
        Ok(())
    }

    pub fn adamw(&self, train_size: usize) -> AdamWConfig {
        let schedule = match self.warmup_steps {
            Some(w) => LrSchedule::new(w, self.max_lr),
            None => LrSchedule::one_epoch_warmup(train_size, self.micro_batch, self.accumulation, self.max_lr),
        };
        AdamWConfig {
            weight_decay: self.weight_decay,
            accumulation: self.accumulation,
            schedule,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub update: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_dev_score: f64,
    pub best_dev_score: f64,
    pub best_update: u64,
    pub updates: u64,
    pub curve: Vec<CurvePoint>,
    pub seconds: f64,
}

/// Minimise `loss` over `train`, scoring `dev` (lower is better) at each
/// evaluation point. The best-scoring parameters are left in `store`.
pub fn fit<E>(
    store: &mut ParamStore,
    cfg: &FitConfig,
    train: &[E],
    loss: impl Fn(&mut Graph, &E) -> Result<NodeId>,
    mut dev_score: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let start = Instant::now();
    let mut opt = AdamW::new(store, cfg.adamw(train.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let initial = dev_score(store)?;
    log::info!("initial dev score {initial:.4}");
    let mut best = (initial, 0u64, store.clone());
    let mut curve = Vec::new();
    let mut running = (0.0, 0usize);
    let mut last_eval = 0u64;

    'outer: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.micro_batch) {
            let mut grads = store.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let mut g = Graph::with_dropout(store, rng.clone());
                let l = loss(&mut g, &train[i])?;
                running.0 += g.backward_scaled(l, scale, &mut grads)?;
                running.1 += 1;
                rng = g.into_rng().expect("training graph owns an rng");
            }
            if !opt.micro_step(store, &grads)? {
                continue;
            }
            let updates = opt.steps();
            let due = cfg.eval_every.is_some_and(|k| updates % k == 0);
            let capped = cfg.max_updates.is_some_and(|m| updates >= m);
            if due || capped {
                evaluate(store, &mut dev_score, &mut best, &mut curve, &mut running, updates, epoch)?;
                last_eval = updates;
            }
            if capped {
                break 'outer;
            }
        }
        if cfg.eval_every.is_none() && opt.steps() > last_eval {
            evaluate(store, &mut dev_score, &mut best, &mut curve, &mut running, opt.steps(), epoch)?;
            last_eval = opt.steps();
        }
    }
    if opt.steps() > last_eval {
        let epoch = cfg.epochs - 1;
        evaluate(store, &mut dev_score, &mut best, &mut curve, &mut running, opt.steps(), epoch)?;
    }
    let (best_dev_score, best_update, best_params) = best;
    store.copy_from(&best_params)?;
    Ok(FitReport {
        initial_dev_score: initial,
        best_dev_score,
        best_update,
        updates: opt.steps(),
        curve,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn evaluate(
    store: &ParamStore,
    dev_score: &mut impl FnMut(&ParamStore) -> Result<f64>,
    best: &mut (f64, u64, ParamStore),
    curve: &mut Vec<CurvePoint>,
    running: &mut (f64, usize),
    update: u64,
    epoch: usize,
) -> Result<()> {
    let score = dev_score(store)?;
    let train_loss = if running.1 > 0 { running.0 / running.1 as f64 } else { f64::NAN };
    *running = (0.0, 0);
    log::info!("epoch {epoch} update {update}: train loss {train_loss:.4}, dev {score:.4}");
    curve.push(CurvePoint { update, epoch, train_loss, dev_score: score });
    if score < best.0 {
        *best = (score, update, store.clone());
    }
    Ok(())
}
