//! Joint training of the coarse predictor and the residual denoiser.
//!
//! One step: `x^C = C(y)`, `x_res = x_gt − x^C`, noise `x_res` to a per-sample
//! timestep, predict it back from `(x_t, t, detach(x^C))`, and descend on the
//! frequency-separated objective. The condition channel is detached, so the
//! coarse predictor only receives denoiser gradient through `x_res`.

mod checkpoint;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng as _;

use crate::data::{sample_training_pair, Corpus, ImageBuffer};
use crate::error::{Error, Result};
use crate::freqsep::{total_loss, LossTerms, LossWeights};
pub use crate::model::Prediction;
use crate::model::{ModelBundle, ParamSet};
use crate::numerics::{adam_step, concat_channels, no_grad, sub, OptimizerState, Tensor};
use crate::rng::{normal_vec, seeded, Rng};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub timesteps: usize,
    pub beta0: f32,
    pub beta1: f32,
    pub lr: f32,
    pub batch: usize,
    pub iters: usize,
    pub ema_decay: f32,
    pub crop: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub augment: bool,
    /// Detach `x_res` inside the L_DM target as well (ablation).
    pub detach_target: bool,
    pub prediction: Prediction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            timesteps: 100,
            beta0: 2.0,
            beta1: 0.5,
            lr: 2e-4,
            batch: 8,
            iters: 2000,
            ema_decay: 0.999,
            crop: 32,
            seed: 0,
            eval_every: 50,
            augment: true,
            detach_target: false,
            prediction: Prediction::Residual,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "timesteps",
        "beta0",
        "beta1",
        "lr",
        "batch",
        "iters",
        "ema_decay",
        "crop",
        "seed",
        "eval_every",
        "augment",
        "detach_target",
        "prediction",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = self.timesteps > 0
            && self.beta1 > 0.0
            && self.beta0 >= 0.0
            && self.lr > 0.0
            && self.batch > 0
            && self.crop > 0
            && self.eval_every > 0;
        if !positive {
            return Err(Error::invalid(format!("invalid training config {self:?}")));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::invalid(format!(
                "ema_decay must lie in (0, 1), got {}",
                self.ema_decay
            )));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            beta0: self.beta0,
            beta1: self.beta1,
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("config key `{key}`: cannot parse `{v}`")))
        }
        match key {
            "timesteps" => self.timesteps = num(key, value)?,
            "beta0" => self.beta0 = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "iters" => self.iters = num(key, value)?,
            "ema_decay" => self.ema_decay = num(key, value)?,
            "crop" => self.crop = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "augment" => self.augment = num(key, value)?,
            "detach_target" => self.detach_target = num(key, value)?,
            "prediction" => self.prediction = Prediction::parse(value)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("timesteps", self.timesteps.to_string()),
            ("beta0", self.beta0.to_string()),
            ("beta1", self.beta1.to_string()),
            ("lr", self.lr.to_string()),
            ("batch", self.batch.to_string()),
            ("iters", self.iters.to_string()),
            ("ema_decay", self.ema_decay.to_string()),
            ("crop", self.crop.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("augment", self.augment.to_string()),
            ("detach_target", self.detach_target.to_string()),
            ("prediction", self.prediction.name().to_string()),
        ]
    }
}

/// Per-term loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub pixel: f32,
    pub low: f32,
    pub dm: f32,
    pub high: f32,
    pub total: f32,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "iter,L_pixel,L_low,L_DM,L_high,L_total";

    fn from_terms(t: &LossTerms) -> Self {
        let [pixel, low, dm, high, total] = t.values();
        Self {
            pixel,
            low,
            dm,
            high,
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.pixel, self.low, self.dm, self.high, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn csv_row(&self, iter: u64) -> String {
        format!(
            "{iter},{},{},{},{},{}",
            self.pixel, self.low, self.dm, self.high, self.total
        )
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L_pixel={} L_low={} L_DM={} L_high={} L_total={}",
            self.pixel, self.low, self.dm, self.high, self.total
        )
    }
}

/// Which of the two `x_res` occurrences keep their graph link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualGrad {
    /// `x_res` inside `x_t`.
    pub through_input: bool,
    /// `x_res` as the L_DM / L_high target.
    pub through_target: bool,
}

impl ResidualGrad {
    pub const ATTACHED: Self = Self {
        through_input: true,
        through_target: true,
    };
    pub const SEVERED: Self = Self {
        through_input: false,
        through_target: false,
    };
}

/// One independent `t ~ Uniform{1..=total}` per sample.
pub fn sample_timesteps(rng: &mut Rng, n: usize, total: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=total)).collect()
}

/// Differentiable loss terms for a batch with fixed timesteps and noise.
pub fn compute_losses(
    bundle: &ModelBundle,
    y: &Tensor,
    gt: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    weights: LossWeights,
    residual_grad: ResidualGrad,
    prediction: Prediction,
) -> Result<LossTerms> {
    let x_c = bundle.coarse.forward(&bundle.coarse_params, y, None)?;
    let x_res = sub(gt, &x_c)?;
    let detached_res = x_res.detach();
    let input_res = if residual_grad.through_input { &x_res } else { &detached_res };
    let x_t = bundle.schedule.q_sample_batch(input_res, ts, eps)?;
    let cond = x_c.detach();
    let pred = bundle
        .denoiser
        .forward(&bundle.denoiser_params, &concat_channels(&x_t, &cond)?, Some(ts))?;
    let target = match prediction {
        Prediction::Noise => eps.clone(),
        Prediction::Residual if residual_grad.through_target => x_res.clone(),
        Prediction::Residual => detached_res,
    };
    total_loss(&x_c, gt, &target, &pred, weights)
}

/// `shadow ← decay·shadow + (1 − decay)·live`.
pub fn ema_update(shadow: &ParamSet, live: &ParamSet, decay: f32) {
    let d = decay as f64;
    for (name, s) in shadow {
        let l = live.get(name).expect("shadow and live share names");
        if l.id() == s.id() {
            continue;
        }
        let l = l.data();
        let mut sd = s.data_mut();
        for (sv, lv) in sd.iter_mut().zip(l.iter()) {
            *sv = (d * *sv as f64 + (1.0 - d) * *lv as f64) as f32;
        }
    }
}

/// Model, optimizer and sampling state of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    pub iteration: u64,
    pub rng: Rng,
}

impl Trainer {
    pub fn new(mut bundle: ModelBundle, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        bundle.prediction = config.prediction;
        if bundle.schedule.steps() != config.timesteps {
            return Err(Error::invalid(format!(
                "schedule has {} steps but config asks for {}",
                bundle.schedule.steps(),
                config.timesteps
            )));
        }
        let optimizer = OptimizerState::new(config.lr);
        // stream 1 keeps batch sampling independent of weight init (stream 0)
        let rng = crate::rng::stream(config.seed, 1);
        Ok(Self {
            bundle,
            optimizer,
            config,
            iteration: 0,
            rng,
        })
    }

    /// Fresh toy-scale run for `channels`-channel data.
    pub fn toy(channels: usize, config: TrainConfig) -> Result<Self> {
        let schedule = crate::schedule::NoiseSchedule::linear(config.timesteps, 1e-4, 0.02)?;
        let bundle = ModelBundle::new(
            crate::model::UNetConfig::coarse(channels),
            crate::model::UNetConfig::denoiser(channels),
            schedule,
            &mut seeded(config.seed),
        )?;
        Self::new(bundle, config)
    }

    fn sample_batch(&mut self, corpus: &Corpus) -> Result<(Tensor, Tensor, Vec<usize>, Tensor)> {
        let mut ys = Vec::with_capacity(self.config.batch);
        let mut gts = Vec::with_capacity(self.config.batch);
        for _ in 0..self.config.batch {
            let (y, gt) = sample_training_pair(corpus, &mut self.rng, self.config.crop, self.config.augment)?;
            ys.push(y);
            gts.push(gt);
        }
        let y = ImageBuffer::stack(&ys)?;
        let gt = ImageBuffer::stack(&gts)?;
        let ts = sample_timesteps(&mut self.rng, self.config.batch, self.config.timesteps);
        let eps = Tensor::from_vec(y.shape(), normal_vec(&mut self.rng, y.numel()))?;
        Ok((y, gt, ts, eps))
    }

    /// One optimizer step on explicit inputs.
    pub fn step_on(&mut self, y: &Tensor, gt: &Tensor, ts: &[usize], eps: &Tensor) -> Result<LossReport> {
        let residual_grad = ResidualGrad {
            through_input: true,
            through_target: !self.config.detach_target,
        };
        let terms = compute_losses(
            &self.bundle,
            y,
            gt,
            ts,
            eps,
            self.config.weights(),
            residual_grad,
            self.config.prediction,
        )?;
        let report = LossReport::from_terms(&terms);
        if !report.is_finite() {
            return Err(Error::NonFinite(format!(
                "iteration {}: {report}",
                self.iteration
            )));
        }
        terms.total.backward()?;
        drop(terms);
        adam_step(&self.bundle.named_parameters(), &mut self.optimizer)?;
        ema_update(&self.bundle.ema_coarse, &self.bundle.coarse_params, self.config.ema_decay);
        ema_update(&self.bundle.ema_denoiser, &self.bundle.denoiser_params, self.config.ema_decay);
        self.iteration += 1;
        Ok(report)
    }

    /// Samples a batch from `corpus` and takes one step.
    pub fn train_step(&mut self, corpus: &Corpus) -> Result<LossReport> {
        let (y, gt, ts, eps) = self.sample_batch(corpus)?;
        self.step_on(&y, &gt, &ts, &eps)
    }

    /// Runs until `iteration == until`, calling `log` every `eval_every`
    /// iterations (and on the final one).
    pub fn run(&mut self, corpus: &Corpus, until: u64, mut log: impl FnMut(u64, &LossReport)) -> Result<Vec<LossReport>> {
        let mut history = Vec::new();
        while self.iteration < until {
            let report = self.train_step(corpus)?;
            let it = self.iteration;
            if it % self.config.eval_every as u64 == 0 || it == until {
                log(it, &report);
            }
            history.push(report);
        }
        Ok(history)
    }

    /// Loss terms on a batch without updating anything.
    pub fn evaluate(&self, y: &Tensor, gt: &Tensor, ts: &[usize], eps: &Tensor) -> Result<LossReport> {
        let terms = no_grad(|| {
            compute_losses(
                &self.bundle,
                y,
                gt,
                ts,
                eps,
                self.config.weights(),
                ResidualGrad::ATTACHED,
                self.config.prediction,
            )
        })?;
        Ok(LossReport::from_terms(&terms))
    }

    pub fn metadata(&self) -> BTreeMap<String, String> {
        checkpoint::trainer_metadata(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_one_step() {
        let shadow: ParamSet = [("w".to_string(), Tensor::parameter(&[1], vec![0.0]).unwrap())].into();
        let live: ParamSet = [("w".to_string(), Tensor::parameter(&[1], vec![1.0]).unwrap())].into();
        ema_update(&shadow, &live, 0.999);
        assert!((shadow["w"].item() - 0.001).abs() < 1e-7);
        ema_update(&live, &live, 0.5);
        assert_eq!(live["w"].item(), 1.0);
    }

    #[test]
    fn config_keys_round_trip() {
        let mut cfg = TrainConfig::default();
        let src = TrainConfig {
            seed: 17,
            lr: 1e-3,
            prediction: Prediction::Noise,
            ..TrainConfig::default()
        };
        for (k, v) in src.to_pairs() {
            cfg.set(k, &v).unwrap();
        }
        assert_eq!(cfg.seed, 17);
        assert_eq!(cfg.prediction, Prediction::Noise);
        assert!(cfg.set("betaO", "1").is_err());
        assert_eq!(TrainConfig::KEYS.len(), cfg.to_pairs().len());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = TrainConfig {
            ema_decay: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
