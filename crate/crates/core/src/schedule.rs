//! Noise schedule and the closed-form diffusion algebra: forward noising,
//! the deterministic reverse step and K-step sampling plans.

use crate::error::{Error, Result};
use crate::numerics::{add, scale, scale_per_sample, Tensor};

/// Per-step `α_t` and cumulative `ᾱ_t`, stored in f64.
///
/// Index 0 of both vectors is the virtual step `t = 0` with `α_0 = ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// β linearly spaced from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "schedule needs 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut beta = vec![0.0];
        for t in 1..=steps {
            let frac = if steps == 1 {
                0.0
            } else {
                (t - 1) as f64 / (steps - 1) as f64
            };
            beta.push(beta_start + (beta_end - beta_start) * frac);
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        let mut acc = 1.0f64;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self {
            steps,
            beta_start,
            beta_end,
            beta,
            alpha,
            alpha_bar,
        })
    }

    /// The default schedule: T = 100, β from 1e-4 to 0.02.
    pub fn default_linear() -> Self {
        Self::linear(100, 1e-4, 0.02).expect("default schedule parameters are valid")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The `(beta_start, beta_end)` the schedule was built from.
    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check_t(&self, t: usize, allow_zero: bool) -> Result<()> {
        let lo = usize::from(!allow_zero);
        if t < lo || t > self.steps {
            return Err(Error::invalid(format!(
                "timestep {t} outside {lo}..={}",
                self.steps
            )));
        }
        Ok(())
    }

    /// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
    pub fn q_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        self.check_t(t, false)?;
        let ab = self.alpha_bar[t];
        add(&scale(x0, ab.sqrt() as f32), &scale(eps, (1.0 - ab).sqrt() as f32))
    }

    /// Forward noising with one timestep per sample along the leading axis.
    pub fn q_sample_batch(&self, x0: &Tensor, ts: &[usize], eps: &Tensor) -> Result<Tensor> {
        for &t in ts {
            self.check_t(t, false)?;
        }
        let signal: Vec<f32> = ts.iter().map(|&t| self.alpha_bar[t].sqrt() as f32).collect();
        let noise: Vec<f32> = ts
            .iter()
            .map(|&t| (1.0 - self.alpha_bar[t]).sqrt() as f32)
            .collect();
        add(&scale_per_sample(x0, &signal)?, &scale_per_sample(eps, &noise)?)
    }

    /// Noise implied by `x_t` under the prediction `x0_hat`.
    pub fn predicted_noise(&self, x_t: &[f32], x0_hat: &[f32], t: usize) -> Vec<f32> {
        let ab = self.alpha_bar[t];
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        x_t.iter()
            .zip(x0_hat)
            .map(|(&x, &x0)| ((x as f64 - s * x0 as f64) / n) as f32)
            .collect()
    }

    /// Deterministic (zero posterior variance) transition `t_from → t_to`.
    ///
    /// Recovers `ε̂ = (x_t − √ᾱ_from·x̂0)/√(1−ᾱ_from)` and re-noises `x̂0` to
    /// level `t_to`. With `t_to = 0` the result is `x̂0` itself.
    pub fn reverse_step(&self, x_t: &[f32], x0_hat: &[f32], t_from: usize, t_to: usize) -> Result<Vec<f32>> {
        self.check_t(t_from, false)?;
        self.check_t(t_to, true)?;
        if t_from <= t_to {
            return Err(Error::invalid(format!(
                "reverse step must go backwards in time, got {t_from} -> {t_to}"
            )));
        }
        if x_t.len() != x0_hat.len() {
            return Err(Error::ShapeMismatch {
                op: "reverse_step",
                left: vec![x_t.len()],
                right: vec![x0_hat.len()],
            });
        }
        if t_to == 0 {
            return Ok(x0_hat.to_vec());
        }
        let ab_from = self.alpha_bar[t_from];
        let ab_to = self.alpha_bar[t_to];
        let (sf, nf) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
        let (st, nt) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
        Ok(x_t
            .iter()
            .zip(x0_hat)
            .map(|(&x, &x0)| {
                let x0 = x0 as f64;
                let eps = (x as f64 - sf * x0) / nf;
                (st * x0 + nt * eps) as f32
            })
            .collect())
    }

    /// Tensor form of [`Self::reverse_step`]; the result carries no graph.
    pub fn reverse_step_tensor(&self, x_t: &Tensor, x0_hat: &Tensor, t_from: usize, t_to: usize) -> Result<Tensor> {
        if x_t.shape() != x0_hat.shape() {
            return Err(Error::ShapeMismatch {
                op: "reverse_step",
                left: x_t.shape().to_vec(),
                right: x0_hat.shape().to_vec(),
            });
        }
        let out = self.reverse_step(&x_t.data(), &x0_hat.data(), t_from, t_to)?;
        Tensor::from_vec(x_t.shape(), out)
    }

    /// Stochastic DDPM-posterior variant, kept only for ablations.
    pub fn reverse_step_stochastic(
        &self,
        x_t: &[f32],
        x0_hat: &[f32],
        t: usize,
        noise: &[f32],
    ) -> Result<Vec<f32>> {
        self.check_t(t, false)?;
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let a = self.alpha[t];
        let beta = 1.0 - a;
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
        Ok(x_t
            .iter()
            .zip(x0_hat)
            .zip(noise)
            .map(|((&x, &x0), &z)| (c0 * x0 as f64 + ct * x as f64 + var.sqrt() * z as f64) as f32)
            .collect())
    }
}

/// Descending sampling timesteps `τ_K > … > τ_1`, starting at `T`. The final
/// transition of a plan always goes to `t = 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    timesteps: Vec<usize>,
}

impl StepPlan {
    /// `K` evenly strided timesteps out of `1..=T`, anchored at `T`.
    pub fn even(total: usize, k: usize) -> Result<Self> {
        if k == 0 || k > total {
            return Err(Error::invalid(format!(
                "sampling steps must satisfy 1 <= K <= T, got K={k}, T={total}"
            )));
        }
        let timesteps = (0..k)
            .map(|i| total - (i * total) / k)
            .collect::<Vec<_>>();
        debug_assert!(timesteps.windows(2).all(|w| w[0] > w[1]));
        Ok(Self { timesteps })
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    pub fn first(&self) -> usize {
        self.timesteps[0]
    }

    /// `(t_from, t_to)` pairs, ending with a hop to 0.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.timesteps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.timesteps.get(i + 1).copied().unwrap_or(0)))
    }
}
