//! Variance schedules and the DDIM timestep subsequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_DDIM_STEPS: usize = 50;

/// Per-timestep noise tables for `T` training steps plus the inference subsequence.
///
/// Timesteps are zero-based: `alpha_bar[t] = ∏_{s ≤ t} (1 − beta[s])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    ddim_steps: Vec<usize>,
    eta: f64,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end` over `total_steps`, with
    /// `ddim_count` evenly strided inference steps ending at step 0.
    pub fn linear(
        total_steps: usize,
        beta_start: f64,
        beta_end: f64,
        ddim_count: usize,
        eta: f64,
    ) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        if ddim_count == 0 || ddim_count > total_steps {
            return Err(Error::param(format!(
                "ddim step count {ddim_count} must be in 1..={total_steps}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::param(format!("eta {eta} outside [0, 1]")));
        }

        let beta: Vec<f64> = (0..total_steps)
            .map(|t| {
                if total_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * t as f64 / (total_steps - 1) as f64
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar: Vec<f64> = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let sigma = (0..total_steps)
            .map(|t| {
                let prev = if t == 0 { 1.0 } else { alpha_bar[t - 1] };
                eta * ((1.0 - prev) / (1.0 - alpha_bar[t])).sqrt() * (1.0 - alpha[t]).sqrt()
            })
            .collect();

        let stride = total_steps / ddim_count;
        let ddim_steps = (0..ddim_count).rev().map(|i| i * stride).collect();

        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
            ddim_steps,
            eta,
        })
    }

    /// `T = 1000`, betas `1e-4 → 0.02`, 50 DDIM steps.
    pub fn stable_diffusion(eta: f64) -> Result<Self> {
        Self::linear(
            DEFAULT_TRAIN_STEPS,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
            DEFAULT_DDIM_STEPS,
            eta,
        )
    }

    pub fn total_steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Single-step reverse noise scale `σ_t` for consecutive timesteps.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Inference timesteps in denoising order (strictly decreasing).
    pub fn ddim_steps(&self) -> &[usize] {
        &self.ddim_steps
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.total_steps() {
            return Err(Error::param(format!(
                "timestep {t} outside schedule of {} steps",
                self.total_steps()
            )));
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha_bar[t])
    }

    /// `ᾱ` at an optional previous step; `None` is the clean endpoint with `ᾱ = 1`.
    pub fn alpha_bar_or_clean(&self, t: Option<usize>) -> Result<f64> {
        t.map_or(Ok(1.0), |t| self.alpha_bar(t))
    }

    /// DDIM noise scale for a jump from `t` to `t_prev`.
    ///
    /// `η·sqrt((1−ᾱ_prev)/(1−ᾱ_t))·sqrt(1−ᾱ_t/ᾱ_prev)`, which equals `sigma()[t]`
    /// when `t_prev = t − 1`.
    pub fn sigma_between(&self, t: usize, t_prev: Option<usize>) -> Result<f64> {
        let ab_t = self.alpha_bar(t)?;
        let ab_prev = self.alpha_bar_or_clean(t_prev)?;
        if self.eta == 0.0 {
            return Ok(0.0);
        }
        Ok(self.eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt())
    }

    /// The timestep that follows `ddim_steps()[index]`, or `None` after the last one.
    pub fn ddim_prev(&self, index: usize) -> Option<usize> {
        self.ddim_steps.get(index + 1).copied()
    }
}
