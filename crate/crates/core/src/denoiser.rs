//! Noise-prediction models for the toy simulator.
//!
//! [`GaussianMixtureModel`] gives an exact posterior-mean denoiser, so sampling
//! runs need no trained network. [`MemorizingDenoiser`] wraps any denoiser and
//! pulls its clean-latent prediction toward a planted training sample.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::schedule::NoiseSchedule;

/// Which branch of a guided model to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Guidance {
    Unconditional,
    Conditional,
}

/// `ε_θ(x_t, t, c)`: deterministic noise prediction with output shaped like `x_t`.
pub trait Denoiser: Send + Sync {
    fn predict_noise(&self, x_t: &Latent, t: usize, guidance: Guidance) -> Result<Latent>;

    fn schedule(&self) -> &NoiseSchedule;
}

impl<D: Denoiser + ?Sized> Denoiser for Arc<D> {
    fn predict_noise(&self, x_t: &Latent, t: usize, guidance: Guidance) -> Result<Latent> {
        (**self).predict_noise(x_t, t, guidance)
    }

    fn schedule(&self) -> &NoiseSchedule {
        (**self).schedule()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub mean: Latent,
    /// Isotropic variance; zero gives a point mass.
    pub variance: f64,
    pub weight: f64,
}

/// Isotropic Gaussian mixture over latents.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureModel {
    components: Vec<MixtureComponent>,
}

/// Posterior-mean prediction of `x0` plus whether responsibilities underflowed.
#[derive(Debug, Clone)]
pub struct PosteriorMean {
    pub x0: Latent,
    pub underflow: bool,
}

impl GaussianMixtureModel {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::input("mixture needs at least one component"))?;
        let shape = first.mean.shape();
        for (i, c) in components.iter().enumerate() {
            if c.mean.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    got: c.mean.shape(),
                });
            }
            if !(c.variance >= 0.0 && c.variance.is_finite()) {
                return Err(Error::param(format!("component {i}: variance {} must be >= 0", c.variance)));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::param(format!("component {i}: weight {} must be positive", c.weight)));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    /// Rescales weights to sum to one before validating.
    pub fn normalized(mut components: Vec<MixtureComponent>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if total > 0.0 {
            for c in &mut components {
                c.weight /= total;
            }
        }
        Self::new(components)
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.components[0].mean.shape()
    }

    /// `E[x0 | x_t]` with the mixture diffused to timestep `t`.
    pub fn posterior_mean(&self, x_t: &Latent, t: usize, sched: &NoiseSchedule) -> Result<PosteriorMean> {
        let ab = sched.alpha_bar(t)?;
        let sqrt_ab = ab.sqrt();
        let dim = x_t.len() as f64;

        let mut log_resp = Vec::with_capacity(self.components.len());
        for c in &self.components {
            x_t.ensure_same_shape(&c.mean)?;
            let marginal_var = ab * c.variance + (1.0 - ab);
            let dist2: f64 = x_t
                .as_slice()
                .iter()
                .zip(c.mean.as_slice())
                .map(|(x, m)| (x - sqrt_ab * m).powi(2))
                .sum();
            log_resp.push(
                c.weight.ln() - 0.5 * dim * marginal_var.ln() - 0.5 * dist2 / marginal_var,
            );
        }
        let max = log_resp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut underflow = !max.is_finite();
        let mut resp: Vec<f64> = if underflow {
            vec![0.0; log_resp.len()]
        } else {
            log_resp.iter().map(|l| (l - max).exp()).collect()
        };
        let total: f64 = resp.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            underflow = true;
        }
        if underflow {
            log::warn!("mixture responsibilities underflowed at t={t}; using uniform responsibilities");
            resp = vec![1.0 / resp.len() as f64; resp.len()];
        } else {
            for r in &mut resp {
                *r /= total;
            }
        }

        let mut x0 = vec![0.0; x_t.len()];
        for (c, r) in self.components.iter().zip(&resp) {
            if *r == 0.0 {
                continue;
            }
            let marginal_var = ab * c.variance + (1.0 - ab);
            let gain = sqrt_ab * c.variance / marginal_var;
            for ((out, x), m) in x0.iter_mut().zip(x_t.as_slice()).zip(c.mean.as_slice()) {
                *out += r * (m + gain * (x - sqrt_ab * m));
            }
        }
        let (ch, h, w) = x_t.shape();
        Ok(PosteriorMean {
            x0: Latent::new(ch, h, w, x0)?,
            underflow,
        })
    }

    /// Noise prediction implied by the posterior mean (inverse of `predict_x0`).
    pub fn predict_noise(&self, x_t: &Latent, t: usize, sched: &NoiseSchedule) -> Result<Latent> {
        let x0 = self.posterior_mean(x_t, t, sched)?.x0;
        noise_for_target(x_t, &x0, t, sched)
    }
}

/// The unique `ε` for which `predict_x0(x_t, ε, t)` equals `x0`.
pub fn noise_for_target(x_t: &Latent, x0: &Latent, t: usize, sched: &NoiseSchedule) -> Result<Latent> {
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (1.0 / (1.0 - ab).sqrt(), -ab.sqrt() / (1.0 - ab).sqrt());
    x_t.lincomb(a, x0, b)
}

/// Exact posterior-mean denoiser built from a mixture.
pub fn analytic_gm_denoiser(
    x_t: &Latent,
    t: usize,
    gm: &GaussianMixtureModel,
    sched: &NoiseSchedule,
) -> Result<Latent> {
    gm.predict_noise(x_t, t, sched)
}

/// Conditional/unconditional mixture pair used for guided sampling.
#[derive(Debug, Clone)]
pub struct MixtureDenoiser {
    conditional: GaussianMixtureModel,
    unconditional: GaussianMixtureModel,
    schedule: NoiseSchedule,
}

impl MixtureDenoiser {
    pub fn new(
        conditional: GaussianMixtureModel,
        unconditional: GaussianMixtureModel,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        if conditional.shape() != unconditional.shape() {
            return Err(Error::ShapeMismatch {
                expected: conditional.shape(),
                got: unconditional.shape(),
            });
        }
        Ok(Self {
            conditional,
            unconditional,
            schedule,
        })
    }

    /// Both branches share one mixture.
    pub fn unguided(gm: GaussianMixtureModel, schedule: NoiseSchedule) -> Self {
        Self {
            conditional: gm.clone(),
            unconditional: gm,
            schedule,
        }
    }

    pub fn conditional(&self) -> &GaussianMixtureModel {
        &self.conditional
    }
}

impl Denoiser for MixtureDenoiser {
    fn predict_noise(&self, x_t: &Latent, t: usize, guidance: Guidance) -> Result<Latent> {
        let gm = match guidance {
            Guidance::Conditional => &self.conditional,
            Guidance::Unconditional => &self.unconditional,
        };
        gm.predict_noise(x_t, t, &self.schedule)
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

/// Time profile `w(t)` of the memorization pull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MemorizationStrength {
    /// `w(t) = w_max · (T − t) / T`: zero at `t = T`, `w_max` at `t = 0`.
    Linear { w_max: f64 },
    Constant { w: f64 },
}

impl MemorizationStrength {
    pub fn at(&self, t: usize, total_steps: usize) -> f64 {
        match *self {
            MemorizationStrength::Linear { w_max } => {
                w_max * (total_steps.saturating_sub(t)) as f64 / total_steps as f64
            }
            MemorizationStrength::Constant { w } => w,
        }
    }

    fn peak(&self) -> f64 {
        match *self {
            MemorizationStrength::Linear { w_max } => w_max,
            MemorizationStrength::Constant { w } => w,
        }
    }
}

/// A planted training sample and how strongly the model regurgitates it.
#[derive(Debug, Clone)]
pub struct MemorizationSpec {
    pub target: Latent,
    pub strength: MemorizationStrength,
}

/// `ε = (1 − w(t))·ε_base + w(t)·ε_mem`, where `ε_mem` makes the clean
/// prediction exactly the memorized target. Applied to both guidance branches.
pub struct MemorizingDenoiser<D> {
    base: D,
    memory: MemorizationSpec,
}

impl<D: Denoiser> MemorizingDenoiser<D> {
    pub fn new(base: D, memory: MemorizationSpec) -> Result<Self> {
        let peak = memory.strength.peak();
        if !(0.0..=1.0).contains(&peak) {
            return Err(Error::param(format!("memorization strength {peak} outside [0, 1]")));
        }
        Ok(Self { base, memory })
    }

    pub fn memory(&self) -> &MemorizationSpec {
        &self.memory
    }
}

/// Wraps `base` with a memorization pull toward `mem.target`.
pub fn memorizing_denoiser<D: Denoiser>(base: D, mem: MemorizationSpec) -> Result<MemorizingDenoiser<D>> {
    MemorizingDenoiser::new(base, mem)
}

impl<D: Denoiser> Denoiser for MemorizingDenoiser<D> {
    fn predict_noise(&self, x_t: &Latent, t: usize, guidance: Guidance) -> Result<Latent> {
        let base = self.base.predict_noise(x_t, t, guidance)?;
        let sched = self.base.schedule();
        let w = self.memory.strength.at(t, sched.total_steps());
        if w == 0.0 {
            return Ok(base);
        }
        let mem = noise_for_target(x_t, &self.memory.target, t, sched)?;
        if w == 1.0 {
            return Ok(mem);
        }
        base.lincomb(1.0 - w, &mem, w)
    }

    fn schedule(&self) -> &NoiseSchedule {
        self.base.schedule()
    }
}
