//! Closed-form diffusion steps and the guided DDIM sampling loop.

use rand::Rng;

use crate::denoiser::{Denoiser, Guidance};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::schedule::NoiseSchedule;

/// `sqrt(ᾱ_t)·x0 + sqrt(1−ᾱ_t)·eps`
pub fn forward_diffuse(x0: &Latent, t: usize, eps: &Latent, sched: &NoiseSchedule) -> Result<Latent> {
    let ab = sched.alpha_bar(t)?;
    x0.lincomb(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Clean-latent estimate `(x_t − sqrt(1−ᾱ_t)·ε̂)/sqrt(ᾱ_t)`.
pub fn predict_x0(x_t: &Latent, eps_pred: &Latent, t: usize, sched: &NoiseSchedule) -> Result<Latent> {
    let ab = sched.alpha_bar(t)?;
    let root = ab.sqrt();
    x_t.lincomb(1.0 / root, eps_pred, -(1.0 - ab).sqrt() / root)
}

/// One DDIM update from `t` to `t_prev` (`None` = the clean endpoint, `ᾱ = 1`).
///
/// Uses the direction coefficient `sqrt(1 − ᾱ_prev − σ²)`, so `η = 0` is fully
/// deterministic and `η > 0` keeps the marginal variance consistent. The bare
/// `sqrt(1 − ᾱ_prev)` form only agrees with this when `σ = 0`.
pub fn ddim_step(
    x_hat0: &Latent,
    eps_pred: &Latent,
    t: usize,
    t_prev: Option<usize>,
    sched: &NoiseSchedule,
    noise: &Latent,
) -> Result<Latent> {
    if let Some(p) = t_prev {
        if p >= t {
            return Err(Error::param(format!("previous step {p} must precede {t}")));
        }
    }
    x_hat0.ensure_same_shape(eps_pred)?;
    x_hat0.ensure_same_shape(noise)?;
    let ab_prev = sched.alpha_bar_or_clean(t_prev)?;
    let sigma = sched.sigma_between(t, t_prev)?;
    let mut dir_var = 1.0 - ab_prev - sigma * sigma;
    if dir_var < 0.0 {
        if dir_var < -1e-12 {
            return Err(Error::InvalidSchedule(format!(
                "1 - alpha_bar_prev - sigma^2 = {dir_var} at t={t}"
            )));
        }
        dir_var = 0.0;
    }
    let (a, b) = (ab_prev.sqrt(), dir_var.sqrt());
    let mut out = x_hat0.lincomb(a, eps_pred, b)?;
    if sigma > 0.0 {
        out = out.lincomb(1.0, noise, sigma)?;
    }
    Ok(out)
}

/// `eps_uncond + scale·(eps_cond − eps_uncond)`
pub fn cfg_combine(eps_uncond: &Latent, eps_cond: &Latent, scale: f64) -> Result<Latent> {
    eps_uncond.zip_map(eps_cond, |u, c| u + scale * (c - u))
}

/// Guided noise prediction at one timestep.
pub fn guided_noise<D: Denoiser + ?Sized>(denoiser: &D, x_t: &Latent, t: usize, cfg_scale: f64) -> Result<Latent> {
    let uncond = denoiser.predict_noise(x_t, t, Guidance::Unconditional)?;
    let cond = denoiser.predict_noise(x_t, t, Guidance::Conditional)?;
    cfg_combine(&uncond, &cond, cfg_scale)
}

/// What a step hook sees before the DDIM update.
#[derive(Debug)]
pub struct StepView<'a> {
    /// Position in the DDIM subsequence.
    pub index: usize,
    pub t: usize,
    pub x_t: &'a Latent,
    pub eps: &'a Latent,
    pub x_hat0: &'a Latent,
}

/// Runs guided DDIM from `x_init` at the first scheduled step down to the clean endpoint.
///
/// `hook` may return a replacement clean prediction, which is substituted into
/// the update while the step's `ε̂` is reused. Step noise is drawn from `rng`
/// only when `σ > 0`. Returns the final latent.
pub fn sample_ddim<D, R, F>(
    denoiser: &D,
    x_init: &Latent,
    cfg_scale: f64,
    rng: &mut R,
    mut hook: F,
) -> Result<Latent>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&StepView<'_>) -> Result<Option<Latent>>,
{
    let sched = denoiser.schedule();
    let (c, h, w) = x_init.shape();
    let mut x = x_init.clone();
    let zeros = Latent::zeros(c, h, w);
    for (index, &t) in sched.ddim_steps().iter().enumerate() {
        let t_prev = sched.ddim_prev(index);
        let eps = guided_noise(denoiser, &x, t, cfg_scale)?;
        let x_hat0 = predict_x0(&x, &eps, t, sched)?;
        let view = StepView {
            index,
            t,
            x_t: &x,
            eps: &eps,
            x_hat0: &x_hat0,
        };
        let replaced = hook(&view)?;
        let x0_used = replaced.as_ref().unwrap_or(&x_hat0);
        let noise = if sched.sigma_between(t, t_prev)? > 0.0 {
            Latent::randn(c, h, w, rng)
        } else {
            zeros.clone()
        };
        x = ddim_step(x0_used, &eps, t, t_prev, sched, &noise)?;
    }
    Ok(x)
}

/// Plain guided DDIM with no intervention.
pub fn sample_vanilla<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    x_init: &Latent,
    cfg_scale: f64,
    rng: &mut R,
) -> Result<Latent> {
    sample_ddim(denoiser, x_init, cfg_scale, rng, |_| Ok(None))
}
