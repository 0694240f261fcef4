//! Localized feature injection and the end-to-end mitigation pipeline.
//!
//! A generation runs in four stages: frequency-blended initialization from the
//! reference latent, guided DDIM sampling, window/mask localization, and a
//! convex blend of the reference into the clean prediction at every in-window
//! step. The blended prediction replaces `x̂0` in the DDIM update while the
//! step's noise prediction is reused.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{AlignmentScorer, Conditioning};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::sampler::sample_ddim;
use crate::spatial::{intersect_masks, BeMaskProvider, BinaryMask, ConceptMaskProvider, DEFAULT_TAU};
use crate::spectral::{frequency_blend_init, make_frequency_masks, DEFAULT_CUTOFF};
use crate::window::{alignment_trace, find_window, map_window_to_ddim, InjectionWindow, WindowEstimate};

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_CFG_SCALE: f64 = 7.5;

/// `x̂0′ = (1 − δm) ⊙ x̂0 + δm ⊙ x_r`, with the mask broadcast over channels.
///
/// Where `m = 0` (or `δ = 0`) the output keeps `x̂0`'s value bit for bit.
pub fn inject(x_hat0: &Latent, x_r: &Latent, m: &BinaryMask, delta: f64) -> Result<Latent> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::param(format!("delta {delta} outside [0, 1]")));
    }
    x_hat0.ensure_same_shape(x_r)?;
    let (c, h, w) = x_hat0.shape();
    if m.dims() != (h, w) {
        return Err(Error::input(format!(
            "mask dims {:?} do not match latent plane {h}x{w}",
            m.dims()
        )));
    }
    if delta == 0.0 {
        return Ok(x_hat0.clone());
    }
    let plane = h * w;
    let data = x_hat0
        .as_slice()
        .iter()
        .zip(x_r.as_slice())
        .enumerate()
        .map(|(i, (&x, &r))| {
            if m.values()[i % plane] {
                (1.0 - delta) * x + delta * r
            } else {
                x
            }
        })
        .collect();
    Latent::new(c, h, w, data)
}

/// Which injection window a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSetting {
    /// Locate the window from a preliminary vanilla pass.
    Auto,
    Fixed(InjectionWindow),
}

/// When the spatial mask is computed during the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskCadence {
    #[default]
    PerStep,
    Once,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectionConfig {
    pub delta: f64,
    pub window: WindowSetting,
    pub tau: f64,
    pub cutoff: f64,
    pub seed: u64,
    pub eta: f64,
    pub cfg_scale: f64,
    /// Frequency-blended initialization; off means `x_T` is pure noise.
    pub init: bool,
    /// Feature injection inside the window.
    pub injection: bool,
    pub mask_cadence: MaskCadence,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            window: WindowSetting::Fixed(InjectionWindow::DEFAULT),
            tau: DEFAULT_TAU,
            cutoff: DEFAULT_CUTOFF,
            seed: 0,
            eta: 0.0,
            cfg_scale: DEFAULT_CFG_SCALE,
            init: true,
            injection: true,
            mask_cadence: MaskCadence::PerStep,
        }
    }
}

impl InjectionConfig {
    /// Both interventions off: plain guided DDIM from noise.
    pub fn vanilla(seed: u64) -> Self {
        Self {
            seed,
            init: false,
            injection: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::param(format!("delta {} outside [0, 1]", self.delta)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::param(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(Error::param(format!("cutoff {} outside (0, 1)", self.cutoff)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !self.cfg_scale.is_finite() {
            return Err(Error::param("cfg scale must be finite"));
        }
        if let WindowSetting::Fixed(w) = self.window {
            InjectionWindow::new(w.t_low, w.t_high)?;
        }
        Ok(())
    }
}

/// Mask and scoring sources used by a run.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub be: &'a dyn BeMaskProvider,
    pub concept: &'a dyn ConceptMaskProvider,
    pub scorer: &'a dyn AlignmentScorer,
}

/// Per-step record of what the pipeline did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub step: usize,
    pub injected: bool,
    pub mask_area_fraction: f64,
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub final_latent: Latent,
    pub trajectory: Vec<StepRecord>,
    pub window_used: InjectionWindow,
    pub window_defaulted: bool,
    pub fallback_used: bool,
}

impl GenerationResult {
    pub fn injected_steps(&self) -> usize {
        self.trajectory.iter().filter(|r| r.injected).count()
    }

    /// Mean mask area over steps that injected, or 0 when none did.
    pub fn mean_mask_area(&self) -> f64 {
        let areas: Vec<f64> = self
            .trajectory
            .iter()
            .filter(|r| r.injected)
            .map(|r| r.mask_area_fraction)
            .collect();
        if areas.is_empty() {
            0.0
        } else {
            areas.iter().sum::<f64>() / areas.len() as f64
        }
    }

    /// Fraction of injecting steps whose mask came from the BE fallback.
    pub fn fallback_rate(&self) -> f64 {
        let injected = self.injected_steps();
        if injected == 0 {
            return 0.0;
        }
        self.trajectory.iter().filter(|r| r.injected && r.fallback_used).count() as f64 / injected as f64
    }
}

/// Draws `ε` for `x_T` and the RNG used for later step noise.
pub fn seeded_noise(seed: u64, shape: (usize, usize, usize)) -> (Latent, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Latent::randn(shape.0, shape.1, shape.2, &mut rng);
    (eps, rng)
}

/// Initial latent for a run: pure noise, or noise with the reference's low band.
///
/// The reference is standardized per channel before blending so both spectra
/// share the unit-Gaussian scale.
pub fn initial_latent(eps: &Latent, x_r: &Latent, cfg: &InjectionConfig) -> Result<Latent> {
    if !cfg.init {
        return Ok(eps.clone());
    }
    let masks = make_frequency_masks(eps.height(), eps.width(), cfg.cutoff)?;
    frequency_blend_init(eps, &x_r.standardize_channels(), &masks)
}

/// Plain guided DDIM from seeded noise; the reference pipeline with no interventions.
pub fn run_vanilla<D: Denoiser + ?Sized>(denoiser: &D, shape: (usize, usize, usize), cfg: &InjectionConfig) -> Result<Latent> {
    let (eps, mut rng) = seeded_noise(cfg.seed, shape);
    sample_ddim(denoiser, &eps, cfg.cfg_scale, &mut rng, |_| Ok(None))
}

/// Collects `(t, x̂0)` for every DDIM step of an unmodified run from `x_init`.
pub fn preliminary_pass<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_init: &Latent,
    cfg: &InjectionConfig,
) -> Result<Vec<(usize, Latent)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut run = Vec::with_capacity(denoiser.schedule().ddim_steps().len());
    sample_ddim(denoiser, x_init, cfg.cfg_scale, &mut rng, |view| {
        run.push((view.t, view.x_hat0.clone()));
        Ok(None)
    })?;
    Ok(run)
}

fn resolve_window<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_init: &Latent,
    cond: &Conditioning,
    scorer: &dyn AlignmentScorer,
    cfg: &InjectionConfig,
) -> Result<WindowEstimate> {
    match cfg.window {
        WindowSetting::Fixed(window) => Ok(WindowEstimate {
            window,
            defaulted: false,
        }),
        WindowSetting::Auto => {
            let run = preliminary_pass(denoiser, x_init, cfg)?;
            let trace = alignment_trace(&run, scorer, cond)?;
            let est = find_window(&trace)?;
            if est.defaulted {
                log::warn!("alignment trace is degenerate; using the default injection window");
            }
            Ok(est)
        }
    }
}

/// Runs one mitigated generation.
pub fn run_captain<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_r: &Latent,
    cond: &Conditioning,
    providers: Providers<'_>,
    cfg: &InjectionConfig,
) -> Result<GenerationResult> {
    cfg.validate()?;
    let sched = denoiser.schedule();
    if (sched.eta() - cfg.eta).abs() > 0.0 {
        return Err(Error::param(format!(
            "config eta {} differs from the denoiser schedule's eta {}",
            cfg.eta,
            sched.eta()
        )));
    }
    let (eps, mut rng) = seeded_noise(cfg.seed, x_r.shape());
    let x_init = initial_latent(&eps, x_r, cfg)?;

    let estimate = resolve_window(denoiser, &x_init, cond, providers.scorer, cfg)?;
    let window_steps: BTreeSet<usize> = if cfg.injection {
        map_window_to_ddim(&estimate.window, sched)?.into_iter().collect()
    } else {
        BTreeSet::new()
    };

    let (_, h, w) = x_r.shape();
    let concept = if window_steps.is_empty() {
        None
    } else {
        Some(providers.concept.concept_map(h, w)?.max_normalized())
    };
    let mut cached_mask: Option<Result<BinaryMask>> = None;
    let mut trajectory = Vec::with_capacity(sched.ddim_steps().len());

    let final_latent = sample_ddim(denoiser, &x_init, cfg.cfg_scale, &mut rng, |view| {
        let mut record = StepRecord {
            index: view.index,
            step: view.t,
            injected: false,
            mask_area_fraction: 0.0,
            fallback_used: false,
            note: None,
        };
        if !window_steps.contains(&view.index) {
            trajectory.push(record);
            return Ok(None);
        }
        let concept = concept.as_ref().expect("concept map exists inside the window");
        let mask = match (cfg.mask_cadence, &cached_mask) {
            (MaskCadence::Once, Some(m)) => clone_mask_result(m),
            _ => {
                let be = providers.be.be_map(view.x_hat0)?;
                let m = intersect_masks(&be, concept, cfg.tau);
                if cfg.mask_cadence == MaskCadence::Once {
                    cached_mask = Some(clone_mask_result(&m));
                }
                m
            }
        };
        let replaced = match mask {
            Ok(mask) => {
                record.injected = true;
                record.mask_area_fraction = mask.area_fraction();
                record.fallback_used = mask.fallback_used();
                Some(inject(view.x_hat0, x_r, &mask, cfg.delta)?)
            }
            Err(Error::EmptyMask) => {
                log::warn!("empty mask at step {}; skipping injection", view.t);
                record.note = Some("empty mask; injection skipped".into());
                None
            }
            Err(e) => return Err(e),
        };
        trajectory.push(record);
        Ok(replaced)
    })?;

    let fallback_used = trajectory.iter().any(|r| r.fallback_used);
    Ok(GenerationResult {
        final_latent,
        trajectory,
        window_used: estimate.window,
        window_defaulted: estimate.defaulted,
        fallback_used,
    })
}

fn clone_mask_result(m: &Result<BinaryMask>) -> Result<BinaryMask> {
    match m {
        Ok(mask) => Ok(mask.clone()),
        Err(Error::EmptyMask) => Err(Error::EmptyMask),
        Err(e) => Err(Error::InvalidInput(e.to_string())),
    }
}
