//! Locating the timestep window for feature injection from an alignment trace.
//!
//! The upper bound is the first step (in denoising order) whose alignment
//! exceeds the trace mean. The lower bound is the first step at or after it
//! where the alignment gain per unit of denoising progress falls below
//! `μ − 1.5σ` of all gains.

use serde::{Deserialize, Serialize};

use crate::conditioning::{AlignmentScorer, Conditioning};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::schedule::NoiseSchedule;

/// Derivative threshold multiplier on the standard deviation.
pub const DROP_SIGMAS: f64 = 1.5;

/// Alignment score per scheduled step, in denoising order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTrace {
    timesteps: Vec<usize>,
    values: Vec<f64>,
}

impl SimilarityTrace {
    pub fn new(timesteps: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if timesteps.len() != values.len() {
            return Err(Error::input(format!(
                "trace has {} steps but {} values",
                timesteps.len(),
                values.len()
            )));
        }
        if timesteps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::input("trace timesteps must be strictly decreasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("trace values must be finite"));
        }
        Ok(Self { timesteps, values })
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Inclusive timestep range `[t_low, t_high]` for injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionWindow {
    pub t_low: usize,
    pub t_high: usize,
}

impl InjectionWindow {
    /// Dataset-averaged window on the 1000-step scale.
    pub const DEFAULT: InjectionWindow = InjectionWindow {
        t_low: 141,
        t_high: 341,
    };

    pub fn new(t_low: usize, t_high: usize) -> Result<Self> {
        if t_low > t_high {
            return Err(Error::param(format!("window low {t_low} exceeds high {t_high}")));
        }
        Ok(Self { t_low, t_high })
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.t_low..=self.t_high).contains(&t)
    }
}

impl Default for InjectionWindow {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// A located window and whether it fell back to the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub window: InjectionWindow,
    pub defaulted: bool,
}

/// Scores each `(step, latent)` of a run, preserving run order.
pub fn alignment_trace(
    run: &[(usize, Latent)],
    scorer: &dyn AlignmentScorer,
    cond: &Conditioning,
) -> Result<SimilarityTrace> {
    if run.len() < 3 {
        return Err(Error::input(format!(
            "alignment trace needs at least 3 steps, got {}",
            run.len()
        )));
    }
    let values = run
        .iter()
        .map(|(_, x)| scorer.score(x, cond))
        .collect::<Result<Vec<_>>>()?;
    SimilarityTrace::new(run.iter().map(|(t, _)| *t).collect(), values)
}

/// Alignment gain per unit of denoising progress between consecutive steps.
///
/// Entry `i` is `(s_{i+1} − s_i) / (t_i − t_{i+1})` and is attributed to step `t_{i+1}`.
pub fn trace_derivative(trace: &SimilarityTrace) -> Result<SimilarityTrace> {
    if trace.len() < 2 {
        return Err(Error::input("derivative needs at least 2 trace points"));
    }
    let t = trace.timesteps();
    let s = trace.values();
    let values = (0..trace.len() - 1)
        .map(|i| (s[i + 1] - s[i]) / (t[i] - t[i + 1]) as f64)
        .collect();
    SimilarityTrace::new(t[1..].to_vec(), values)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean-crossing upper bound and derivative-drop lower bound.
///
/// A constant trace has no mean crossing and yields the default window with
/// `defaulted = true`. Without a derivative drop the lower bound is the last step.
pub fn find_window(trace: &SimilarityTrace) -> Result<WindowEstimate> {
    if trace.len() < 3 {
        return Err(Error::input("window search needs at least 3 trace points"));
    }
    let s = trace.values();
    let steps = trace.timesteps();
    let (mean, _) = mean_std(s);

    let degenerate = s.iter().all(|&v| v == s[0]);
    let high_idx = if degenerate { None } else { s.iter().position(|&v| v > mean) };
    let Some(high_idx) = high_idx else {
        return Ok(WindowEstimate {
            window: InjectionWindow::DEFAULT,
            defaulted: true,
        });
    };

    let deriv = trace_derivative(trace)?;
    let (mu, sd) = mean_std(deriv.values());
    let threshold = mu - DROP_SIGMAS * sd;
    // derivative entry j belongs to step index j + 1
    let low_idx = deriv
        .values()
        .iter()
        .enumerate()
        .find(|&(j, &d)| j + 1 >= high_idx && d < threshold)
        .map_or(steps.len() - 1, |(j, _)| j + 1);

    let t_high = steps[high_idx];
    let t_low = steps[low_idx].min(t_high);
    Ok(WindowEstimate {
        window: InjectionWindow { t_low, t_high },
        defaulted: false,
    })
}

/// Indices into `sched.ddim_steps()` whose timesteps fall inside the window.
///
/// When none do, the single step nearest to the window is used; ties go to the
/// earlier step in denoising order.
pub fn map_window_to_ddim(window: &InjectionWindow, sched: &NoiseSchedule) -> Result<Vec<usize>> {
    sched.check_step(window.t_low)?;
    sched.check_step(window.t_high)?;
    let steps = sched.ddim_steps();
    let inside: Vec<usize> = steps
        .iter()
        .enumerate()
        .filter(|(_, t)| window.contains(**t))
        .map(|(i, _)| i)
        .collect();
    if !inside.is_empty() {
        return Ok(inside);
    }
    let distance = |t: usize| {
        if t < window.t_low {
            window.t_low - t
        } else {
            t - window.t_high
        }
    };
    let nearest = steps
        .iter()
        .enumerate()
        .min_by_key(|(i, t)| (distance(**t), *i))
        .map(|(i, _)| i)
        .expect("schedule has at least one ddim step");
    Ok(vec![nearest])
}
