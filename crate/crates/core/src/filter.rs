//! Separable Gaussian smoothing of soft maps.

use crate::error::{Error, Result};
use crate::latent::SoftMap;

/// Smallest sigma used; requests below this act as the delta kernel.
pub const MIN_SIGMA: f64 = 1e-3;

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`, radius = ceil(3σ).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let sigma = sigma.max(MIN_SIGMA);
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

fn convolve_axis(src: &[f64], height: usize, width: usize, kernel: &[f64], along_x: bool) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let off = j as isize - radius;
                // replicate the edge sample
                let (sy, sx) = if along_x {
                    (y, (x as isize + off).clamp(0, width as isize - 1) as usize)
                } else {
                    ((y as isize + off).clamp(0, height as isize - 1) as usize, x)
                };
                acc += k * src[sy * width + sx];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with edge replication.
///
/// The kernel is normalized, so a map in `[0, 1]` stays in `[0, 1]` and constant
/// maps are fixed points. Sigmas below [`MIN_SIGMA`] are clamped up to it.
pub fn gaussian_smooth(map: &SoftMap, sigma: f64) -> Result<SoftMap> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("smoothing sigma must be positive, got {sigma}")));
    }
    let (h, w) = map.dims();
    let kernel = gaussian_kernel(sigma);
    let rows = convolve_axis(map.values(), h, w, &kernel, true);
    let both = convolve_axis(&rows, h, w, &kernel, false);
    SoftMap::from_clamped(h, w, both)
}
