//! Orthonormal 2-D Fourier transforms and frequency-split latent initialization.
//!
//! Spectra are kept in the unshifted FFT layout: bin `(0, 0)` is the zero
//! frequency and bin `k` along an axis of length `n` carries the signed
//! frequency `k` for `k < n/2` and `k - n` otherwise.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::latent::Latent;

/// Largest tolerated imaginary component after the inverse transform.
pub const IMAGINARY_TOLERANCE: f64 = 1e-6;

/// Default low-pass cutoff as a fraction of the Nyquist radius.
pub const DEFAULT_CUTOFF: f64 = 0.25;

fn transform(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
    let scale = 1.0 / ((height * width) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Unitary forward 2-D DFT of a real `height × width` plane.
pub fn fft2(plane: &[f64], height: usize, width: usize) -> Vec<Complex64> {
    assert_eq!(plane.len(), height * width);
    let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, height, width, false);
    data
}

/// Unitary inverse 2-D DFT.
pub fn ifft2(spectrum: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    assert_eq!(spectrum.len(), height * width);
    let mut data = spectrum.to_vec();
    transform(&mut data, height, width, true);
    data
}

/// Signed frequency of FFT bin `k` on an axis of length `n`.
fn signed_bin(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radial frequency of bin `(ky, kx)`, normalized so each axis' Nyquist bin sits at 1.
pub fn normalized_radius(ky: usize, kx: usize, height: usize, width: usize) -> f64 {
    let fy = signed_bin(ky, height) / (height as f64 / 2.0);
    let fx = signed_bin(kx, width) / (width as f64 / 2.0);
    (fy * fy + fx * fx).sqrt()
}

/// Complementary low/high-pass masks over an `H×W` spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMaskPair {
    height: usize,
    width: usize,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl FrequencyMaskPair {
    /// Builds the pair from a low-pass mask; the high-pass mask is its complement.
    pub fn from_low(height: usize, width: usize, low: Vec<f64>) -> Result<Self> {
        if low.len() != height * width || height == 0 || width == 0 {
            return Err(Error::input("low-pass mask does not match its dims"));
        }
        if low.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input("low-pass mask values must lie in [0, 1]"));
        }
        let high = low.iter().map(|v| 1.0 - v).collect();
        Ok(Self {
            height,
            width,
            low,
            high,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }
}

/// Ideal isotropic low-pass mask: a bin passes iff its normalized radius is at most `cutoff`.
pub fn make_frequency_masks(height: usize, width: usize, cutoff: f64) -> Result<FrequencyMaskPair> {
    if height < 2 || width < 2 {
        return Err(Error::param(format!(
            "frequency masks need at least 2x2 bins, got {height}x{width}"
        )));
    }
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::param(format!("cutoff {cutoff} outside (0, 1)")));
    }
    let mut low = Vec::with_capacity(height * width);
    for ky in 0..height {
        for kx in 0..width {
            let r = normalized_radius(ky, kx, height, width);
            low.push(if r <= cutoff { 1.0 } else { 0.0 });
        }
    }
    FrequencyMaskPair::from_low(height, width, low)
}

/// Blends the high band of `eps` with the low band of `x_r`, channel by channel.
///
/// The output spectrum is `high ⊙ F(eps) + low ⊙ F(x_r)`. Callers that want
/// scale-matched blending should standardize `x_r` first.
pub fn frequency_blend_init(eps: &Latent, x_r: &Latent, masks: &FrequencyMaskPair) -> Result<Latent> {
    eps.ensure_same_shape(x_r)?;
    let (c, h, w) = eps.shape();
    if masks.dims() != (h, w) {
        return Err(Error::input(format!(
            "mask dims {:?} do not match latent plane {h}x{w}",
            masks.dims()
        )));
    }
    let mut out = Vec::with_capacity(c * h * w);
    let mut residue: f64 = 0.0;
    for ch in 0..c {
        let fe = fft2(eps.channel(ch), h, w);
        let fr = fft2(x_r.channel(ch), h, w);
        let blended: Vec<Complex64> = fe
            .iter()
            .zip(&fr)
            .zip(masks.high.iter().zip(&masks.low))
            .map(|((e, r), (hi, lo))| e * *hi + r * *lo)
            .collect();
        for v in ifft2(&blended, h, w) {
            residue = residue.max(v.im.abs());
            out.push(v.re);
        }
    }
    if residue >= IMAGINARY_TOLERANCE {
        return Err(Error::ImaginaryResidue(residue));
    }
    Latent::new(c, h, w, out)
}
