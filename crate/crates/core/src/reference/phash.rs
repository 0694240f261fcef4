//! 64-bit DCT perceptual hash and the uniqueness score built on it.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

pub const HASH_SIDE: usize = 32;
const BLOCK: usize = 8;
/// Hamming distance that maps to full uniqueness.
pub const UNIQUENESS_SCALE: f64 = 32.0;

/// Row-major grayscale image with real-valued pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input("image must have nonzero dimensions"));
        }
        if pixels.len() != width * height {
            return Err(Error::input(format!(
                "{}×{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::input("image pixels must be finite"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Result<Self> {
        let luma = img.to_luma32f();
        let (w, h) = luma.dimensions();
        Self::new(w as usize, h as usize, luma.into_raw().into_iter().map(f64::from).collect())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::format("image", e.to_string()))?;
        Self::from_dynamic(&img)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p * a).collect(),
        }
    }
}

/// Fractional overlap weights of source cells `[i, i+1)` with each of `dst` equal bins.
fn bin_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let (lo, hi) = (d as f64 * scale, (d + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Box-filter resize: each output pixel is the area-weighted mean of the source it covers.
pub fn area_resize(img: &GrayImage, out_w: usize, out_h: usize) -> Vec<f64> {
    let wy = bin_weights(img.height, out_h);
    let wx = bin_weights(img.width, out_w);
    let mut out = vec![0.0; out_w * out_h];
    for (oy, ys) in wy.iter().enumerate() {
        for (ox, xs) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(y, a) in ys {
                for &(x, b) in xs {
                    acc += a * b * img.pixels[y * img.width + x];
                }
            }
            out[oy * out_w + ox] = acc;
        }
    }
    out
}

/// Orthonormal DCT-II coefficients `(u, v)` for `u, v < 8` of a 32×32 block.
fn low_dct(block: &[f64]) -> [f64; BLOCK * BLOCK] {
    let n = HASH_SIDE;
    let basis: Vec<f64> = (0..BLOCK)
        .flat_map(|k| {
            let norm = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n).map(move |i| norm * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos())
        })
        .collect();
    // rows first, then columns
    let mut rows = vec![0.0; n * BLOCK];
    for y in 0..n {
        for v in 0..BLOCK {
            rows[y * BLOCK + v] = (0..n).map(|x| block[y * n + x] * basis[v * n + x]).sum();
        }
    }
    let mut out = [0.0; BLOCK * BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            out[u * BLOCK + v] = (0..n).map(|y| rows[y * BLOCK + v] * basis[u * n + y]).sum();
        }
    }
    out
}

/// Bit `u*8 + v` is set when coefficient `(u, v)` exceeds the median of the 63
/// non-DC coefficients. The DC bit is always 0.
pub fn phash64(img: &GrayImage) -> u64 {
    let small = area_resize(img, HASH_SIDE, HASH_SIDE);
    let mut coeffs = low_dct(&small);
    // rounding noise on a flat image must not decide bits
    let peak = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    for c in coeffs.iter_mut() {
        if c.abs() <= 1e-9 * peak {
            *c = 0.0;
        }
    }
    let mut ac: Vec<f64> = coeffs[1..].to_vec();
    ac.sort_by(f64::total_cmp);
    let median = ac[ac.len() / 2];
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c > median)
        .fold(0u64, |h, (i, _)| h | (1 << i))
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Distance to the nearest corpus hash over 32, clipped to `[0, 1]`.
pub fn uniqueness_h3(h: u64, corpus: &[u64]) -> Result<f64> {
    let nearest = corpus
        .iter()
        .map(|&p| hamming(h, p))
        .min()
        .ok_or_else(|| Error::input("pHash corpus is empty"))?;
    Ok((nearest as f64 / UNIQUENESS_SCALE).clamp(0.0, 1.0))
}
