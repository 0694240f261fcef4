//! Spatial localization of memorized regions.
//!
//! A concept map is aggregated from cross-attention, a bright-ending style map
//! flags locally regurgitated content, and their product is thresholded into a
//! binary injection mask.

use crate::error::{Error, Result};
use crate::filter::gaussian_smooth;
use crate::latent::{Latent, SoftMap};

/// Smoothing applied to aggregated concept attention.
pub const CONCEPT_SMOOTHING_SIGMA: f64 = 1.5;
/// Default threshold on the product of the two maps.
pub const DEFAULT_TAU: f64 = 0.1;
/// Threshold applied to the BE map alone when the product mask is empty.
pub const FALLBACK_THRESHOLD: f64 = 0.5;
/// Default patch size of the synthetic BE provider.
pub const DEFAULT_BE_WINDOW: usize = 4;

/// Cross-attention for one layer at one timestep: `heads × queries × tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    heads: usize,
    queries: usize,
    tokens: usize,
    data: Vec<f64>,
}

impl AttentionTensor {
    pub fn new(heads: usize, queries: usize, tokens: usize, data: Vec<f64>) -> Result<Self> {
        if heads == 0 || queries == 0 || tokens == 0 {
            return Err(Error::input("attention dims must be positive"));
        }
        if data.len() != heads * queries * tokens {
            return Err(Error::input(format!(
                "attention tensor has {} values, expected {}",
                data.len(),
                heads * queries * tokens
            )));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::input("attention weights must be finite and non-negative"));
        }
        Ok(Self {
            heads,
            queries,
            tokens,
            data,
        })
    }

    /// Reinterprets a latent as `heads × queries × tokens` (channels, rows, columns).
    pub fn from_latent(latent: &Latent) -> Result<Self> {
        let (h, q, n) = latent.shape();
        Self::new(h, q, n, latent.as_slice().to_vec())
    }

    pub fn to_latent(&self) -> Latent {
        Latent::new(self.heads, self.queries, self.tokens, self.data.clone())
            .expect("attention weights are finite")
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn get(&self, head: usize, query: usize, token: usize) -> f64 {
        self.data[(head * self.queries + query) * self.tokens + token]
    }
}

/// Attention tensors across layers and timesteps plus the prompt's token layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    entries: Vec<AttentionTensor>,
    /// Word index for each token; `None` for special tokens.
    token_words: Vec<Option<usize>>,
    concept_tokens: Vec<usize>,
}

impl AttentionStack {
    pub fn new(
        entries: Vec<AttentionTensor>,
        token_words: Vec<Option<usize>>,
        concept_tokens: Vec<usize>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::input("attention stack has no entries"));
        }
        let n_tok = token_words.len();
        if let Some(e) = entries.iter().find(|e| e.tokens != n_tok) {
            return Err(Error::input(format!(
                "attention entry has {} tokens but the token map covers {n_tok}",
                e.tokens
            )));
        }
        if let Some(t) = concept_tokens.iter().find(|&&t| t >= n_tok) {
            return Err(Error::input(format!("concept token {t} out of range")));
        }
        Ok(Self {
            entries,
            token_words,
            concept_tokens,
        })
    }

    pub fn entries(&self) -> &[AttentionTensor] {
        &self.entries
    }

    pub fn token_words(&self) -> &[Option<usize>] {
        &self.token_words
    }

    pub fn concept_tokens(&self) -> &[usize] {
        &self.concept_tokens
    }

    pub fn token_count(&self) -> usize {
        self.token_words.len()
    }
}

fn square_side(queries: usize) -> Option<usize> {
    let side = (queries as f64).sqrt().round() as usize;
    (side * side == queries).then_some(side)
}

/// Half-pixel-centered bilinear resampling of a `src_h × src_w` plane.
pub fn resize_bilinear(src: &[f64], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f64> {
    if (src_h, src_w) == (dst_h, dst_w) {
        return src.to_vec();
    }
    let coord = |dst: usize, src_n: usize, dst_n: usize| {
        let s = (dst as f64 + 0.5) * src_n as f64 / dst_n as f64 - 0.5;
        let s = s.clamp(0.0, (src_n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for y in 0..dst_h {
        let (y0, y1, fy) = coord(y, src_h, dst_h);
        for x in 0..dst_w {
            let (x0, x1, fx) = coord(x, src_w, dst_w);
            let top = src[y0 * src_w + x0] * (1.0 - fx) + src[y0 * src_w + x1] * fx;
            let bottom = src[y1 * src_w + x0] * (1.0 - fx) + src[y1 * src_w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Min-max normalization; a constant map becomes all ones.
fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Concept map: attention averaged over heads, entries and concept tokens,
/// resized to `out_shape`, min-max normalized, smoothed (σ = 1.5) and rescaled
/// so its peak is 1.
pub fn aggregate_concept_attention(stack: &AttentionStack, out_shape: (usize, usize)) -> Result<SoftMap> {
    let concept = stack.concept_tokens();
    if concept.is_empty() {
        return Err(Error::input("no concept tokens selected"));
    }
    let (out_h, out_w) = out_shape;
    if out_h == 0 || out_w == 0 {
        return Err(Error::input("output shape must be positive"));
    }
    let mut acc = vec![0.0; out_h * out_w];
    for entry in stack.entries() {
        let side = square_side(entry.queries()).ok_or_else(|| {
            Error::input(format!("{} queries do not form a square grid", entry.queries()))
        })?;
        let norm = (entry.heads() * concept.len()) as f64;
        let grid: Vec<f64> = (0..entry.queries())
            .map(|q| {
                let mut s = 0.0;
                for u in 0..entry.heads() {
                    for &tok in concept {
                        s += entry.get(u, q, tok);
                    }
                }
                s / norm
            })
            .collect();
        for (a, v) in acc.iter_mut().zip(resize_bilinear(&grid, side, side, out_h, out_w)) {
            *a += v;
        }
    }
    let n = stack.entries().len() as f64;
    let mean: Vec<f64> = acc.into_iter().map(|v| v / n).collect();
    let normalized = SoftMap::from_clamped(out_h, out_w, min_max(&mean))?;
    Ok(gaussian_smooth(&normalized, CONCEPT_SMOOTHING_SIGMA)?.max_normalized())
}

/// Binary injection mask with the threshold that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
    tau: f64,
    fallback_used: bool,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>, tau: f64, fallback_used: bool) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::input("mask values do not match dims"));
        }
        Ok(Self {
            height,
            width,
            values,
            tau,
            fallback_used,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![true; height * width],
            tau: DEFAULT_TAU,
            fallback_used: false,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn fallback_used(&self) -> bool {
        self.fallback_used
    }

    pub fn area_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v).count() as f64 / self.values.len() as f64
    }

    pub fn to_latent(&self) -> Latent {
        Latent::new(
            1,
            self.height,
            self.width,
            self.values.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask values are finite")
    }
}

/// `1[m_be ⊙ m_concept > τ]` without the empty-mask fallback.
pub fn threshold_product(m_be: &SoftMap, m_concept: &SoftMap, tau: f64) -> Result<Vec<bool>> {
    if m_be.dims() != m_concept.dims() {
        return Err(Error::input(format!(
            "mask dims differ: {:?} vs {:?}",
            m_be.dims(),
            m_concept.dims()
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::param(format!("tau {tau} outside (0, 1)")));
    }
    Ok(m_be
        .values()
        .iter()
        .zip(m_concept.values())
        .map(|(b, c)| b * c > tau)
        .collect())
}

/// Thresholded intersection of the BE and concept maps.
///
/// An empty product mask falls back to `m_be > 0.5`; if that is empty too the
/// result is [`Error::EmptyMask`].
pub fn intersect_masks(m_be: &SoftMap, m_concept: &SoftMap, tau: f64) -> Result<BinaryMask> {
    let (h, w) = m_be.dims();
    let product = threshold_product(m_be, m_concept, tau)?;
    if product.iter().any(|&v| v) {
        return BinaryMask::new(h, w, product, tau, false);
    }
    let fallback: Vec<bool> = m_be.values().iter().map(|&b| b > FALLBACK_THRESHOLD).collect();
    if fallback.iter().any(|&v| v) {
        return BinaryMask::new(h, w, fallback, tau, true);
    }
    Err(Error::EmptyMask)
}

/// Local agreement between a generation and the memorized latent.
///
/// Each pixel gets the cosine between the two `window × window` patches (all
/// channels) anchored around it, rectified and squared into `[0, 1]`.
/// Identical patches score 1 even when both are zero.
pub fn synthetic_be_provider(gen_latent: &Latent, mem_target: &Latent, window: usize) -> Result<SoftMap> {
    gen_latent.ensure_same_shape(mem_target)?;
    if window == 0 {
        return Err(Error::param("BE window must be positive"));
    }
    let (c, h, w) = gen_latent.shape();
    let before = (window / 2) as isize;
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let y0 = (y as isize - before).max(0) as usize;
            let x0 = (x as isize - before).max(0) as usize;
            let y1 = (y as isize - before + window as isize).min(h as isize) as usize;
            let x1 = (x as isize - before + window as isize).min(w as isize) as usize;
            let (mut dot, mut ng, mut nm) = (0.0, 0.0, 0.0);
            let mut identical = true;
            for ch in 0..c {
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        let g = gen_latent.get(ch, yy, xx);
                        let m = mem_target.get(ch, yy, xx);
                        identical &= g == m;
                        dot += g * m;
                        ng += g * g;
                        nm += m * m;
                    }
                }
            }
            let v = if identical {
                1.0
            } else if ng == 0.0 || nm == 0.0 {
                0.0
            } else {
                let cos = (dot / (ng.sqrt() * nm.sqrt())).clamp(0.0, 1.0);
                cos * cos
            };
            values.push(v);
        }
    }
    SoftMap::new(h, w, values)
}

/// Source of the bright-ending style memorization map for the current clean prediction.
pub trait BeMaskProvider: Send + Sync {
    fn be_map(&self, x_hat0: &Latent) -> Result<SoftMap>;
}

/// Source of the concept map at a given spatial resolution.
pub trait ConceptMaskProvider: Send + Sync {
    fn concept_map(&self, height: usize, width: usize) -> Result<SoftMap>;
}

/// BE stand-in comparing the generation to a known memorized latent.
#[derive(Debug, Clone)]
pub struct SyntheticBe {
    pub target: Latent,
    pub window: usize,
}

impl BeMaskProvider for SyntheticBe {
    fn be_map(&self, x_hat0: &Latent) -> Result<SoftMap> {
        synthetic_be_provider(x_hat0, &self.target, self.window)
    }
}

/// Concept maps aggregated from a fixed attention stack.
#[derive(Debug, Clone)]
pub struct StackConcept {
    pub stack: AttentionStack,
}

impl ConceptMaskProvider for StackConcept {
    fn concept_map(&self, height: usize, width: usize) -> Result<SoftMap> {
        aggregate_concept_attention(&self.stack, (height, width))
    }
}

/// A precomputed map, resized when requested at another resolution.
#[derive(Debug, Clone)]
pub struct FixedMap(pub SoftMap);

impl ConceptMaskProvider for FixedMap {
    fn concept_map(&self, height: usize, width: usize) -> Result<SoftMap> {
        let (h, w) = self.0.dims();
        SoftMap::from_clamped(height, width, resize_bilinear(self.0.values(), h, w, height, width))
    }
}

impl BeMaskProvider for FixedMap {
    fn be_map(&self, x_hat0: &Latent) -> Result<SoftMap> {
        self.concept_map(x_hat0.height(), x_hat0.width())
    }
}
