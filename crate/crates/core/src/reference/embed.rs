//! Embedding providers. The default works offline from pixel statistics and
//! hashed character trigrams; a neural provider can replace it behind the trait.

use super::index::Embedding;
use super::phash::{area_resize, GrayImage};
use crate::error::Result;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_image(&self, img: &GrayImage) -> Result<Embedding>;
    fn embed_text(&self, text: &str) -> Result<Embedding>;
}

/// 8×8 area-averaged thumbnail with the mean removed, and 64-bucket trigram counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelStatsEmbedder;

pub const PIXEL_STATS_SIDE: usize = 8;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn uniform(dim: usize) -> Result<Embedding> {
    Embedding::normalize(vec![1.0; dim])
}

impl Embedder for PixelStatsEmbedder {
    fn dim(&self) -> usize {
        PIXEL_STATS_SIDE * PIXEL_STATS_SIDE
    }

    fn embed_image(&self, img: &GrayImage) -> Result<Embedding> {
        let thumb = area_resize(img, PIXEL_STATS_SIDE, PIXEL_STATS_SIDE);
        let mean = thumb.iter().sum::<f64>() / thumb.len() as f64;
        let centred: Vec<f64> = thumb.iter().map(|v| v - mean).collect();
        if centred.iter().all(|v| v.abs() < 1e-12) {
            return uniform(self.dim());
        }
        Embedding::normalize(centred)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        let padded: Vec<char> = format!("  {}  ", text.to_lowercase()).chars().collect();
        let mut v = vec![0.0; self.dim()];
        for tri in padded.windows(3) {
            let s: String = tri.iter().collect();
            let h = fnv1a(s.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim() as u64) as usize] += sign;
        }
        if v.iter().all(|&x| x == 0.0) {
            return uniform(self.dim());
        }
        Embedding::normalize(v)
    }
}
