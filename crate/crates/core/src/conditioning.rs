//! Synthetic prompt conditioning and alignment scoring.

use crate::error::Result;
use crate::latent::Latent;

/// A prompt reduced to a latent-shaped concept direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub prompt: String,
    pub embedding: Latent,
}

/// Scores how well a latent expresses the conditioning, in `[-1, 1]`.
pub trait AlignmentScorer: Send + Sync {
    fn score(&self, latent: &Latent, cond: &Conditioning) -> Result<f64>;
}

/// Cosine between the flattened latent and the conditioning embedding.
///
/// A zero-norm input scores 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineScorer;

impl AlignmentScorer for CosineScorer {
    fn score(&self, latent: &Latent, cond: &Conditioning) -> Result<f64> {
        Ok(latent.cosine(&cond.embedding)?.unwrap_or(0.0))
    }
}

/// Always returns the same score.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl AlignmentScorer for ConstantScorer {
    fn score(&self, _latent: &Latent, _cond: &Conditioning) -> Result<f64> {
        Ok(self.0)
    }
}
