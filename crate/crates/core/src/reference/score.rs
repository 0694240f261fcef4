//! Composite reference scoring and selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::{alignment_h1, novelty_h2, Embedding, VectorIndex};
use super::phash::uniqueness_h3;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDAS: [f64; 3] = [0.3, 0.4, 0.3];

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub embedding: Embedding,
    pub phash: u64,
    pub source: String,
    /// Unknown when the source does not report it.
    pub upload_year: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub total: f64,
    pub lambdas: [f64; 3],
}

impl CandidateScore {
    pub fn from_parts(h1: f64, h2: f64, h3: f64, lambdas: [f64; 3]) -> Self {
        Self {
            h1,
            h2,
            h3,
            total: lambdas[0] * h1 + lambdas[1] * h2 + lambdas[2] * h3,
            lambdas,
        }
    }
}

/// Index of the highest total; the first wins ties.
pub fn argmax_total(scores: &[CandidateScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s.total > scores[b].total) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub winner: usize,
    pub scores: Vec<CandidateScore>,
}

pub fn score_candidate(
    c: &Candidate,
    g: &Embedding,
    index: &VectorIndex,
    corpus: &[u64],
    lambdas: [f64; 3],
) -> Result<CandidateScore> {
    Ok(CandidateScore::from_parts(
        alignment_h1(&c.embedding, g)?,
        novelty_h2(&c.embedding, index)?,
        uniqueness_h3(c.phash, corpus)?,
        lambdas,
    ))
}

pub fn composite_select(
    candidates: &[Candidate],
    g: &Embedding,
    index: &VectorIndex,
    corpus: &[u64],
    lambdas: [f64; 3],
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::param("lambdas must be finite and non-negative"));
    }
    let scores = candidates
        .par_iter()
        .map(|c| score_candidate(c, g, index, corpus, lambdas))
        .collect::<Result<Vec<_>>>()?;
    let winner = argmax_total(&scores).expect("non-empty");
    Ok(Selection { winner, scores })
}
