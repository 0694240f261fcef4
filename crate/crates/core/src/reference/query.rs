//! Picking the query word for retrieval from prompt attention.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spatial::AttentionStack;

/// Retrieval query words should carry meaning; these never do.
const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did",
    "do", "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have",
    "having", "he", "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "me", "more", "most", "my", "no", "nor", "not", "of", "off", "on", "once", "only",
    "or", "other", "our", "ours", "out", "over", "own", "same", "she", "should", "so", "some", "such",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "through",
    "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your",
];

pub const DEFAULT_QUERY_K: usize = 3;

/// Ranked query words and the one drawn for retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryWords {
    pub ranked: Vec<(String, f64)>,
    pub chosen: String,
}

fn clean_word(word: &str) -> Option<String> {
    let trimmed = word.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        return None;
    }
    let lower = trimmed.to_lowercase();
    if STOPWORDS.contains(&lower.as_str()) {
        return None;
    }
    Some(trimmed.to_string())
}

/// Per-token importance: head- and query-averaged attention summed over entries.
pub fn token_scores(stack: &AttentionStack) -> Vec<f64> {
    let mut scores = vec![0.0; stack.token_count()];
    for entry in stack.entries() {
        let denom = (entry.heads() * entry.queries()) as f64;
        for (tok, score) in scores.iter_mut().enumerate() {
            let mut sum = 0.0;
            for h in 0..entry.heads() {
                for q in 0..entry.queries() {
                    sum += entry.get(h, q, tok);
                }
            }
            *score += sum / denom;
        }
    }
    scores
}

/// Word scores in prompt order, summing the tokens of each word.
pub fn word_scores(stack: &AttentionStack, words: &[String]) -> Result<Vec<(String, f64)>> {
    let mut scores = vec![0.0; words.len()];
    for (tok, s) in token_scores(stack).into_iter().enumerate() {
        if let Some(w) = stack.token_words()[tok] {
            let slot = scores
                .get_mut(w)
                .ok_or_else(|| Error::input(format!("token {tok} maps to word {w} beyond {} words", words.len())))?;
            *slot += s;
        }
    }
    Ok(words.iter().cloned().zip(scores).collect())
}

/// Drops stopwords and punctuation, then keeps the `k` best (earlier word wins ties).
pub fn rank_words(scores: &[(String, f64)], k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let mut kept: Vec<(String, f64)> = scores
        .iter()
        .filter_map(|(w, s)| clean_word(w).map(|w| (w, *s)))
        .collect();
    if kept.is_empty() {
        return Err(Error::NoQuery);
    }
    kept.sort_by(|a, b| b.1.total_cmp(&a.1));
    kept.truncate(k);
    Ok(kept)
}

pub fn extract_query_words(stack: &AttentionStack, words: &[String], k: usize, seed: u64) -> Result<QueryWords> {
    let ranked = rank_words(&word_scores(stack, words)?, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = ranked.choose(&mut rng).expect("ranking is non-empty").0.clone();
    Ok(QueryWords { ranked, chosen })
}
