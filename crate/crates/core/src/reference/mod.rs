//! Reference image selection: query words, retrieval, and h1/h2/h3 scoring.

pub mod embed;
pub mod fetch;
pub mod index;
pub mod phash;
pub mod query;
pub mod score;

pub use embed::{Embedder, PixelStatsEmbedder};
pub use fetch::{fetch_candidates, Source};
pub use index::{alignment_h1, novelty_h2, Embedding, VectorIndex};
pub use phash::{hamming, phash64, uniqueness_h3, GrayImage};
pub use query::{extract_query_words, QueryWords};
pub use score::{composite_select, Candidate, CandidateScore, Selection, DEFAULT_LAMBDAS};
