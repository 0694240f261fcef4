//! Unit-normalized embeddings and the exact flat index over them.

use crate::error::{Error, Result};

/// Tolerance on the L2 norm of an embedding.
pub const UNIT_TOLERANCE: f64 = 1e-6;
/// Looser norm tolerance for rows stored as `f32`.
pub const STORED_UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Accepts an already unit-normalized vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let norm = l2(&values);
        if values.is_empty() || !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::input(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    /// Scales a nonzero vector to unit length.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        let norm = l2(&values);
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(Error::input("cannot normalize a zero or non-finite vector"));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Semantic alignment: cosine of unit vectors.
pub fn alignment_h1(f: &Embedding, g: &Embedding) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::input(format!("embedding dims differ: {} vs {}", f.dim(), g.dim())));
    }
    Ok(f.0.iter().zip(&g.0).map(|(a, b)| a * b).sum())
}

/// Row-major `f32` store of unit vectors, scanned exhaustively.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    rows: Vec<f32>,
}

impl VectorIndex {
    pub fn build(embeddings: &[Embedding]) -> Result<Self> {
        let dim = embeddings
            .first()
            .ok_or_else(|| Error::input("cannot build an empty index"))?
            .dim();
        let mut rows = Vec::with_capacity(dim * embeddings.len());
        for e in embeddings {
            if e.dim() != dim {
                return Err(Error::input(format!("embedding dim {} differs from {dim}", e.dim())));
            }
            rows.extend(e.values().iter().map(|&v| v as f32));
        }
        Ok(Self { dim, rows })
    }

    /// Wraps stored rows, checking shape and unit norms.
    pub fn from_rows(dim: usize, rows: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("index dim must be nonzero"));
        }
        if rows.len() % dim != 0 {
            return Err(Error::input(format!("{} values do not form rows of {dim}", rows.len())));
        }
        for (i, row) in rows.chunks_exact(dim).enumerate() {
            let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > STORED_UNIT_TOLERANCE {
                return Err(Error::input(format!("index row {i} has norm {norm}")));
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Row as an embedding (renormalized in `f64`).
    pub fn embedding(&self, i: usize) -> Result<Embedding> {
        Embedding::normalize(self.row(i).iter().map(|&v| f64::from(v)).collect())
    }

    /// Highest cosine to any row and its position; ties keep the first row.
    pub fn nearest(&self, f: &Embedding) -> Result<(usize, f64)> {
        if self.is_empty() {
            return Err(Error::input("index is empty"));
        }
        if f.dim() != self.dim {
            return Err(Error::input(format!("query dim {} differs from index dim {}", f.dim(), self.dim)));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, row) in self.rows.chunks_exact(self.dim).enumerate() {
            let c: f64 = row.iter().zip(f.values()).map(|(&r, q)| f64::from(r) * q).sum();
            if c > best.1 {
                best = (i, c);
            }
        }
        Ok(best)
    }
}

/// Dataset novelty: one minus the best cosine to any indexed embedding.
pub fn novelty_h2(f: &Embedding, index: &VectorIndex) -> Result<f64> {
    Ok(1.0 - index.nearest(f)?.1)
}
