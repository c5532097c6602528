//! Embedding-space primitives: unit-sphere normalization and squared
//! Euclidean distance matrices.

use crate::error::{Error, Result};
use crate::tensor::DenseArray;

pub const DEFAULT_NORM_EPSILON: f64 = 1e-12;

/// A `b x d` batch of embedding vectors with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    vectors: DenseArray,
    labels: Vec<usize>,
    normalized: bool,
}

impl EmbeddingBatch {
    pub fn new(vectors: DenseArray, labels: Vec<usize>) -> Result<Self> {
        if vectors.shape().len() != 2 {
            return Err(Error::ShapeError(format!(
                "embedding batch must be 2-D, got {:?}",
                vectors.shape()
            )));
        }
        let (b, d) = (vectors.rows(), vectors.cols());
        if b == 0 || d == 0 {
            return Err(Error::ShapeError(format!("empty embedding batch {b}x{d}")));
        }
        if labels.len() != b {
            return Err(Error::ShapeError(format!("{b} rows but {} labels", labels.len())));
        }
        Ok(Self { vectors, labels, normalized: false })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        Self::new(DenseArray::from_rows(rows)?, labels)
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &DenseArray {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Same labels, replaced vectors; the normalized flag is cleared.
    pub fn with_vectors(&self, vectors: DenseArray) -> Result<Self> {
        Self::new(vectors, self.labels.clone())
    }
}

/// Result of [`l2_normalize`]: the unit-norm batch plus the number of rows
/// whose norm fell below epsilon.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub batch: EmbeddingBatch,
    pub collapsed: usize,
}

/// Divides `v` in place by `max(||v||, epsilon)`; returns the original norm.
pub fn normalize_in_place(v: &mut [f64], epsilon: f64) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm.max(epsilon);
    v.iter_mut().for_each(|x| *x /= denom);
    norm
}

pub fn l2_normalize(batch: &EmbeddingBatch, epsilon: f64) -> Normalized {
    let mut vectors = batch.vectors.clone();
    let mut collapsed = 0;
    for i in 0..vectors.rows() {
        if normalize_in_place(vectors.row_mut(i), epsilon) < epsilon {
            collapsed += 1;
        }
    }
    Normalized {
        batch: EmbeddingBatch { vectors, labels: batch.labels.clone(), normalized: true },
        collapsed,
    }
}

/// Symmetric `b x b` matrix of squared Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Builds a matrix from explicit values after checking symmetry, a zero
    /// diagonal and non-negativity.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeError(format!("{} values for {n}x{n}", values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::ShapeError(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(v >= 0.0) || v != values[j * n + i] {
                    return Err(Error::ShapeError(format!("invalid entry ({i},{j})")));
                }
            }
        }
        Ok(Self { n, values })
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn pairwise_sq_distances(batch: &EmbeddingBatch) -> Result<DistanceMatrix> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: n });
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(batch.row(i), batch.row(j));
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, values })
}
