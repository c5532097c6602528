use super::LossResult;
use crate::error::{Error, Result};
use crate::geometry::{sq_dist, EmbeddingBatch};
use crate::tensor::DenseArray;

/// Per-class center vectors maintained by a moving average with rate `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters {
    centers: DenseArray,
    alpha: f64,
    counts: Vec<u64>,
}

impl ClassCenters {
    /// `n_classes` centers at the origin.
    pub fn zeros(n_classes: usize, dim: usize, alpha: f64) -> Result<Self> {
        Self::new(DenseArray::zeros(vec![n_classes, dim]), alpha)
    }

    pub fn new(centers: DenseArray, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
        }
        if centers.shape().len() != 2 || centers.rows() == 0 {
            return Err(Error::ShapeError(format!("centers shape {:?}", centers.shape())));
        }
        let n = centers.rows();
        Ok(Self { centers, alpha, counts: vec![0; n] })
    }

    pub fn n_classes(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn center(&self, class: usize) -> &[f64] {
        self.centers.row(class)
    }

    pub fn centers(&self) -> &DenseArray {
        &self.centers
    }

    /// Number of samples that have contributed to each center's updates.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    fn check(&self, batch: &EmbeddingBatch) -> Result<()> {
        if batch.dim() != self.dim() {
            return Err(Error::ShapeError(format!(
                "feature dim {} vs center dim {}",
                batch.dim(),
                self.dim()
            )));
        }
        match batch.labels().iter().find(|&&y| y >= self.n_classes()) {
            Some(&y) => Err(Error::UnknownClass(y)),
            None => Ok(()),
        }
    }

    /// For each class `j` in the batch:
    /// `c_j -= alpha * sum_{y_i = j}(c_j - x_i) / (1 + n_j)`.
    pub fn update(&mut self, batch: &EmbeddingBatch) -> Result<()> {
        self.check(batch)?;
        let d = self.dim();
        let n = self.n_classes();
        let mut delta = vec![0.0; n * d];
        let mut members = vec![0u64; n];
        for (i, &y) in batch.labels().iter().enumerate() {
            members[y] += 1;
            let c = self.centers.row(y);
            for (k, x) in batch.row(i).iter().enumerate() {
                delta[y * d + k] += c[k] - x;
            }
        }
        for j in 0..n {
            if members[j] == 0 {
                continue;
            }
            let denom = 1.0 + members[j] as f64;
            let alpha = self.alpha;
            for (c, dl) in self.centers.row_mut(j).iter_mut().zip(&delta[j * d..(j + 1) * d]) {
                *c -= alpha * dl / denom;
            }
            self.counts[j] += members[j];
        }
        Ok(())
    }
}

/// Functional form of [`ClassCenters::update`].
pub fn update_centers(centers: &ClassCenters, batch: &EmbeddingBatch) -> Result<ClassCenters> {
    let mut next = centers.clone();
    next.update(batch)?;
    Ok(next)
}

/// `1/2 * sum_i ||x_i - c_{y_i}||^2`, summed over the batch.
pub fn center_loss(batch: &EmbeddingBatch, centers: &ClassCenters) -> Result<LossResult> {
    centers.check(batch)?;
    let (b, d) = (batch.len(), batch.dim());
    let mut grad = DenseArray::zeros(vec![b, d]);
    let mut grad_centers = DenseArray::zeros(vec![centers.n_classes(), d]);
    let mut total = 0.0;
    for (i, &y) in batch.labels().iter().enumerate() {
        let x = batch.row(i);
        let c = centers.center(y);
        total += 0.5 * sq_dist(x, c);
        for k in 0..d {
            let diff = x[k] - c[k];
            grad.row_mut(i)[k] = diff;
            grad_centers.row_mut(y)[k] -= diff;
        }
    }
    Ok(LossResult {
        value: total,
        grad_embeddings: Some(grad),
        grad_centers: Some(grad_centers),
        ..Default::default()
    })
}

/// Triplet-center loss, summed over the batch:
/// `sum_i max(0, D(x_i, c_{y_i}) - min_{j != y_i} D(x_i, c_j) + m)`.
/// The minimum ranges over the centers of the other classes.
pub fn tcl_loss(batch: &EmbeddingBatch, centers: &ClassCenters, margin: f64) -> Result<LossResult> {
    if centers.n_classes() < 2 {
        return Err(Error::NeedTwoClasses);
    }
    centers.check(batch)?;
    let (b, d) = (batch.len(), batch.dim());
    let mut grad = DenseArray::zeros(vec![b, d]);
    let mut total = 0.0;
    for (i, &y) in batch.labels().iter().enumerate() {
        let x = batch.row(i);
        let own = sq_dist(x, centers.center(y));
        let (nearest, other) = (0..centers.n_classes())
            .filter(|&j| j != y)
            .map(|j| (j, sq_dist(x, centers.center(j))))
            .fold((usize::MAX, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        let z = own - other + margin;
        if z > 0.0 {
            total += z;
            let (cy, cj) = (centers.center(y), centers.center(nearest));
            let g = grad.row_mut(i);
            for k in 0..d {
                g[k] = 2.0 * (cj[k] - cy[k]);
            }
        }
    }
    Ok(LossResult { value: total, grad_embeddings: Some(grad), ..Default::default() })
}
