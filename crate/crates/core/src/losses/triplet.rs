use serde::{Deserialize, Serialize};

use super::LossResult;
use crate::error::{Error, Result};
use crate::geometry::{DistanceMatrix, EmbeddingBatch};
use crate::mining::TripletSet;
use crate::tensor::DenseArray;

/// How the triplet violation `D(a,p) - D(a,n)` is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MarginMode {
    /// `max(0, D(a,p) - D(a,n) + m)`.
    Hard { margin: f64 },
    /// `ln(1 + exp(D(a,p) - D(a,n)))`, no additive margin.
    Soft,
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean triplet loss over `triplets`; gradients are taken with respect to the
/// rows of `batch`, from which `dists` must have been computed.
pub fn triplet_loss(
    batch: &EmbeddingBatch,
    dists: &DistanceMatrix,
    triplets: &TripletSet,
    mode: MarginMode,
) -> Result<LossResult> {
    if triplets.is_empty() {
        return Err(Error::EmptyTripletSet);
    }
    if dists.len() != batch.len() {
        return Err(Error::ShapeError(format!(
            "distance matrix {} vs batch {}",
            dists.len(),
            batch.len()
        )));
    }
    if let MarginMode::Hard { margin } = mode {
        if !(margin >= 0.0) {
            return Err(Error::InvalidConfig(format!("margin must be >= 0, got {margin}")));
        }
    }
    let b = batch.len();
    let d = batch.dim();
    let scale = 1.0 / triplets.len() as f64;
    let mut grad = DenseArray::zeros(vec![b, d]);
    let mut total = 0.0;
    for t in &triplets.triplets {
        if t.anchor >= b || t.positive >= b || t.negative >= b {
            return Err(Error::ShapeError(format!("triplet {t:?} out of range {b}")));
        }
        let gap = dists.get(t.anchor, t.positive) - dists.get(t.anchor, t.negative);
        let (value, slope) = match mode {
            MarginMode::Hard { margin } => {
                let z = gap + margin;
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            MarginMode::Soft => (softplus(gap), sigmoid(gap)),
        };
        total += value;
        if slope == 0.0 {
            continue;
        }
        let c = 2.0 * slope * scale;
        let (va, vp, vn) = (batch.row(t.anchor), batch.row(t.positive), batch.row(t.negative));
        // d gap / d a = 2(n - p), d gap / d p = 2(p - a), d gap / d n = 2(a - n)
        let data = grad.data_mut();
        for k in 0..d {
            data[t.anchor * d + k] += c * (vn[k] - vp[k]);
            data[t.positive * d + k] += c * (vp[k] - va[k]);
            data[t.negative * d + k] += c * (va[k] - vn[k]);
        }
    }
    Ok(LossResult { value: total * scale, grad_embeddings: Some(grad), ..Default::default() })
}
