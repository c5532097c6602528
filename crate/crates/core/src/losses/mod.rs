//! Loss functions with analytic gradients.
//!
//! Every loss returns a [`LossResult`] carrying its value and the gradients
//! with respect to whichever inputs it depends on. Mining indices, cluster
//! assignments and class centers are constants during differentiation.

mod center;
mod magnet;
mod softmax;
mod triplet;

pub use center::{center_loss, tcl_loss, update_centers, ClassCenters};
pub use magnet::{assign_magnet_clusters, magnet_loss, MagnetConfig};
pub use softmax::softmax_ce;
pub use triplet::{softplus, triplet_loss, MarginMode};

use crate::error::{Error, Result};
use crate::tensor::DenseArray;

/// Paper defaults: triplet weight and margin.
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_MARGIN: f64 = 0.2;
/// Center-loss baseline weighting and center learning rate.
pub const CENTER_LAMBDA: f64 = 0.003;
pub const CENTER_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossResult {
    pub value: f64,
    pub grad_embeddings: Option<DenseArray>,
    pub grad_logits: Option<DenseArray>,
    pub grad_centers: Option<DenseArray>,
}

impl LossResult {
    pub fn value_only(value: f64) -> Self {
        Self { value, ..Default::default() }
    }
}

fn combine(
    a: Option<&DenseArray>,
    b: Option<&DenseArray>,
    scale_a: f64,
    scale_b: f64,
) -> Result<Option<DenseArray>> {
    Ok(match (a, b) {
        (None, None) => None,
        (Some(x), None) => {
            let mut x = x.clone();
            x.scale(scale_a);
            Some(x)
        }
        (None, Some(y)) => {
            let mut y = y.clone();
            y.scale(scale_b);
            Some(y)
        }
        (Some(x), Some(y)) => {
            let mut x = x.clone();
            x.scale(scale_a);
            x.add_scaled(y, scale_b)?;
            Some(x)
        }
    })
}

/// `L_soft + lambda * L_embed`, gradients combined the same way.
pub fn combined_loss(
    softmax_part: &LossResult,
    embedding_part: &LossResult,
    lambda: f64,
) -> Result<LossResult> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(LossResult {
        value: softmax_part.value + lambda * embedding_part.value,
        grad_embeddings: combine(
            softmax_part.grad_embeddings.as_ref(),
            embedding_part.grad_embeddings.as_ref(),
            1.0,
            lambda,
        )?,
        grad_logits: combine(
            softmax_part.grad_logits.as_ref(),
            embedding_part.grad_logits.as_ref(),
            1.0,
            lambda,
        )?,
        grad_centers: combine(
            softmax_part.grad_centers.as_ref(),
            embedding_part.grad_centers.as_ref(),
            1.0,
            lambda,
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_examples() {
        let soft = LossResult::value_only(1.0);
        let tri = LossResult::value_only(0.3);
        let cen = LossResult::value_only(2.0);
        assert_eq!(combined_loss(&soft, &tri, 0.0).unwrap().value, 1.0);
        assert!((combined_loss(&soft, &tri, 1.0).unwrap().value - 1.3).abs() < 1e-15);
        assert!(
            (combined_loss(&soft, &cen, CENTER_LAMBDA).unwrap().value - 1.006).abs() < 1e-15
        );
        assert!(combined_loss(&soft, &tri, -1.0).is_err());
    }

    #[test]
    fn combined_is_linear_in_lambda() {
        let g = DenseArray::from_vec(vec![1.0, -2.0]).unwrap();
        let soft = LossResult { value: 0.7, grad_logits: Some(g.clone()), ..Default::default() };
        let emb = LossResult { value: 0.25, grad_embeddings: Some(g), ..Default::default() };
        let v = |l: f64| combined_loss(&soft, &emb, l).unwrap().value;
        assert!((v(0.5) + v(1.5) - 2.0 * soft.value - (v(2.0) - soft.value)).abs() < 1e-12);
        let c = combined_loss(&soft, &emb, 0.5).unwrap();
        assert_eq!(c.grad_embeddings.unwrap().data(), &[0.5, -1.0]);
        assert_eq!(c.grad_logits.unwrap().data(), &[1.0, -2.0]);
    }
}
