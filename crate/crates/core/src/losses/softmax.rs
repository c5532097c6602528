use super::LossResult;
use crate::error::{Error, Result};
use crate::tensor::DenseArray;

/// Mean softmax cross-entropy over a `b x n` logits matrix.
pub fn softmax_ce(logits: &DenseArray, labels: &[usize]) -> Result<LossResult> {
    if logits.shape().len() != 2 {
        return Err(Error::ShapeError(format!("logits must be 2-D, got {:?}", logits.shape())));
    }
    let (b, n) = (logits.rows(), logits.cols());
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 classes, got {n}")));
    }
    if labels.len() != b || b == 0 {
        return Err(Error::ShapeError(format!("{b} logit rows vs {} labels", labels.len())));
    }
    let mut grad = DenseArray::zeros(vec![b, n]);
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= n {
            return Err(Error::InvalidLabel { label: y, n_classes: n });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        total += -(row[y] - max - log_sum);
        let g = grad.row_mut(i);
        for (j, z) in row.iter().enumerate() {
            let p = (z - max - log_sum).exp();
            g[j] = (p - if j == y { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok(LossResult { value: total * inv_b, grad_logits: Some(grad), ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, relative_error, SeededRng};

    #[test]
    fn uniform_logits_give_log_n() {
        let logits = DenseArray::from_rows(&[vec![0.3; 4]]).unwrap();
        let r = softmax_ce(&logits, &[2]).unwrap();
        assert!((r.value - 4f64.ln()).abs() < 1e-12);
        assert!((r.value - 1.38629).abs() < 1e-5);
    }

    #[test]
    fn saturated_and_mixed_batches() {
        let saturated = DenseArray::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        assert!(softmax_ce(&saturated, &[0]).unwrap().value.abs() < 1e-12);
        let mixed = DenseArray::from_rows(&[vec![0.0; 4], vec![1000.0, 0.0, 0.0, 0.0]]).unwrap();
        let r = softmax_ce(&mixed, &[1, 0]).unwrap();
        assert!((r.value - 4f64.ln() / 2.0).abs() < 1e-12);
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-5);
    }

    #[test]
    fn label_out_of_range() {
        let logits = DenseArray::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(
            softmax_ce(&logits, &[2]).unwrap_err(),
            Error::InvalidLabel { label: 2, n_classes: 2 }
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(3);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| 2.0 * rng.normal()).collect()).collect();
            let labels: Vec<usize> = (0..5).map(|_| rng.below(4)).collect();
            let logits = DenseArray::from_rows(&rows).unwrap();
            let analytic = softmax_ce(&logits, &labels).unwrap().grad_logits.unwrap();
            let numeric =
                finite_diff_grad(|z| softmax_ce(z, &labels).unwrap().value, &logits, 1e-5).unwrap();
            assert!(relative_error(analytic.data(), numeric.data()) < 1e-6);
        }
    }
}
