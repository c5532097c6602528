use super::LossResult;
use crate::error::{Error, Result};
use crate::evaluation::{kmeans, DEFAULT_KMEANS_ITERS};
use crate::geometry::{sq_dist, EmbeddingBatch};
use crate::tensor::{DenseArray, SeededRng};

/// Per-batch cluster structure for the magnet loss: `k_clusters` k-means
/// clusters per class, the cluster of every sample, and the shared variance
/// of samples around their own cluster centers.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnetConfig {
    pub k_clusters: usize,
    pub alpha_margin: f64,
    /// Cluster index (into `centers`) for every sample of the batch.
    pub cluster_assignments: Vec<usize>,
    /// Class owning each cluster.
    pub cluster_class: Vec<usize>,
    pub centers: DenseArray,
    pub variance: f64,
}

/// Runs per-class k-means over the batch features.
pub fn assign_magnet_clusters(
    batch: &EmbeddingBatch,
    k_clusters: usize,
    alpha_margin: f64,
    rng: &mut SeededRng,
) -> Result<MagnetConfig> {
    if k_clusters == 0 {
        return Err(Error::InvalidConfig("k_clusters must be >= 1".into()));
    }
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: n });
    }
    let d = batch.dim();
    let mut classes: Vec<usize> = batch.labels().to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut cluster_assignments = vec![0; n];
    let mut cluster_class = Vec::new();
    let mut center_rows: Vec<f64> = Vec::new();
    for &class in &classes {
        let members: Vec<usize> = (0..n).filter(|&i| batch.labels()[i] == class).collect();
        if members.len() < k_clusters {
            return Err(Error::ClassTooSmall { class, size: members.len(), k: k_clusters });
        }
        let points = DenseArray::new(
            vec![members.len(), d],
            members.iter().flat_map(|&i| batch.row(i).iter().copied()).collect(),
        )?;
        let km = kmeans(&points, k_clusters, rng, DEFAULT_KMEANS_ITERS)?;
        let base = cluster_class.len();
        for (&i, &a) in members.iter().zip(&km.clustering.assignments) {
            cluster_assignments[i] = base + a;
        }
        cluster_class.extend(std::iter::repeat_n(class, k_clusters));
        center_rows.extend_from_slice(km.centers.data());
    }
    let centers = DenseArray::new(vec![cluster_class.len(), d], center_rows)?;
    let sse: f64 = (0..n)
        .map(|i| sq_dist(batch.row(i), centers.row(cluster_assignments[i])))
        .sum();
    Ok(MagnetConfig {
        k_clusters,
        alpha_margin,
        cluster_assignments,
        cluster_class,
        centers,
        variance: sse / (n as f64 - 1.0),
    })
}

/// Mean over samples of
/// `-log( exp(-|x - mu_own|^2 / 2s^2 - a) / sum_{c != class(x)} sum_k exp(-|x - mu_k^c|^2 / 2s^2 - a) )`.
/// `a` appears in both numerator and denominator and so does not change the
/// value. No outer hinge is applied, so the result can be negative.
pub fn magnet_loss(batch: &EmbeddingBatch, config: &MagnetConfig) -> Result<LossResult> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: n });
    }
    if config.cluster_assignments.len() != n || config.centers.cols() != batch.dim() {
        return Err(Error::ShapeError("magnet config does not match batch".into()));
    }
    let mut distinct = config.cluster_class.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::NeedTwoClasses);
    }
    let var = config.variance;
    if !(var >= 1e-12) {
        return Err(Error::DegenerateVariance(var));
    }
    let alpha = config.alpha_margin;
    let d = batch.dim();
    let inv_n = 1.0 / n as f64;
    let mut grad = DenseArray::zeros(vec![n, d]);
    let mut total = 0.0;
    let mut weights = Vec::with_capacity(config.cluster_class.len());
    for i in 0..n {
        let x = batch.row(i);
        let own = config.cluster_assignments[i];
        let class = config.cluster_class[own];
        if batch.labels()[i] != class {
            return Err(Error::InvalidConfig(format!(
                "sample {i} assigned to a cluster of class {class}"
            )));
        }
        let numerator = -sq_dist(x, config.centers.row(own)) / (2.0 * var) - alpha;
        weights.clear();
        for (c, &cls) in config.cluster_class.iter().enumerate() {
            if cls != class {
                let t = -sq_dist(x, config.centers.row(c)) / (2.0 * var) - alpha;
                weights.push((c, t));
            }
        }
        let max = weights.iter().map(|w| w.1).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = weights.iter().map(|w| (w.1 - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - numerator;

        // d/dx [|x - mu_own|^2 / 2s^2] - sum_c w_c (x - mu_c) / s^2
        let g = grad.row_mut(i);
        let mu = config.centers.row(own);
        for k in 0..d {
            g[k] = (x[k] - mu[k]) / var;
        }
        for &(c, t) in &weights {
            let w = (t - lse).exp();
            let mu = config.centers.row(c);
            for k in 0..d {
                g[k] -= w * (x[k] - mu[k]) / var;
            }
        }
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(LossResult { value: total * inv_n, grad_embeddings: Some(grad), ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(points: &[f64], labels: Vec<usize>) -> EmbeddingBatch {
        let rows: Vec<Vec<f64>> = points.iter().map(|&p| vec![p]).collect();
        EmbeddingBatch::from_rows(&rows, labels).unwrap()
    }

    /// Direct scalar evaluation for K = 1 in one dimension.
    fn scalar_magnet(points: &[f64], labels: &[usize], alpha: f64) -> f64 {
        let n = points.len();
        let mean = |c: usize| {
            let v: Vec<f64> = (0..n).filter(|&i| labels[i] == c).map(|i| points[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let classes: Vec<usize> = {
            let mut c = labels.to_vec();
            c.sort_unstable();
            c.dedup();
            c
        };
        let var = (0..n).map(|i| (points[i] - mean(labels[i])).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let mut total = 0.0;
        for i in 0..n {
            let num = (-(points[i] - mean(labels[i])).powi(2) / (2.0 * var) - alpha).exp();
            let den: f64 = classes
                .iter()
                .filter(|&&c| c != labels[i])
                .map(|&c| (-(points[i] - mean(c)).powi(2) / (2.0 * var) - alpha).exp())
                .sum();
            total += -(num / den).ln();
        }
        total / n as f64
    }

    #[test]
    fn worked_example() {
        let points = [0.0, 2.0, 10.0, 12.0];
        let labels = vec![0, 0, 1, 1];
        let oracle = scalar_magnet(&points, &labels, 0.0);
        assert!((oracle - -37.5).abs() < 1e-9);
        let batch = one_d(&points, labels);
        let cfg = assign_magnet_clusters(&batch, 1, 0.0, &mut SeededRng::new(0)).unwrap();
        assert!((cfg.variance - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(cfg.centers.data(), &[1.0, 11.0]);
        let r = magnet_loss(&batch, &cfg).unwrap();
        assert!((r.value - -37.5).abs() < 1e-9);
    }

    #[test]
    fn alpha_cancels() {
        let batch = one_d(&[0.0, 2.0, 10.0, 12.0, 5.0, 6.5], vec![0, 0, 1, 1, 2, 2]);
        let mut cfg = assign_magnet_clusters(&batch, 1, 0.0, &mut SeededRng::new(0)).unwrap();
        let base = magnet_loss(&batch, &cfg).unwrap().value;
        cfg.alpha_margin = 1.0;
        assert!((magnet_loss(&batch, &cfg).unwrap().value - base).abs() < 1e-9);
    }

    #[test]
    fn degenerate_and_single_class() {
        let at_centers = one_d(&[1.0, 1.0, 5.0, 5.0], vec![0, 0, 1, 1]);
        let cfg = assign_magnet_clusters(&at_centers, 1, 0.0, &mut SeededRng::new(0)).unwrap();
        assert!(matches!(magnet_loss(&at_centers, &cfg), Err(Error::DegenerateVariance(_))));

        let single = one_d(&[0.0, 1.0, 2.0], vec![4, 4, 4]);
        let cfg = assign_magnet_clusters(&single, 1, 0.0, &mut SeededRng::new(0)).unwrap();
        assert_eq!(magnet_loss(&single, &cfg).unwrap_err(), Error::NeedTwoClasses);

        let tiny = one_d(&[0.0], vec![0]);
        assert!(matches!(
            assign_magnet_clusters(&tiny, 1, 0.0, &mut SeededRng::new(0)),
            Err(Error::BatchTooSmall { .. })
        ));
    }

    #[test]
    fn k1_uses_class_means() {
        let batch = one_d(&[1.0, 2.0, 6.0, -4.0, -3.0], vec![0, 0, 0, 1, 1]);
        let cfg = assign_magnet_clusters(&batch, 1, 0.0, &mut SeededRng::new(9)).unwrap();
        assert_eq!(cfg.centers.data(), &[3.0, -3.5]);
        assert_eq!(cfg.cluster_assignments, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn k2_splits_separated_pairs() {
        // class 0: pairs {0, 0.1} and {5, 5.1}; best 2-partition by brute force
        let pts = [0.0, 5.0, 0.1, 5.1];
        let best = (1u32..(1 << 4) - 1)
            .map(|mask| {
                let sse = |side: bool| {
                    let g: Vec<f64> = (0..4).filter(|&i| (mask >> i & 1 == 1) == side).map(|i| pts[i]).collect();
                    let m = g.iter().sum::<f64>() / g.len() as f64;
                    g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
                };
                (sse(true) + sse(false), mask)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        let batch = one_d(&[0.0, 5.0, 0.1, 5.1, 20.0, 21.0], vec![0, 0, 0, 0, 1, 1]);
        let cfg = assign_magnet_clusters(&batch, 2, 0.0, &mut SeededRng::new(1)).unwrap();
        let a = &cfg.cluster_assignments;
        for i in 0..4 {
            for j in 0..4 {
                let same_oracle = (best.1 >> i & 1) == (best.1 >> j & 1);
                assert_eq!(a[i] == a[j], same_oracle);
            }
        }
    }

    #[test]
    fn class_too_small() {
        let batch = one_d(&[0.0, 1.0, 2.0], vec![0, 0, 1]);
        assert_eq!(
            assign_magnet_clusters(&batch, 2, 0.0, &mut SeededRng::new(0)).unwrap_err(),
            Error::ClassTooSmall { class: 1, size: 1, k: 2 }
        );
    }

    #[test]
    fn symmetric_under_class_swap() {
        let pts = [-3.0, -1.0, -2.5, 3.0, 1.0, 2.5];
        let a = one_d(&pts, vec![0, 0, 0, 1, 1, 1]);
        let b = one_d(&pts, vec![1, 1, 1, 0, 0, 0]);
        let va = magnet_loss(&a, &assign_magnet_clusters(&a, 1, 1.0, &mut SeededRng::new(0)).unwrap()).unwrap();
        let vb = magnet_loss(&b, &assign_magnet_clusters(&b, 1, 1.0, &mut SeededRng::new(0)).unwrap()).unwrap();
        assert!((va.value - vb.value).abs() < 1e-12);
    }
}
