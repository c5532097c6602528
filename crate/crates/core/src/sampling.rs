//! Training-batch construction: the balanced P-classes-by-K-samples sampler
//! and the pooled semi-hard procedure used for imbalanced data.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{pairwise_sq_distances, EmbeddingBatch};
use crate::mining::{mine_semi_hard_strict, Strategy, Triplet, TripletSet};
use crate::tensor::SeededRng;

/// Sample ids grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    per_class: Vec<Vec<usize>>,
    labels: Vec<usize>,
}

impl DatasetIndex {
    pub fn new(labels: &[usize], n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut per_class = vec![Vec::new(); n_classes];
        for (id, &y) in labels.iter().enumerate() {
            if y >= n_classes {
                return Err(Error::InvalidLabel { label: y, n_classes });
            }
            per_class[y].push(id);
        }
        Ok(Self { per_class, labels: labels.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn class_ids(&self, class: usize) -> &[usize] {
        &self.per_class[class]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }

    pub fn label(&self, id: usize) -> usize {
        self.labels[id]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn nonempty_classes(&self) -> Vec<usize> {
        (0..self.n_classes()).filter(|&c| !self.per_class[c].is_empty()).collect()
    }
}

/// Sample ids of one batch with the class each slot was drawn for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub ids: Vec<usize>,
    pub classes: Vec<usize>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `b / k` distinct classes drawn uniformly, `k` samples from each. Classes
/// with fewer than `k` samples contribute every sample once and fill the rest
/// by drawing with replacement.
pub fn pk_sample(index: &DatasetIndex, b: usize, k: usize, rng: &mut SeededRng) -> Result<BatchPlan> {
    if k == 0 || b == 0 || !b.is_multiple_of(k) {
        return Err(Error::IndivisibleBatch { b, k });
    }
    let p = b / k;
    let classes = index.nonempty_classes();
    if classes.len() < p {
        return Err(Error::NotEnoughClasses { needed: p, available: classes.len() });
    }
    let mut plan = BatchPlan { ids: Vec::with_capacity(b), classes: Vec::with_capacity(b) };
    for pick in rng.sample_without_replacement(classes.len(), p) {
        let class = classes[pick];
        let members = index.class_ids(class);
        if members.len() >= k {
            plan.ids.extend(rng.sample_without_replacement(members.len(), k).into_iter().map(|i| members[i]));
        } else {
            plan.ids.extend_from_slice(members);
            for _ in members.len()..k {
                plan.ids.push(members[rng.below(members.len())]);
            }
        }
        plan.classes.extend(std::iter::repeat_n(class, k));
    }
    Ok(plan)
}

/// `b` ids drawn uniformly without replacement (with replacement if the
/// dataset is smaller than `b`), so classes appear at their natural rates.
pub fn uniform_sample(index: &DatasetIndex, b: usize, rng: &mut SeededRng) -> Result<BatchPlan> {
    if b == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let n = index.len();
    let ids: Vec<usize> = if n >= b {
        rng.sample_without_replacement(n, b)
    } else {
        (0..b).map(|_| rng.below(n)).collect()
    };
    let classes = ids.iter().map(|&i| index.label(i)).collect();
    Ok(BatchPlan { ids, classes })
}

/// Result of one pooled semi-hard round.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalancedRound {
    /// Triplets indexing into `ids`.
    pub triplets: TripletSet,
    /// Distinct sample ids used by the triplets, at most `b`.
    pub ids: Vec<usize>,
    /// Sample ids of the embedded pool.
    pub pool: Vec<usize>,
    /// Positive pairs of the pool with no semi-hard negative.
    pub skipped_pairs: usize,
    /// Triplets found before truncation to `b / 3`.
    pub found: usize,
}

/// Pools `n_b` uniform batches of size `b`, embeds them with `embed_fn`, keeps
/// the nearest semi-hard negative of every positive pair (pairs without one
/// are skipped), and keeps a random `b / 3` of those triplets when more exist.
///
/// The `n_b` batches are drawn jointly without replacement, so the pool holds
/// `min(N, n_b * b)` distinct samples.
pub fn imbalanced_round<F>(
    index: &DatasetIndex,
    b: usize,
    n_b: usize,
    mut embed_fn: F,
    margin: f64,
    rng: &mut SeededRng,
) -> Result<ImbalancedRound>
where
    F: FnMut(&[usize]) -> Result<EmbeddingBatch>,
{
    if b < 3 || n_b == 0 {
        return Err(Error::InvalidConfig(format!("need b >= 3 and n_b >= 1, got b={b}, n_b={n_b}")));
    }
    let n = index.len();
    let pool = rng.sample_without_replacement(n, n.min(n_b * b));
    let pool_labels: Vec<usize> = pool.iter().map(|&i| index.label(i)).collect();
    if pool.len() < 2 {
        return Err(Error::EmptyTripletSet);
    }
    let embedded = embed_fn(&pool)?;
    if embedded.len() != pool.len() || embedded.labels() != pool_labels.as_slice() {
        return Err(Error::ShapeError("embed_fn must return one labeled row per pool id".into()));
    }
    let dists = pairwise_sq_distances(&embedded)?;
    let (mined, skipped_pairs) = mine_semi_hard_strict(&dists, &pool_labels, margin)?;
    let found = mined.len();
    let mut chosen = mined.triplets;
    if chosen.len() > b / 3 {
        rng.shuffle(&mut chosen);
        chosen.truncate(b / 3);
    }

    let mut position: HashMap<usize, usize> = HashMap::new();
    let mut ids = Vec::new();
    let mut local = |pool_idx: usize| -> usize {
        let id = pool[pool_idx];
        *position.entry(id).or_insert_with(|| {
            ids.push(id);
            ids.len() - 1
        })
    };
    let triplets = chosen
        .iter()
        .map(|t| Triplet::new(local(t.anchor), local(t.positive), local(t.negative)))
        .collect();
    Ok(ImbalancedRound {
        triplets: TripletSet { triplets, strategy: Strategy::SemiHard },
        ids,
        pool,
        skipped_pairs,
        found,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::{classify_negative, NegativeKind};
    use crate::tensor::DenseArray;

    fn index(counts: &[usize]) -> DatasetIndex {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        DatasetIndex::new(&labels, counts.len()).unwrap()
    }

    #[test]
    fn index_partitions_ids() {
        let idx = DatasetIndex::new(&[1, 0, 1, 2], 4).unwrap();
        assert_eq!(idx.class_ids(1), &[0, 2]);
        assert_eq!(idx.class_counts(), vec![1, 2, 1, 0]);
        assert!(DatasetIndex::new(&[5], 2).is_err());
    }

    #[test]
    fn pk_shape() {
        let idx = index(&[10; 12]);
        let plan = pk_sample(&idx, 32, 4, &mut SeededRng::new(0)).unwrap();
        assert_eq!(plan.len(), 32);
        let mut hist: HashMap<usize, usize> = HashMap::new();
        for &id in &plan.ids {
            *hist.entry(idx.label(id)).or_default() += 1;
        }
        assert_eq!(hist.len(), 8);
        assert!(hist.values().all(|&c| c == 4));
        for chunk in plan.ids.chunks(4) {
            let mut c = chunk.to_vec();
            c.sort_unstable();
            c.dedup();
            assert_eq!(c.len(), 4, "drawn without replacement");
        }
    }

    #[test]
    fn pk_small_class_repeats() {
        let idx = index(&[2]);
        let plan = pk_sample(&idx, 4, 4, &mut SeededRng::new(3)).unwrap();
        assert_eq!(plan.len(), 4);
        assert!(plan.ids.contains(&0) && plan.ids.contains(&1));
    }

    #[test]
    fn pk_errors() {
        let idx = index(&[5, 5]);
        assert_eq!(pk_sample(&idx, 6, 4, &mut SeededRng::new(0)).unwrap_err(), Error::IndivisibleBatch { b: 6, k: 4 });
        assert_eq!(
            pk_sample(&idx, 12, 4, &mut SeededRng::new(0)).unwrap_err(),
            Error::NotEnoughClasses { needed: 3, available: 2 }
        );
    }

    #[test]
    fn pk_deterministic() {
        let idx = index(&[7, 3, 9, 4, 6]);
        let a = pk_sample(&idx, 12, 4, &mut SeededRng::new(11)).unwrap();
        let b = pk_sample(&idx, 12, 4, &mut SeededRng::new(11)).unwrap();
        assert_eq!(a, b);
    }

    /// Embeds sample id `i` as a random fixed point of the unit circle.
    fn circle_embed(idx: &DatasetIndex, seed: u64) -> impl FnMut(&[usize]) -> Result<EmbeddingBatch> + '_ {
        let mut rng = SeededRng::new(seed);
        let angles: Vec<f64> = (0..idx.len()).map(|_| rng.uniform_range(0.0, std::f64::consts::TAU)).collect();
        move |ids: &[usize]| {
            let rows: Vec<Vec<f64>> = ids.iter().map(|&i| vec![angles[i].cos(), angles[i].sin()]).collect();
            EmbeddingBatch::from_rows(&rows, ids.iter().map(|&i| idx.label(i)).collect())
        }
    }

    #[test]
    fn imbalanced_round_sizes_and_validity() {
        let idx = index(&[200, 110, 61, 33, 18, 10, 6, 3]);
        for seed in 0..20 {
            let mut pooled = None;
            let mut embed = circle_embed(&idx, seed);
            let round = imbalanced_round(
                &idx,
                33,
                3,
                |ids: &[usize]| {
                    let e = embed(ids)?;
                    pooled = Some(e.clone());
                    Ok(e)
                },
                0.2,
                &mut SeededRng::new(seed),
            )
            .unwrap();
            assert_eq!(round.pool.len(), 99);
            assert!(round.triplets.len() <= 11);
            assert!(round.ids.len() <= 33);
            let pooled = pooled.unwrap();
            let d = pairwise_sq_distances(&pooled).unwrap();
            let labels: Vec<usize> = round.ids.iter().map(|&i| idx.label(i)).collect();
            round.triplets.validate(&labels).unwrap();
            for t in &round.triplets.triplets {
                let p = |local: usize| round.pool.iter().position(|&x| x == round.ids[local]).unwrap();
                let (a, pp, n) = (p(t.anchor), p(t.positive), p(t.negative));
                assert_eq!(classify_negative(d.get(a, pp), d.get(a, n), 0.2), NegativeKind::SemiHard);
            }
        }
    }

    #[test]
    fn imbalanced_round_keeps_all_when_few() {
        // Exactly five ordered positive pairs have a semi-hard negative:
        // (0,.1) (.1,0) (0,.2) (.1,.2) from class 0 and (10,10.2) from class 2.
        let xs = [0.0, 0.1, 0.2, 0.3, 10.0, 10.2, 10.3];
        let labels = [0, 0, 0, 1, 2, 2, 3];
        let idx = DatasetIndex::new(&labels, 4).unwrap();
        let embed = |ids: &[usize]| {
            let rows: Vec<Vec<f64>> = ids.iter().map(|&i| vec![xs[i]]).collect();
            EmbeddingBatch::from_rows(&rows, ids.iter().map(|&i| labels[i]).collect())
        };
        let round = imbalanced_round(&idx, 33, 3, embed, 0.2, &mut SeededRng::new(0)).unwrap();
        assert_eq!(round.pool.len(), 7);
        assert_eq!(round.found, 5);
        assert_eq!(round.triplets.len(), 5);
        assert_eq!(round.skipped_pairs, 3);
    }

    #[test]
    fn imbalanced_round_truncates_to_a_third() {
        let idx = index(&[40, 40]);
        let mut embed = circle_embed(&idx, 1);
        let round = imbalanced_round(&idx, 12, 3, &mut embed, 2.0, &mut SeededRng::new(2)).unwrap();
        assert!(round.found > 4);
        assert_eq!(round.triplets.len(), 4);
    }

    #[test]
    fn singleton_pool_has_no_pairs() {
        let idx = DatasetIndex::new(&[0, 1, 2, 3], 4).unwrap();
        let embed = |ids: &[usize]| {
            let rows: Vec<Vec<f64>> = ids.iter().map(|&i| vec![i as f64]).collect();
            EmbeddingBatch::new(DenseArray::from_rows(&rows)?, ids.to_vec())
        };
        assert_eq!(
            imbalanced_round(&idx, 4, 1, embed, 0.2, &mut SeededRng::new(0)).unwrap_err(),
            Error::EmptyTripletSet
        );
    }

    #[test]
    fn pool_class_frequencies_follow_dataset() {
        // chi-square goodness of fit of pool labels against class proportions
        let counts = [200usize, 110, 61, 33, 18, 10, 6, 3];
        let idx = index(&counts);
        let n: usize = counts.iter().sum();
        let mut rng = SeededRng::new(42);
        let mut observed = [0usize; 8];
        let mut draws = 0;
        for round in 0..3334 {
            let mut embed = circle_embed(&idx, round);
            let _ = imbalanced_round(
                &idx,
                3,
                1,
                |ids: &[usize]| {
                    for &i in ids {
                        observed[idx.label(i)] += 1;
                        draws += 1;
                    }
                    embed(ids)
                },
                0.2,
                &mut rng,
            );
        }
        let chi2: f64 = counts
            .iter()
            .zip(&observed)
            .map(|(&c, &o)| {
                let e = draws as f64 * c as f64 / n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // 7 degrees of freedom, p = 0.01 critical value
        assert!(chi2 < 18.475, "chi2 = {chi2}");
    }
}
