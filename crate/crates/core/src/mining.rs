//! Triplet selection over a batch distance matrix.
//!
//! Two online miners are provided: batch-hard (farthest positive, nearest
//! negative per anchor) and semi-hard with a priority fallback
//! (semi-hard, then easy, then hard negatives). Each has a brute-force
//! counterpart built on [`enumerate_all_triplets`] that is used as an oracle.
//! All tie-breaks go to the lowest index so mining never consumes randomness.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize) -> Self {
        Self { anchor, positive, negative }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Hard,
    SemiHard,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub strategy: Strategy,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Checks label consistency of every triplet.
    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        for t in &self.triplets {
            let n = labels.len();
            if t.anchor >= n || t.positive >= n || t.negative >= n {
                return Err(Error::ShapeError(format!("triplet {t:?} out of range {n}")));
            }
            if t.anchor == t.positive
                || labels[t.anchor] != labels[t.positive]
                || labels[t.anchor] == labels[t.negative]
            {
                return Err(Error::InvalidConfig(format!("invalid triplet {t:?}")));
            }
        }
        Ok(())
    }

    pub fn kind_counts(&self, dists: &DistanceMatrix, margin: f64) -> KindCounts {
        let mut counts = KindCounts::default();
        for t in &self.triplets {
            let d_ap = dists.get(t.anchor, t.positive);
            let d_an = dists.get(t.anchor, t.negative);
            match classify_negative(d_ap, d_an, margin) {
                NegativeKind::SemiHard => counts.semi_hard += 1,
                NegativeKind::Easy => counts.easy += 1,
                NegativeKind::Hard => counts.hard += 1,
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindCounts {
    pub semi_hard: usize,
    pub easy: usize,
    pub hard: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    SemiHard,
    Easy,
    Hard,
}

impl NegativeKind {
    /// Selection priority; lower is preferred.
    pub fn priority(self) -> u8 {
        match self {
            NegativeKind::SemiHard => 0,
            NegativeKind::Easy => 1,
            NegativeKind::Hard => 2,
        }
    }
}

/// Semi-hard iff `d_ap < d_an < d_ap + m`. `d_an == d_ap` is hard and
/// `d_an == d_ap + m` is easy.
pub fn classify_negative(d_ap: f64, d_an: f64, margin: f64) -> NegativeKind {
    if d_an <= d_ap {
        NegativeKind::Hard
    } else if d_an >= d_ap + margin {
        NegativeKind::Easy
    } else {
        NegativeKind::SemiHard
    }
}

fn check_lengths(dists: &DistanceMatrix, labels: &[usize]) -> Result<()> {
    if dists.len() != labels.len() {
        return Err(Error::ShapeError(format!(
            "{} distances rows vs {} labels",
            dists.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// One triplet per anchor whose class has another member: the farthest
/// positive and the nearest negative.
pub fn mine_batch_hard(dists: &DistanceMatrix, labels: &[usize]) -> Result<TripletSet> {
    check_lengths(dists, labels)?;
    let n = labels.len();
    let mut triplets = Vec::new();
    for a in 0..n {
        let row = dists.row(a);
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, d)| row[j] > d) {
                    pos = Some((j, row[j]));
                }
            } else if neg.is_none_or(|(_, d)| row[j] < d) {
                neg = Some((j, row[j]));
            }
        }
        if let (Some((p, _)), Some((q, _))) = (pos, neg) {
            triplets.push(Triplet::new(a, p, q));
        }
    }
    if triplets.is_empty() {
        return Err(Error::EmptyTripletSet);
    }
    Ok(TripletSet { triplets, strategy: Strategy::Hard })
}

/// One triplet per ordered anchor-positive pair; the negative is the nearest
/// one of the best available kind (semi-hard, else easy, else hard).
pub fn mine_semi_hard(dists: &DistanceMatrix, labels: &[usize], margin: f64) -> Result<TripletSet> {
    check_lengths(dists, labels)?;
    let n = labels.len();
    let mut triplets = Vec::new();
    for a in 0..n {
        let row = dists.row(a);
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let d_ap = row[p];
            // nearest candidate per tier, indexed by priority
            let mut best: [Option<(usize, f64)>; 3] = [None; 3];
            for q in 0..n {
                if labels[q] == labels[a] {
                    continue;
                }
                let tier = classify_negative(d_ap, row[q], margin).priority() as usize;
                if best[tier].is_none_or(|(_, d)| row[q] < d) {
                    best[tier] = Some((q, row[q]));
                }
            }
            if let Some((q, _)) = best.iter().flatten().next() {
                triplets.push(Triplet::new(a, p, *q));
            }
        }
    }
    if triplets.is_empty() {
        return Err(Error::EmptyTripletSet);
    }
    Ok(TripletSet { triplets, strategy: Strategy::SemiHard })
}

/// Nearest strictly semi-hard negative for every ordered positive pair, with
/// no fallback. Pairs without a semi-hard negative are skipped and counted.
pub fn mine_semi_hard_strict(
    dists: &DistanceMatrix,
    labels: &[usize],
    margin: f64,
) -> Result<(TripletSet, usize)> {
    check_lengths(dists, labels)?;
    let n = labels.len();
    let mut triplets = Vec::new();
    let mut skipped = 0;
    let mut pairs = 0;
    for a in 0..n {
        let row = dists.row(a);
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            pairs += 1;
            let mut best: Option<(usize, f64)> = None;
            for q in 0..n {
                if labels[q] != labels[a]
                    && classify_negative(row[p], row[q], margin) == NegativeKind::SemiHard
                    && best.is_none_or(|(_, d)| row[q] < d)
                {
                    best = Some((q, row[q]));
                }
            }
            match best {
                Some((q, _)) => triplets.push(Triplet::new(a, p, q)),
                None => skipped += 1,
            }
        }
    }
    if pairs == 0 {
        return Err(Error::EmptyTripletSet);
    }
    Ok((TripletSet { triplets, strategy: Strategy::SemiHard }, skipped))
}

/// Every valid `(a, p, n)` in anchor, positive, negative index order.
pub fn enumerate_all_triplets(labels: &[usize]) -> TripletSet {
    let n = labels.len();
    let mut triplets = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for q in 0..n {
                if labels[q] != labels[a] {
                    triplets.push(Triplet::new(a, p, q));
                }
            }
        }
    }
    TripletSet { triplets, strategy: Strategy::Exhaustive }
}

/// Brute-force batch-hard: per anchor, the lexicographic best of all valid
/// triplets under (largest `D(a,p)`, lowest `p`, smallest `D(a,n)`, lowest `n`).
pub fn brute_force_batch_hard(dists: &DistanceMatrix, labels: &[usize]) -> Result<TripletSet> {
    check_lengths(dists, labels)?;
    let all = enumerate_all_triplets(labels);
    let mut triplets: Vec<Triplet> = Vec::new();
    let mut start = 0;
    while start < all.triplets.len() {
        let anchor = all.triplets[start].anchor;
        let end = start
            + all.triplets[start..].iter().take_while(|t| t.anchor == anchor).count();
        let best = all.triplets[start..end]
            .iter()
            .min_by(|x, y| {
                dists
                    .get(anchor, y.positive)
                    .total_cmp(&dists.get(anchor, x.positive))
                    .then(x.positive.cmp(&y.positive))
                    .then(dists.get(anchor, x.negative).total_cmp(&dists.get(anchor, y.negative)))
                    .then(x.negative.cmp(&y.negative))
            })
            .copied();
        triplets.extend(best);
        start = end;
    }
    if triplets.is_empty() {
        return Err(Error::EmptyTripletSet);
    }
    Ok(TripletSet { triplets, strategy: Strategy::Hard })
}

/// Brute-force semi-hard: classify all negatives of each pair, then take the
/// minimum under (priority, distance, index).
pub fn brute_force_semi_hard(
    dists: &DistanceMatrix,
    labels: &[usize],
    margin: f64,
) -> Result<TripletSet> {
    check_lengths(dists, labels)?;
    let all = enumerate_all_triplets(labels);
    let key = |t: &Triplet| {
        let d_an = dists.get(t.anchor, t.negative);
        (classify_negative(dists.get(t.anchor, t.positive), d_an, margin).priority(), d_an, t.negative)
    };
    let mut triplets: Vec<Triplet> = Vec::new();
    for t in &all.triplets {
        match triplets.last_mut() {
            Some(last) if last.anchor == t.anchor && last.positive == t.positive => {
                let (ka, kb) = (key(t), key(last));
                let better = match ka.0.cmp(&kb.0) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => ka.1.total_cmp(&kb.1).then(ka.2.cmp(&kb.2)).is_lt(),
                };
                if better {
                    *last = *t;
                }
            }
            _ => triplets.push(*t),
        }
    }
    if triplets.is_empty() {
        return Err(Error::EmptyTripletSet);
    }
    Ok(TripletSet { triplets, strategy: Strategy::SemiHard })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pairwise_sq_distances, EmbeddingBatch};
    use crate::tensor::SeededRng;
    use proptest::prelude::*;

    /// Distance matrix from 1-D points; `D = (x_i - x_j)^2`.
    fn line(points: &[f64]) -> DistanceMatrix {
        let rows: Vec<Vec<f64>> = points.iter().map(|&p| vec![p]).collect();
        let batch = EmbeddingBatch::from_rows(&rows, vec![0; points.len()]).unwrap();
        pairwise_sq_distances(&batch).unwrap()
    }

    fn matrix(n: usize, entries: &[(usize, usize, f64)]) -> DistanceMatrix {
        let mut v = vec![0.0; n * n];
        for &(i, j, d) in entries {
            v[i * n + j] = d;
            v[j * n + i] = d;
        }
        DistanceMatrix::from_values(n, v).unwrap()
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_negative(0.5, 0.6, 0.2), NegativeKind::SemiHard);
        assert_eq!(classify_negative(0.5, 0.9, 0.2), NegativeKind::Easy);
        assert_eq!(classify_negative(0.5, 0.4, 0.2), NegativeKind::Hard);
        assert_eq!(classify_negative(0.5, 0.5, 0.2), NegativeKind::Hard);
        assert_eq!(classify_negative(0.25, 0.5, 0.25), NegativeKind::Easy);
    }

    #[test]
    fn batch_hard_picks_extremes() {
        // anchor 0; positives 1 (0.1), 2 (0.7); negatives 3 (0.3), 4 (0.9)
        let d = matrix(
            5,
            &[
                (0, 1, 0.1), (0, 2, 0.7), (0, 3, 0.3), (0, 4, 0.9),
                (1, 2, 1.0), (1, 3, 1.0), (1, 4, 1.0), (2, 3, 1.0), (2, 4, 1.0), (3, 4, 1.0),
            ],
        );
        let labels = [0, 0, 0, 1, 1];
        let set = mine_batch_hard(&d, &labels).unwrap();
        assert_eq!(set.triplets[0], Triplet::new(0, 2, 3));
        assert_eq!(set.len(), 5);
    }

    #[test]
    fn batch_hard_skips_singletons() {
        let d = line(&[0.0, 1.0, 2.0, 3.0]);
        let set = mine_batch_hard(&d, &[0, 0, 1, 2]).unwrap();
        assert_eq!(set.triplets.iter().map(|t| t.anchor).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(mine_batch_hard(&d, &[0, 1, 2, 3]), Err(Error::EmptyTripletSet));
    }

    #[test]
    fn semi_hard_priority_order() {
        // anchor 0, positive 1 at 0.5; negatives: 2 semi-hard (0.6), 3 easy (0.9), 4 hard (0.4)
        let mut entries = vec![(0, 1, 0.5), (0, 2, 0.6), (0, 3, 0.9), (0, 4, 0.4)];
        for i in 1..5 {
            for j in i + 1..5 {
                entries.push((i, j, 3.0));
            }
        }
        let d = matrix(5, &entries);
        let labels = [0, 0, 1, 1, 1];
        let set = mine_semi_hard(&d, &labels, 0.2).unwrap();
        assert_eq!(set.triplets[0], Triplet::new(0, 1, 2));
        // pair (1, 0): all negatives at 3.0 vs d_ap 0.5 -> nearest easy, lowest index
        assert_eq!(set.triplets[1], Triplet::new(1, 0, 2));
    }

    #[test]
    fn semi_hard_falls_back_to_easy_then_hard() {
        let d = matrix(4, &[(0, 1, 0.1), (0, 2, 2.0), (0, 3, 1.5), (1, 2, 0.01), (1, 3, 0.05), (2, 3, 0.3)]);
        let labels = [0, 0, 1, 1];
        let set = mine_semi_hard(&d, &labels, 0.2).unwrap();
        // (0,1): both negatives easy -> nearest easy is 3
        assert_eq!(set.triplets[0], Triplet::new(0, 1, 3));
        // (1,0): d_ap 0.1, negatives 0.01 and 0.05 are both hard -> nearest is 2
        assert_eq!(set.triplets[1], Triplet::new(1, 0, 2));
        let counts = set.kind_counts(&d, 0.2);
        assert!(counts.easy >= 1 && counts.hard >= 1);
    }

    #[test]
    fn semi_hard_without_pairs_is_empty() {
        let d = line(&[0.0, 1.0, 2.0]);
        assert_eq!(mine_semi_hard(&d, &[0, 1, 2], 0.2), Err(Error::EmptyTripletSet));
    }

    #[test]
    fn enumerate_examples() {
        assert_eq!(
            enumerate_all_triplets(&[0, 0, 1]).triplets,
            vec![Triplet::new(0, 1, 2), Triplet::new(1, 0, 2)]
        );
        assert!(enumerate_all_triplets(&[0, 1, 2]).is_empty());
        assert_eq!(enumerate_all_triplets(&[0, 0, 1, 1]).len(), 8);
    }

    #[test]
    fn strict_semi_hard_skips_pairs() {
        let d = matrix(4, &[(0, 1, 0.1), (0, 2, 0.2), (0, 3, 2.0), (1, 2, 2.0), (1, 3, 2.0), (2, 3, 0.4)]);
        let (set, skipped) = mine_semi_hard_strict(&d, &[0, 0, 1, 1], 0.2).unwrap();
        assert_eq!(set.triplets, vec![Triplet::new(0, 1, 2)]);
        assert_eq!(skipped, 3);
    }

    fn random_case(seed: u64) -> (DistanceMatrix, Vec<usize>) {
        let mut rng = SeededRng::new(seed);
        let b = 2 + rng.below(40);
        let classes = 2 + rng.below(6);
        let labels: Vec<usize> = (0..b).map(|_| rng.below(classes)).collect();
        let rows: Vec<Vec<f64>> = (0..b).map(|_| (0..3).map(|_| rng.normal() * 0.4).collect()).collect();
        let batch = EmbeddingBatch::from_rows(&rows, labels.clone()).unwrap();
        (pairwise_sq_distances(&batch).unwrap(), labels)
    }

    proptest! {
        #[test]
        fn classification_partitions(d_ap in 0.0f64..4.0, d_an in 0.0f64..4.0, m in 0.001f64..1.0) {
            let kind = classify_negative(d_ap, d_an, m);
            let semi = d_ap < d_an && d_an < d_ap + m;
            let easy = d_an >= d_ap + m;
            let hard = d_an <= d_ap;
            prop_assert_eq!(semi as u8 + easy as u8 + hard as u8, 1);
            prop_assert_eq!(kind == NegativeKind::SemiHard, semi);
            prop_assert_eq!(kind == NegativeKind::Easy, easy);
        }

        #[test]
        fn miners_match_brute_force(seed in any::<u64>()) {
            let (d, labels) = random_case(seed);
            prop_assert_eq!(mine_batch_hard(&d, &labels), brute_force_batch_hard(&d, &labels));
            prop_assert_eq!(mine_semi_hard(&d, &labels, 0.2), brute_force_semi_hard(&d, &labels, 0.2));
        }

        #[test]
        fn mined_triplets_are_valid(seed in any::<u64>()) {
            let (d, labels) = random_case(seed);
            if let Ok(set) = mine_batch_hard(&d, &labels) {
                set.validate(&labels).unwrap();
                let eligible = (0..labels.len())
                    .filter(|&i| labels.iter().filter(|&&l| l == labels[i]).count() >= 2)
                    .count();
                prop_assert_eq!(set.len(), eligible);
            }
            if let Ok(set) = mine_semi_hard(&d, &labels, 0.2) {
                set.validate(&labels).unwrap();
                for t in &set.triplets {
                    let d_ap = d.get(t.anchor, t.positive);
                    let picked = classify_negative(d_ap, d.get(t.anchor, t.negative), 0.2);
                    if picked == NegativeKind::Hard {
                        let better = (0..labels.len()).any(|q| {
                            labels[q] != labels[t.anchor]
                                && classify_negative(d_ap, d.get(t.anchor, q), 0.2) != NegativeKind::Hard
                        });
                        prop_assert!(!better);
                    }
                }
            }
        }
    }
}
