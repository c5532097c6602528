//! Retrieval and clustering metrics: Recall@K, k-means, NMI and micro/macro
//! classification accuracy.

use std::collections::{BTreeMap, HashMap};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{sq_dist, EmbeddingBatch};
use crate::tensor::{DenseArray, SeededRng};

pub const DEFAULT_KMEANS_ITERS: usize = 100;
pub const DEFAULT_RECALL_KS: [usize; 4] = [1, 4, 8, 16];

/// Fraction of queries whose `K` nearest neighbors (self excluded, squared
/// Euclidean, lowest index first on ties) include a same-class item.
pub fn recall_at_k(embeddings: &EmbeddingBatch, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let b = embeddings.len();
    if b < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: b });
    }
    if let Some(&k) = ks.iter().find(|&&k| k >= b || k == 0) {
        return Err(Error::KTooLarge { k, n: b });
    }
    let labels = embeddings.labels();
    // rank (1-based) of the nearest same-class neighbor, None if the class is a singleton
    let first_hit: Vec<Option<usize>> = (0..b)
        .map(|q| {
            let dist: Vec<f64> = (0..b).map(|j| sq_dist(embeddings.row(q), embeddings.row(j))).collect();
            let hit = (0..b)
                .filter(|&j| j != q && labels[j] == labels[q])
                .min_by(|&x, &y| dist[x].total_cmp(&dist[y]).then(x.cmp(&y)))?;
            let ahead = (0..b)
                .filter(|&j| j != q && labels[j] != labels[q])
                .filter(|&j| dist[j] < dist[hit] || (dist[j] == dist[hit] && j < hit))
                .count();
            Some(ahead + 1)
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = first_hit.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            (k, hits as f64 / b as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub k: usize,
}

impl Clustering {
    pub fn new(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&a) = assignments.iter().find(|&&a| a >= k) {
            return Err(Error::ShapeError(format!("assignment {a} outside [0, {k})")));
        }
        Ok(Self { assignments, k })
    }

    /// Ground-truth clustering from class labels.
    pub fn from_labels(labels: &[usize]) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Self { assignments: labels.to_vec(), k }
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub clustering: Clustering,
    pub centers: DenseArray,
    /// Sum of squared distances to assigned centers after each assignment step.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centers: &DenseArray) -> (usize, f64) {
    (0..centers.rows())
        .map(|c| (c, sq_dist(point, centers.row(c))))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// k-means with k-means++ seeding and Lloyd iterations until the
/// assignment is a fixpoint or `max_iters` assignment steps have run.
/// A cluster left empty is reseeded at the point farthest from its center.
pub fn kmeans(points: &DenseArray, k: usize, rng: &mut SeededRng, max_iters: usize) -> Result<KMeans> {
    if points.shape().len() != 2 {
        return Err(Error::ShapeError(format!("points must be 2-D, got {:?}", points.shape())));
    }
    let (n, d) = (points.rows(), points.cols());
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let max_iters = max_iters.max(1);

    // k-means++ seeding
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.below(free.len())]
        };
        chosen.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut centers = DenseArray::new(
        vec![k, d],
        chosen.iter().flat_map(|&i| points.row(i).iter().copied()).collect(),
    )?;

    let mut assignments = vec![usize::MAX; n];
    let mut sse_history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut sse = 0.0;
        for i in 0..n {
            let (c, dist) = nearest(points.row(i), &centers);
            sse += dist;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        sse_history.push(sse);
        iterations += 1;
        if !changed || iterations >= max_iters {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let row = centers.row_mut(c);
                for (j, s) in sums[c * d..(c + 1) * d].iter().enumerate() {
                    row[j] = s / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .map(|i| (i, sq_dist(points.row(i), centers.row(assignments[i]))))
                    .fold((0, f64::NEG_INFINITY), |b, cur| if cur.1 > b.1 { cur } else { b })
                    .0;
                let p = points.row(far).to_vec();
                centers.row_mut(c).copy_from_slice(&p);
                assignments[far] = c;
            }
        }
    }
    Ok(KMeans { clustering: Clustering { assignments, k }, centers, sse_history, iterations })
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(truth, learned) / sqrt(H(truth) H(learned))` with natural logarithms.
/// When an entropy vanishes the score is 1 for identical partitions and 0
/// otherwise.
pub fn nmi(truth: &Clustering, learned: &Clustering) -> Result<f64> {
    if truth.len() != learned.len() {
        return Err(Error::ShapeError(format!(
            "clusterings of {} and {} samples",
            truth.len(),
            learned.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = truth.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut row: HashMap<usize, usize> = HashMap::new();
    let mut col: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in truth.assignments.iter().zip(&learned.assignments) {
        *joint.entry((a, b)).or_default() += 1;
        *row.entry(a).or_default() += 1;
        *col.entry(b).or_default() += 1;
    }
    let h_truth = entropy(row.values().copied(), n);
    let h_learned = entropy(col.values().copied(), n);
    if h_truth == 0.0 || h_learned == 0.0 {
        return Ok(if h_truth == 0.0 && h_learned == 0.0 { 1.0 } else { 0.0 });
    }
    let mut keys: Vec<_> = joint.keys().copied().collect();
    keys.sort_unstable();
    let mutual: f64 = keys
        .iter()
        .map(|key| {
            let nij = joint[key] as f64;
            let (a, b) = (row[&key.0] as f64, col[&key.1] as f64);
            nij / n * (n * nij / (a * b)).ln()
        })
        .sum();
    Ok((mutual / (h_truth * h_learned).sqrt()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub micro: f64,
    pub macro_avg: f64,
    pub per_class: BTreeMap<usize, f64>,
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<Accuracy> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeError(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut totals: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (&p, &y) in predictions.iter().zip(labels) {
        let e = totals.entry(y).or_default();
        e.1 += 1;
        if p == y {
            e.0 += 1;
            correct += 1;
        }
    }
    let per_class: BTreeMap<usize, f64> =
        totals.iter().map(|(&c, &(hit, all))| (c, hit as f64 / all as f64)).collect();
    let macro_avg = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(Accuracy { micro: correct as f64 / labels.len() as f64, macro_avg, per_class })
}

/// Recall@K and NMI of an embedding against its labels. The clustering for
/// NMI uses as many clusters as there are distinct labels.
pub fn embedding_quality(
    embeddings: &EmbeddingBatch,
    ks: &[usize],
    rng: &mut SeededRng,
) -> Result<(BTreeMap<usize, f64>, f64)> {
    let recall = recall_at_k(embeddings, ks)?;
    let truth = Clustering::from_labels(embeddings.labels());
    let mut classes = embeddings.labels().to_vec();
    classes.sort_unstable();
    classes.dedup();
    let km = kmeans(embeddings.vectors(), classes.len(), rng, DEFAULT_KMEANS_ITERS)?;
    Ok((recall, nmi(&truth, &km.clustering)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub micro_acc: f64,
    pub macro_acc: f64,
    pub per_class_acc: BTreeMap<usize, f64>,
}

impl EvalReport {
    pub fn new(recall_at: BTreeMap<usize, f64>, nmi: f64, acc: Accuracy) -> Self {
        Self {
            recall_at,
            nmi,
            micro_acc: acc.micro,
            macro_acc: acc.macro_avg,
            per_class_acc: acc.per_class,
        }
    }

    /// JSON object with keys `recall@K`, `nmi`, `micro_acc`, `macro_acc` and
    /// `per_class` (class id string -> accuracy).
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        for (k, v) in &self.recall_at {
            obj.insert(format!("recall@{k}"), json!(v));
        }
        obj.insert("nmi".into(), json!(self.nmi));
        obj.insert("micro_acc".into(), json!(self.micro_acc));
        obj.insert("macro_acc".into(), json!(self.macro_acc));
        let per: Map<String, Value> =
            self.per_class_acc.iter().map(|(c, a)| (c.to_string(), json!(a))).collect();
        obj.insert("per_class".into(), Value::Object(per));
        Value::Object(obj)
    }
}
