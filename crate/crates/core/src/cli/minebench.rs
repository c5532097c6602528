//! Mining timings on random batches, each trial checked against the
//! exhaustive oracles.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{l2_normalize, pairwise_sq_distances, EmbeddingBatch, DEFAULT_NORM_EPSILON};
use crate::losses::DEFAULT_MARGIN;
use crate::mining::{brute_force_batch_hard, brute_force_semi_hard, mine_batch_hard, mine_semi_hard};
use crate::tensor::{DenseArray, SeededRng};

pub const MINEBENCH_COLUMNS: [&str; 5] = ["trial", "strategy", "micros", "n_triplets", "oracle_ok"];

#[derive(Debug, Clone, PartialEq)]
pub struct MinebenchRow {
    pub trial: usize,
    pub strategy: &'static str,
    pub micros: f64,
    pub n_triplets: usize,
    pub oracle_ok: bool,
}

/// Random normalized batch of `b` 8-dimensional embeddings over 2 to 10
/// classes (never more than `b - 1`), with both class 0 and class 1 present.
pub fn random_batch(b: usize, rng: &mut SeededRng) -> Result<EmbeddingBatch> {
    if b < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: b });
    }
    let max_classes = 10.min(b - 1).max(2);
    let n_classes = 2 + rng.below(max_classes - 1);
    let mut labels: Vec<usize> = (0..b).map(|_| rng.below(n_classes)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let data = (0..b * 8).map(|_| rng.normal()).collect();
    let batch = EmbeddingBatch::new(DenseArray::new(vec![b, 8], data)?, labels)?;
    Ok(l2_normalize(&batch, DEFAULT_NORM_EPSILON).batch)
}

pub fn run_minebench(b: usize, trials: usize, seed: u64) -> Result<Vec<MinebenchRow>> {
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::with_capacity(2 * trials);
    for trial in 0..trials {
        let batch = random_batch(b, &mut rng)?;
        let d = pairwise_sq_distances(&batch)?;
        let labels = batch.labels();

        let start = Instant::now();
        let hard = mine_batch_hard(&d, labels);
        let micros = start.elapsed().as_secs_f64() * 1e6;
        let ok = hard == brute_force_batch_hard(&d, labels);
        rows.push(MinebenchRow {
            trial,
            strategy: "hard",
            micros,
            n_triplets: hard.as_ref().map_or(0, |t| t.len()),
            oracle_ok: ok,
        });

        let start = Instant::now();
        let semi = mine_semi_hard(&d, labels, DEFAULT_MARGIN);
        let micros = start.elapsed().as_secs_f64() * 1e6;
        let ok = semi == brute_force_semi_hard(&d, labels, DEFAULT_MARGIN);
        rows.push(MinebenchRow {
            trial,
            strategy: "semi_hard",
            micros,
            n_triplets: semi.as_ref().map_or(0, |t| t.len()),
            oracle_ok: ok,
        });
    }
    Ok(rows)
}

pub fn minebench_csv(rows: &[MinebenchRow]) -> String {
    let mut out = MINEBENCH_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{:.3},{},{}", r.trial, r.strategy, r.micros, r.n_triplets, r.oracle_ok);
    }
    out
}
