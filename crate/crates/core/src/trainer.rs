//! Momentum SGD over the combined objective `L_soft + lambda * L_embed`, with
//! per-step mining, center maintenance, and collapse monitoring.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, embedding_quality, EvalReport};
use crate::geometry::{pairwise_sq_distances, EmbeddingBatch};
use crate::losses::{
    assign_magnet_clusters, center_loss, combined_loss, magnet_loss, softmax_ce, tcl_loss, triplet_loss,
    ClassCenters, LossResult, MarginMode, CENTER_ALPHA, DEFAULT_LAMBDA, DEFAULT_MARGIN,
};
use crate::mining::{mine_batch_hard, mine_semi_hard, KindCounts};
use crate::network::{ForwardTrace, Gradients, TwoHeadNet};
use crate::sampling::{imbalanced_round, pk_sample, uniform_sample, DatasetIndex};
use crate::tensor::{DenseArray, SeededRng};

/// `base_lr * (1 - t / total)^power`.
pub fn lr_schedule(t: usize, total: usize, base_lr: f64, power: f64) -> Result<f64> {
    if t > total || total == 0 {
        return Err(Error::OutOfRange { t, total });
    }
    Ok(base_lr * (1.0 - t as f64 / total as f64).powf(power))
}

/// `v = momentum * v - lr * g; p += v`, tensor by tensor.
pub fn sgd_momentum_step(
    params: &mut [&mut DenseArray],
    grads: &[DenseArray],
    velocity: &mut [DenseArray],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::ShapeError(format!(
            "{} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::ShapeError(format!(
                "param {:?}, grad {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    Hard,
    SemiHard,
}

/// Embedding-head objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regularizer {
    None,
    Triplet {
        mining: Mining,
        #[serde(default = "default_margin_mode")]
        margin_mode: MarginMode,
    },
    Center {
        #[serde(default = "default_center_alpha")]
        alpha: f64,
    },
    Tcl {
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_center_alpha")]
        alpha: f64,
    },
    Magnet {
        k_clusters: usize,
        #[serde(default)]
        alpha_margin: f64,
    },
}

fn default_margin_mode() -> MarginMode {
    MarginMode::Hard { margin: DEFAULT_MARGIN }
}

fn default_center_alpha() -> f64 {
    CENTER_ALPHA
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

/// How each iteration's batch is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BatchConfig {
    /// `b / k` classes with `k` samples each.
    Pk { b: usize, k: usize },
    /// `b` samples drawn uniformly.
    Uniform { b: usize },
    /// Pooled semi-hard triplets from `n_b` uniform batches of size `b`.
    Imbalanced { b: usize, n_b: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default = "default_power")]
    pub lr_power: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub regularizer: Regularizer,
    pub batch: BatchConfig,
    /// Set by the caller; run configurations carry the seed at top level.
    #[serde(skip)]
    pub seed: u64,
    #[serde(default = "default_collapse")]
    pub collapse_threshold: f64,
    /// Drop the softmax gradient so only the embedding objective trains the net.
    #[serde(default)]
    pub detach_softmax: bool,
}

fn default_lr() -> f64 {
    0.01
}
fn default_power() -> f64 {
    1.0
}
fn default_momentum() -> f64 {
    0.9
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_collapse() -> f64 {
    1e-3
}

impl TrainConfig {
    pub fn new(iterations: usize, regularizer: Regularizer, batch: BatchConfig, seed: u64) -> Self {
        Self {
            iterations,
            base_lr: default_lr(),
            lr_power: default_power(),
            momentum: default_momentum(),
            lambda: default_lambda(),
            regularizer,
            batch,
            seed,
            collapse_threshold: default_collapse(),
            detach_softmax: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return bad("base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be >= 0");
        }
        if !(self.lr_power > 0.0) {
            return bad("lr_power must be positive");
        }
        if !(self.collapse_threshold > 0.0) {
            return bad("collapse_threshold must be positive");
        }
        match self.regularizer {
            Regularizer::Triplet { margin_mode: MarginMode::Hard { margin }, .. } if !(margin >= 0.0) => {
                return bad("margin must be >= 0")
            }
            Regularizer::Center { alpha } | Regularizer::Tcl { alpha, .. } if !(0.0..=1.0).contains(&alpha) => {
                return bad("center alpha must be in [0, 1]")
            }
            Regularizer::Magnet { k_clusters: 0, .. } => return bad("k_clusters must be >= 1"),
            _ => {}
        }
        match self.batch {
            BatchConfig::Pk { b, k } if k == 0 || b == 0 || b % k != 0 => Err(Error::IndivisibleBatch { b, k }),
            BatchConfig::Uniform { b: 0 } => bad("batch size must be positive"),
            BatchConfig::Imbalanced { b, n_b } => {
                if b < 3 || n_b == 0 {
                    return bad("imbalanced sampling needs b >= 3 and n_b >= 1");
                }
                match self.regularizer {
                    Regularizer::Triplet { mining: Mining::SemiHard, .. } => Ok(()),
                    _ => bad("imbalanced sampling requires the semi-hard triplet regularizer"),
                }
            }
            _ => Ok(()),
        }
    }

    /// Margin used to classify negatives for logging and semi-hard mining.
    pub fn margin(&self) -> f64 {
        match self.regularizer {
            Regularizer::Triplet { margin_mode: MarginMode::Hard { margin }, .. } => margin,
            Regularizer::Tcl { margin, .. } => margin,
            _ => DEFAULT_MARGIN,
        }
    }
}

/// One completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss_total: f64,
    pub loss_soft: f64,
    pub loss_embed: f64,
    pub lr: f64,
    pub n_semi: usize,
    pub n_easy: usize,
    pub n_hard: usize,
    pub mean_norm: f64,
    pub collapse: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Notable events: skipped embedding steps and collapse transitions.
    pub events: Vec<String>,
}

pub const TRAIN_LOG_COLUMNS: [&str; 10] = [
    "iteration",
    "loss_total",
    "loss_soft",
    "loss_embed",
    "lr",
    "n_semi",
    "n_easy",
    "n_hard",
    "mean_norm",
    "collapse",
];

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = TRAIN_LOG_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.loss_total,
                r.loss_soft,
                r.loss_embed,
                r.lr,
                r.n_semi,
                r.n_easy,
                r.n_hard,
                r.mean_norm,
                u8::from(r.collapse)
            );
        }
        out
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// True if the collapse flag was raised at any iteration.
    pub fn ever_collapsed(&self) -> bool {
        self.records.iter().any(|r| r.collapse)
    }

    pub fn final_record(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

/// Collapse flag with hysteresis: raised when the mean pre-normalization norm
/// falls under `threshold` or all embeddings coincide, cleared only once the
/// norm exceeds ten times the threshold and the embeddings have separated.
#[derive(Debug, Clone, Copy)]
struct CollapseMonitor {
    threshold: f64,
    raised: bool,
}

const COINCIDENT_DISTANCE: f64 = 1e-6;

impl CollapseMonitor {
    fn observe(&mut self, mean_norm: f64, max_dist: f64) -> Option<bool> {
        let collapsed_now = mean_norm < self.threshold || max_dist < COINCIDENT_DISTANCE;
        if !self.raised && collapsed_now {
            self.raised = true;
            return Some(true);
        }
        if self.raised && mean_norm > 10.0 * self.threshold && max_dist >= COINCIDENT_DISTANCE {
            self.raised = false;
            return Some(false);
        }
        None
    }
}

fn stack_rows(rows: impl ExactSizeIterator<Item = Vec<f64>>, dim: usize) -> Result<DenseArray> {
    let n = rows.len();
    DenseArray::new(vec![n, dim], rows.flatten().collect())
}

/// Network outputs for a set of samples.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub embeddings: EmbeddingBatch,
    /// Penultimate pooled features `x`.
    pub pooled: EmbeddingBatch,
    pub logits: DenseArray,
    pub predictions: Vec<usize>,
    pub raw_norms: Vec<f64>,
}

pub fn embed_samples(net: &TwoHeadNet, samples: &[&DenseArray], labels: &[usize]) -> Result<Embedded> {
    let traces = samples.iter().map(|s| net.forward(s)).collect::<Result<Vec<_>>>()?;
    embedded_from_traces(net, &traces, labels)
}

fn embedded_from_traces(net: &TwoHeadNet, traces: &[ForwardTrace], labels: &[usize]) -> Result<Embedded> {
    let cfg = net.config();
    let embeddings = EmbeddingBatch::new(
        stack_rows(traces.iter().map(|t| t.embedding.clone()), cfg.d_emb)?,
        labels.to_vec(),
    )?;
    let pooled = EmbeddingBatch::new(
        stack_rows(traces.iter().map(|t| t.pooled.clone()), net.pooled_dim())?,
        labels.to_vec(),
    )?;
    let logits = stack_rows(traces.iter().map(|t| t.logits.clone()), cfg.n_classes)?;
    let predictions = traces
        .iter()
        .map(|t| {
            t.logits
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect();
    let raw_norms = traces.iter().map(|t| t.raw_norm).collect();
    Ok(Embedded { embeddings, pooled, logits, predictions, raw_norms })
}

pub fn embed_dataset(net: &TwoHeadNet, dataset: &Dataset) -> Result<Embedded> {
    let samples: Vec<&DenseArray> = dataset.samples.iter().collect();
    embed_samples(net, &samples, &dataset.labels)
}

/// Retrieval and classification metrics of a network on a dataset, for the
/// embedding head and for the penultimate pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct NetEvaluation {
    pub embedding: EvalReport,
    pub penultimate: EvalReport,
}

pub fn evaluate_net(net: &TwoHeadNet, dataset: &Dataset, ks: &[usize], rng: &mut SeededRng) -> Result<NetEvaluation> {
    let out = embed_dataset(net, dataset)?;
    let acc = accuracy(&out.predictions, &dataset.labels)?;
    let (recall_e, nmi_e) = embedding_quality(&out.embeddings, ks, rng)?;
    let (recall_p, nmi_p) = embedding_quality(&out.pooled, ks, rng)?;
    Ok(NetEvaluation {
        embedding: EvalReport::new(recall_e, nmi_e, acc.clone()),
        penultimate: EvalReport::new(recall_p, nmi_p, acc),
    })
}

/// Independent random streams so that the batch sequence does not depend on
/// which regularizer consumes auxiliary randomness.
const BATCH_STREAM: u64 = 1;
const AUX_STREAM: u64 = 2;

/// Runs `config.iterations` steps of momentum SGD starting from `net`.
pub fn train(net: TwoHeadNet, dataset: &Dataset, config: &TrainConfig) -> Result<(TwoHeadNet, TrainLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    if dataset.sample_shape() != net.config().input.as_slice() {
        return Err(Error::ShapeError(format!(
            "dataset samples {:?}, network input {:?}",
            dataset.sample_shape(),
            net.config().input
        )));
    }
    if dataset.n_classes > net.config().n_classes {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes, network {}",
            dataset.n_classes,
            net.config().n_classes
        )));
    }
    let mut net = net;
    let index = DatasetIndex::new(&dataset.labels, dataset.n_classes)?;
    let root = SeededRng::new(config.seed);
    let mut batch_rng = root.fork(BATCH_STREAM);
    let mut aux_rng = root.fork(AUX_STREAM);
    let d_emb = net.config().d_emb;
    let mut centers = match config.regularizer {
        Regularizer::Center { alpha } | Regularizer::Tcl { alpha, .. } => {
            Some(ClassCenters::zeros(net.config().n_classes, d_emb, alpha)?)
        }
        _ => None,
    };
    let mut velocity: Vec<DenseArray> = net.params().iter().map(|p| DenseArray::zeros(p.shape().to_vec())).collect();
    let mut monitor = CollapseMonitor { threshold: config.collapse_threshold, raised: false };
    let mut log = TrainLog::default();
    let margin = config.margin();

    for t in 0..config.iterations {
        let lr = lr_schedule(t, config.iterations, config.base_lr, config.lr_power)?;

        let mut pooled_triplets = None;
        let ids = match config.batch {
            BatchConfig::Pk { b, k } => pk_sample(&index, b, k, &mut batch_rng)?.ids,
            BatchConfig::Uniform { b } => uniform_sample(&index, b, &mut batch_rng)?.ids,
            BatchConfig::Imbalanced { b, n_b } => {
                let embed = |pool: &[usize]| {
                    let samples: Vec<&DenseArray> = pool.iter().map(|&i| &dataset.samples[i]).collect();
                    let labels: Vec<usize> = pool.iter().map(|&i| dataset.labels[i]).collect();
                    Ok(embed_samples(&net, &samples, &labels)?.embeddings)
                };
                match imbalanced_round(&index, b, n_b, embed, margin, &mut batch_rng) {
                    Ok(round) if !round.triplets.is_empty() => {
                        pooled_triplets = Some(round.triplets);
                        round.ids
                    }
                    Ok(_) | Err(Error::EmptyTripletSet) => uniform_sample(&index, b, &mut batch_rng)?.ids,
                    Err(e) => return Err(e),
                }
            }
        };
        let labels: Vec<usize> = ids.iter().map(|&i| dataset.labels[i]).collect();
        let traces = ids.iter().map(|&i| net.forward(&dataset.samples[i])).collect::<Result<Vec<_>>>()?;
        let out = embedded_from_traces(&net, &traces, &labels)?;
        let soft = softmax_ce(&out.logits, &labels)?;

        let mut kinds = KindCounts::default();
        let dists = if out.embeddings.len() >= 2 { Some(pairwise_sq_distances(&out.embeddings)?) } else { None };
        let embed_part: Option<LossResult> = match config.regularizer {
            Regularizer::None => None,
            Regularizer::Triplet { mining, margin_mode } => {
                let mined = match (pooled_triplets.take(), &dists) {
                    (Some(tr), _) => Ok(tr),
                    (None, Some(d)) => match mining {
                        Mining::Hard => mine_batch_hard(d, &labels),
                        Mining::SemiHard => mine_semi_hard(d, &labels, margin),
                    },
                    (None, None) => Err(Error::EmptyTripletSet),
                };
                match mined {
                    Ok(tr) if !tr.is_empty() => {
                        let d = dists.as_ref().expect("triplets imply two samples");
                        kinds = tr.kind_counts(d, margin);
                        Some(triplet_loss(&out.embeddings, d, &tr, margin_mode)?)
                    }
                    Ok(_) | Err(Error::EmptyTripletSet) => {
                        log.events.push(format!("iteration {t}: no triplets, softmax-only step"));
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
            Regularizer::Center { .. } => Some(center_loss(&out.embeddings, centers.as_ref().unwrap())?),
            Regularizer::Tcl { margin, .. } => Some(tcl_loss(&out.embeddings, centers.as_ref().unwrap(), margin)?),
            Regularizer::Magnet { k_clusters, alpha_margin } => {
                let mc = assign_magnet_clusters(&out.embeddings, k_clusters, alpha_margin, &mut aux_rng)?;
                Some(magnet_loss(&out.embeddings, &mc)?)
            }
        };
        let embed_part = embed_part.unwrap_or_default();
        let soft_for_grad = if config.detach_softmax {
            LossResult { value: soft.value, ..Default::default() }
        } else {
            soft.clone()
        };
        let total = combined_loss(&soft_for_grad, &embed_part, config.lambda)?;

        let mut grads = Gradients::zeros_like(&net);
        let zero_logits = vec![0.0; net.config().n_classes];
        let zero_emb = vec![0.0; d_emb];
        for (i, trace) in traces.iter().enumerate() {
            let gl = total.grad_logits.as_ref().map_or(zero_logits.as_slice(), |g| g.row(i));
            let ge = total.grad_embeddings.as_ref().map_or(zero_emb.as_slice(), |g| g.row(i));
            net.backward_into(trace, gl, ge, &mut grads)?;
        }
        {
            let mut params = net.params_mut();
            sgd_momentum_step(&mut params, &grads.tensors, &mut velocity, lr, config.momentum)?;
        }
        if let Some(c) = centers.as_mut() {
            c.update(&out.embeddings)?;
        }

        let mean_norm = out.raw_norms.iter().sum::<f64>() / out.raw_norms.len() as f64;
        let max_dist = dists.as_ref().map_or(f64::INFINITY, |d| {
            (0..d.len()).flat_map(|i| d.row(i).iter().copied()).fold(0.0, f64::max)
        });
        match monitor.observe(mean_norm, max_dist) {
            Some(true) => log.events.push(format!("iteration {t}: collapse raised (mean norm {mean_norm:e})")),
            Some(false) => log.events.push(format!("iteration {t}: collapse cleared (mean norm {mean_norm:e})")),
            None => {}
        }
        log.records.push(TrainRecord {
            iteration: t,
            loss_total: soft.value + config.lambda * embed_part.value,
            loss_soft: soft.value,
            loss_embed: embed_part.value,
            lr,
            n_semi: kinds.semi_hard,
            n_easy: kinds.easy,
            n_hard: kinds.hard,
            mean_norm,
            collapse: monitor.raised,
        });
    }
    Ok((net, log))
}
