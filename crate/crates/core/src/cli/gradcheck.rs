//! Analytic-versus-finite-difference gradient checks for every loss and for
//! each parameter group of the network.

use crate::error::Result;
use crate::geometry::{pairwise_sq_distances, sq_dist, EmbeddingBatch};
use crate::losses::{
    assign_magnet_clusters, center_loss, combined_loss, magnet_loss, softmax_ce, tcl_loss, triplet_loss,
    ClassCenters, MagnetConfig, MarginMode,
};
use crate::mining::{enumerate_all_triplets, mine_semi_hard, TripletSet};
use crate::network::{init_params, ConvSpec, Gradients, NetConfig, ParamGroup, TwoHeadNet};
use crate::tensor::{finite_diff_grad, relative_error, DenseArray, SeededRng, DEFAULT_FD_STEP};

/// Relative error above which a component fails.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Distance from any hinge kink that a sampled point must keep.
const KINK_CLEARANCE: f64 = 1e-3;

pub const COMPONENTS: [&str; 9] = [
    "softmax",
    "triplet-hard",
    "triplet-soft",
    "center",
    "tcl",
    "magnet",
    "network-trunk",
    "network-logits",
    "network-embedding",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub component: &'static str,
    pub points: usize,
    pub max_rel_error: f64,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub points: usize,
    /// Scale the analytic gradient of this component by 1.01 to exercise the detector.
    pub perturb: Option<String>,
}

fn random_array(shape: Vec<usize>, scale: f64, rng: &mut SeededRng) -> DenseArray {
    let n = shape.iter().product();
    DenseArray::new(shape, (0..n).map(|_| scale * rng.normal()).collect()).expect("finite draws")
}

fn batch_of(vectors: &DenseArray, labels: &[usize]) -> EmbeddingBatch {
    EmbeddingBatch::new(vectors.clone(), labels.to_vec()).expect("valid batch")
}

struct Checker<'a> {
    perturb: Option<&'a str>,
}

impl Checker<'_> {
    fn compare(&self, component: &str, analytic: &DenseArray, numeric: &DenseArray) -> f64 {
        let mut a = analytic.data().to_vec();
        if self.perturb == Some(component) {
            a.iter_mut().for_each(|v| *v *= 1.01);
        }
        relative_error(&a, numeric.data())
    }
}

const LABELS6: [usize; 6] = [0, 0, 1, 1, 2, 2];

fn softmax_point(rng: &mut SeededRng, ck: &Checker) -> Result<Option<f64>> {
    let labels = [0, 3, 1, 1];
    let logits = random_array(vec![4, 5], 2.0, rng);
    let analytic = softmax_ce(&logits, &labels)?.grad_logits.expect("softmax gradient");
    let numeric = finite_diff_grad(|l| softmax_ce(l, &labels).map_or(f64::NAN, |r| r.value), &logits, DEFAULT_FD_STEP)?;
    Ok(Some(ck.compare("softmax", &analytic, &numeric)))
}

fn triplet_value(v: &DenseArray, triplets: &TripletSet, mode: MarginMode) -> f64 {
    let batch = batch_of(v, &LABELS6);
    let d = pairwise_sq_distances(&batch).expect("b >= 2");
    triplet_loss(&batch, &d, triplets, mode).map_or(f64::NAN, |r| r.value)
}

fn triplet_point(rng: &mut SeededRng, mode: MarginMode, ck: &Checker, name: &str) -> Result<Option<f64>> {
    let v = random_array(vec![6, 3], 0.5, rng);
    let batch = batch_of(&v, &LABELS6);
    let d = pairwise_sq_distances(&batch)?;
    let triplets = enumerate_all_triplets(&LABELS6);
    if let MarginMode::Hard { margin } = mode {
        let args: Vec<f64> = triplets
            .triplets
            .iter()
            .map(|t| d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + margin)
            .collect();
        if args.iter().any(|z| z.abs() < KINK_CLEARANCE) || args.iter().all(|&z| z < 0.0) {
            return Ok(None);
        }
    }
    let analytic = triplet_loss(&batch, &d, &triplets, mode)?.grad_embeddings.expect("triplet gradient");
    let numeric = finite_diff_grad(|p| triplet_value(p, &triplets, mode), &v, DEFAULT_FD_STEP)?;
    Ok(Some(ck.compare(name, &analytic, &numeric)))
}

fn center_point(rng: &mut SeededRng, ck: &Checker) -> Result<Option<f64>> {
    let v = random_array(vec![6, 3], 1.0, rng);
    let centers = ClassCenters::new(random_array(vec![3, 3], 1.0, rng), 0.5)?;
    let analytic = center_loss(&batch_of(&v, &LABELS6), &centers)?.grad_embeddings.expect("center gradient");
    let numeric = finite_diff_grad(
        |p| center_loss(&batch_of(p, &LABELS6), &centers).map_or(f64::NAN, |r| r.value),
        &v,
        DEFAULT_FD_STEP,
    )?;
    Ok(Some(ck.compare("center", &analytic, &numeric)))
}

fn tcl_point(rng: &mut SeededRng, ck: &Checker) -> Result<Option<f64>> {
    let margin = 0.2;
    let v = random_array(vec![6, 3], 1.0, rng);
    let centers = ClassCenters::new(random_array(vec![4, 3], 1.0, rng), 0.5)?;
    let mut active = false;
    for (i, &y) in LABELS6.iter().enumerate() {
        let x = v.row(i);
        let mut others: Vec<f64> = (0..4).filter(|&j| j != y).map(|j| sq_dist(x, centers.center(j))).collect();
        others.sort_by(f64::total_cmp);
        let z = sq_dist(x, centers.center(y)) - others[0] + margin;
        if z.abs() < KINK_CLEARANCE || others[1] - others[0] < KINK_CLEARANCE {
            return Ok(None);
        }
        active |= z > 0.0;
    }
    if !active {
        return Ok(None);
    }
    let analytic = tcl_loss(&batch_of(&v, &LABELS6), &centers, margin)?.grad_embeddings.expect("tcl gradient");
    let numeric = finite_diff_grad(
        |p| tcl_loss(&batch_of(p, &LABELS6), &centers, margin).map_or(f64::NAN, |r| r.value),
        &v,
        DEFAULT_FD_STEP,
    )?;
    Ok(Some(ck.compare("tcl", &analytic, &numeric)))
}

fn magnet_point(rng: &mut SeededRng, ck: &Checker) -> Result<Option<f64>> {
    let labels: Vec<usize> = (0..12).map(|i| i / 4).collect();
    let v = random_array(vec![12, 3], 1.0, rng);
    let config: MagnetConfig = assign_magnet_clusters(&batch_of(&v, &labels), 2, 1.0, rng)?;
    let analytic = magnet_loss(&batch_of(&v, &labels), &config)?.grad_embeddings.expect("magnet gradient");
    let numeric = finite_diff_grad(
        |p| magnet_loss(&batch_of(p, &labels), &config).map_or(f64::NAN, |r| r.value),
        &v,
        DEFAULT_FD_STEP,
    )?;
    Ok(Some(ck.compare("magnet", &analytic, &numeric)))
}

fn gradcheck_net_config() -> NetConfig {
    NetConfig {
        input: [6, 6, 2],
        conv: vec![
            ConvSpec { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            ConvSpec { out_channels: 4, kernel: 3, stride: 2, padding: 1 },
        ],
        n_classes: 3,
        d_emb: 5,
        norm_epsilon: 1e-12,
    }
}

const NET_LABELS: [usize; 4] = [0, 0, 1, 1];
const NET_MARGIN: f64 = 0.2;

/// Combined softmax + triplet objective of `net` on `inputs` with fixed triplets.
fn network_objective(net: &TwoHeadNet, inputs: &[DenseArray], triplets: &TripletSet) -> Result<(f64, Gradients)> {
    let traces = inputs.iter().map(|x| net.forward(x)).collect::<Result<Vec<_>>>()?;
    let cfg = net.config();
    let logits = DenseArray::new(
        vec![inputs.len(), cfg.n_classes],
        traces.iter().flat_map(|t| t.logits.iter().copied()).collect(),
    )?;
    let emb = EmbeddingBatch::new(
        DenseArray::new(
            vec![inputs.len(), cfg.d_emb],
            traces.iter().flat_map(|t| t.embedding.iter().copied()).collect(),
        )?,
        NET_LABELS.to_vec(),
    )?;
    let d = pairwise_sq_distances(&emb)?;
    let soft = softmax_ce(&logits, &NET_LABELS)?;
    let tri = triplet_loss(&emb, &d, triplets, MarginMode::Hard { margin: NET_MARGIN })?;
    let total = combined_loss(&soft, &tri, 1.0)?;
    let mut grads = Gradients::zeros_like(net);
    let (gl, ge) = (total.grad_logits.expect("logit gradient"), total.grad_embeddings.expect("embedding gradient"));
    for (i, t) in traces.iter().enumerate() {
        net.backward_into(t, gl.row(i), ge.row(i), &mut grads)?;
    }
    Ok((total.value, grads))
}

fn network_point(rng: &mut SeededRng, ck: &Checker) -> Result<Option<[f64; 3]>> {
    let net = init_params(&gradcheck_net_config(), rng)?;
    let inputs: Vec<DenseArray> = (0..4).map(|_| random_array(vec![6, 6, 2], 1.0, rng)).collect();
    let traces = inputs.iter().map(|x| net.forward(x)).collect::<Result<Vec<_>>>()?;
    let emb = EmbeddingBatch::new(
        DenseArray::new(vec![4, 5], traces.iter().flat_map(|t| t.embedding.iter().copied()).collect())?,
        NET_LABELS.to_vec(),
    )?;
    let d = pairwise_sq_distances(&emb)?;
    let triplets = mine_semi_hard(&d, &NET_LABELS, NET_MARGIN)?;
    let args: Vec<f64> = triplets
        .triplets
        .iter()
        .map(|t| d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + NET_MARGIN)
        .collect();
    if args.iter().any(|z| z.abs() < KINK_CLEARANCE) || args.iter().all(|&z| z < 0.0) {
        return Ok(None);
    }
    let (_, analytic) = network_objective(&net, &inputs, &triplets)?;
    let groups = net.param_groups();
    let mut per_group: [(Vec<f64>, Vec<f64>); 3] = Default::default();
    for (k, group) in groups.iter().enumerate() {
        let numeric = finite_diff_grad(
            |p| {
                let mut probe = net.clone();
                *probe.params_mut()[k] = p.clone();
                network_objective(&probe, &inputs, &triplets).map_or(f64::NAN, |r| r.0)
            },
            net.params()[k],
            DEFAULT_FD_STEP,
        )?;
        let slot = match group {
            ParamGroup::Trunk => 0,
            ParamGroup::Logits => 1,
            ParamGroup::Embedding => 2,
        };
        per_group[slot].0.extend_from_slice(analytic.tensors[k].data());
        per_group[slot].1.extend_from_slice(numeric.data());
    }
    let mut out = [0.0; 3];
    for (slot, name) in ["network-trunk", "network-logits", "network-embedding"].iter().enumerate() {
        let (a, n) = &per_group[slot];
        let a = DenseArray::from_vec(a.clone())?;
        let n = DenseArray::from_vec(n.clone())?;
        out[slot] = ck.compare(name, &a, &n);
    }
    Ok(Some(out))
}

/// Runs `points` kink-free checks per component; points too close to a hinge
/// kink, or with no active hinge term, are redrawn.
pub fn run_gradcheck(options: &GradcheckOptions) -> Result<Vec<GradcheckRow>> {
    let ck = Checker { perturb: options.perturb.as_deref() };
    let root = SeededRng::new(options.seed);
    let mut rows = Vec::new();
    type PointFn<'a> = Box<dyn Fn(&mut SeededRng) -> Result<Option<f64>> + 'a>;
    let losses: [(&'static str, PointFn); 6] = [
        ("softmax", Box::new(|r| softmax_point(r, &ck))),
        ("triplet-hard", Box::new(|r| triplet_point(r, MarginMode::Hard { margin: 0.2 }, &ck, "triplet-hard"))),
        ("triplet-soft", Box::new(|r| triplet_point(r, MarginMode::Soft, &ck, "triplet-soft"))),
        ("center", Box::new(|r| center_point(r, &ck))),
        ("tcl", Box::new(|r| tcl_point(r, &ck))),
        ("magnet", Box::new(|r| magnet_point(r, &ck))),
    ];
    for (stream, (name, point)) in losses.iter().enumerate() {
        let mut rng = root.fork(stream as u64 + 1);
        let (mut done, mut worst) = (0, 0.0f64);
        while done < options.points {
            if let Some(err) = point(&mut rng)? {
                worst = worst.max(err);
                done += 1;
            }
        }
        rows.push(GradcheckRow { component: name, points: done, max_rel_error: worst });
    }
    let mut rng = root.fork(100);
    let (mut done, mut worst) = (0, [0.0f64; 3]);
    while done < options.points {
        if let Some(errs) = network_point(&mut rng, &ck)? {
            for (w, e) in worst.iter_mut().zip(errs) {
                *w = w.max(e);
            }
            done += 1;
        }
    }
    for (name, w) in COMPONENTS[6..].iter().zip(worst) {
        rows.push(GradcheckRow { component: name, points: done, max_rel_error: w });
    }
    Ok(rows)
}
