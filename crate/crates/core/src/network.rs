//! Two-head network: a convolutional trunk producing a spatial feature map
//! `h`, a classification head on the average-pooled features `x = pool(h)`,
//! and an embedding head on `flatten(h)` whose output is L2-normalized.
//!
//! Images are stored `height x width x channels`, row-major.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_in_place, DEFAULT_NORM_EPSILON};
use crate::tensor::{DenseArray, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    fn output_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.kernel == 0 || self.stride == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// `[height, width, channels]`.
    pub input: [usize; 3],
    pub conv: Vec<ConvSpec>,
    pub n_classes: usize,
    pub d_emb: usize,
    #[serde(default = "default_eps")]
    pub norm_epsilon: f64,
}

fn default_eps() -> f64 {
    DEFAULT_NORM_EPSILON
}

impl Default for NetConfig {
    /// Two 3x3 stride-2 convolutions with 8 channels on 16x16 grayscale input.
    fn default() -> Self {
        Self::desk(1, 10, 256)
    }
}

impl NetConfig {
    /// Desk trunk on a 16x16 input with `channels` channels.
    pub fn desk(channels: usize, n_classes: usize, d_emb: usize) -> Self {
        let conv = ConvSpec { out_channels: 8, kernel: 3, stride: 2, padding: 1 };
        Self {
            input: [16, 16, channels],
            conv: vec![conv, conv],
            n_classes,
            d_emb,
            norm_epsilon: DEFAULT_NORM_EPSILON,
        }
    }

    /// Shapes `[height, width, channels]` of the input and each layer output.
    pub fn layer_shapes(&self) -> Result<Vec<[usize; 3]>> {
        if self.conv.is_empty() {
            return Err(Error::InvalidConfig("trunk needs at least one convolution".into()));
        }
        if self.input.contains(&0) || self.n_classes < 2 || self.d_emb == 0 {
            return Err(Error::InvalidConfig(
                "input dims must be positive, n_classes >= 2, d_emb >= 1".into(),
            ));
        }
        if !(self.norm_epsilon > 0.0) {
            return Err(Error::InvalidConfig("norm_epsilon must be positive".into()));
        }
        let mut shapes = vec![self.input];
        for (i, c) in self.conv.iter().enumerate() {
            let [h, w, _] = *shapes.last().unwrap();
            match (c.output_size(h), c.output_size(w)) {
                (Some(oh), Some(ow)) if c.out_channels > 0 => shapes.push([oh, ow, c.out_channels]),
                _ => return Err(Error::InvalidConfig(format!("conv layer {i} is invalid: {c:?}"))),
            }
        }
        Ok(shapes)
    }

    /// Closed-form number of trainable scalars.
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.layer_shapes()?;
        let mut total = 0;
        for (c, s) in self.conv.iter().zip(&shapes) {
            total += c.kernel * c.kernel * s[2] * c.out_channels + c.out_channels;
        }
        let [h, w, ch] = *shapes.last().unwrap();
        Ok(total + ch * self.n_classes + h * w * ch * self.d_emb)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    spec: ConvSpec,
    /// `[out, kernel, kernel, in]`.
    weight: DenseArray,
    bias: DenseArray,
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

/// Trunk, logits head `W_logits: channels x n_classes` and embedding head
/// `W_emb: (h_cells * channels) x d_emb`.
#[derive(Debug)]
pub struct TwoHeadNet {
    config: NetConfig,
    shapes: Vec<[usize; 3]>,
    convs: Vec<ConvLayer>,
    w_logits: DenseArray,
    w_emb: DenseArray,
    id: u64,
    version: u64,
}

impl Clone for TwoHeadNet {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            shapes: self.shapes.clone(),
            convs: self.convs.clone(),
            w_logits: self.w_logits.clone(),
            w_emb: self.w_emb.clone(),
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

impl PartialEq for TwoHeadNet {
    /// Parameter equality; identity is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.convs == other.convs
            && self.w_logits == other.w_logits
            && self.w_emb == other.w_emb
    }
}

/// Which parameters a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Trunk,
    Logits,
    Embedding,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input followed by each post-ReLU layer output; the last one is `h`.
    pub activations: Vec<DenseArray>,
    /// Spatial average of `h` per channel.
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
    pub raw_embedding: Vec<f64>,
    pub raw_norm: f64,
    pub embedding: Vec<f64>,
    /// True when the raw embedding norm fell under the normalization epsilon.
    pub collapsed: bool,
    net_id: u64,
    net_version: u64,
}

impl ForwardTrace {
    pub fn h(&self) -> &DenseArray {
        self.activations.last().expect("trace has activations")
    }
}

/// Gradients laid out like [`TwoHeadNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<DenseArray>,
}

impl Gradients {
    pub fn zeros_like(net: &TwoHeadNet) -> Self {
        Self { tensors: net.params().iter().map(|p| DenseArray::zeros(p.shape().to_vec())).collect() }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}

fn he_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut SeededRng) -> DenseArray {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    DenseArray::new(shape, data).expect("shape matches data")
}

/// He-uniform weights, zero biases.
pub fn init_params(config: &NetConfig, rng: &mut SeededRng) -> Result<TwoHeadNet> {
    let shapes = config.layer_shapes()?;
    let convs = config
        .conv
        .iter()
        .zip(&shapes)
        .map(|(spec, s)| {
            let fan_in = spec.kernel * spec.kernel * s[2];
            ConvLayer {
                spec: *spec,
                weight: he_uniform(vec![spec.out_channels, spec.kernel, spec.kernel, s[2]], fan_in, rng),
                bias: DenseArray::zeros(vec![spec.out_channels]),
            }
        })
        .collect();
    let [h, w, c] = *shapes.last().unwrap();
    let w_logits = he_uniform(vec![c, config.n_classes], c, rng);
    let w_emb = he_uniform(vec![h * w * c, config.d_emb], h * w * c, rng);
    Ok(TwoHeadNet {
        config: config.clone(),
        shapes,
        convs,
        w_logits,
        w_emb,
        id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
        version: 0,
    })
}

fn conv_forward(layer: &ConvLayer, input: &DenseArray, in_shape: [usize; 3], out_shape: [usize; 3]) -> DenseArray {
    let [ih, iw, ic] = in_shape;
    let [oh, ow, oc] = out_shape;
    let ConvSpec { kernel, stride, padding, .. } = layer.spec;
    let x = input.data();
    let wt = layer.weight.data();
    let b = layer.bias.data();
    let mut out = vec![0.0; oh * ow * oc];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * oc..(oy * ow + ox + 1) * oc];
            dst.copy_from_slice(b);
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= ih as isize {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= iw as isize {
                        continue;
                    }
                    let src = &x[(iy as usize * iw + ix as usize) * ic..][..ic];
                    for (o, acc) in dst.iter_mut().enumerate() {
                        let wrow = &wt[((o * kernel + ky) * kernel + kx) * ic..][..ic];
                        *acc += wrow.iter().zip(src).map(|(w, v)| w * v).sum::<f64>();
                    }
                }
            }
        }
    }
    DenseArray::new(vec![oh, ow, oc], out).expect("conv output shape")
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn conv_backward(
    layer: &ConvLayer,
    input: &DenseArray,
    grad_out: &[f64],
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    grad_w: &mut DenseArray,
    grad_b: &mut DenseArray,
) -> Vec<f64> {
    let [ih, iw, ic] = in_shape;
    let [oh, ow, oc] = out_shape;
    let ConvSpec { kernel, stride, padding, .. } = layer.spec;
    let x = input.data();
    let wt = layer.weight.data();
    let gw = grad_w.data_mut();
    let gb = grad_b.data_mut();
    let mut grad_in = vec![0.0; ih * iw * ic];
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &grad_out[(oy * ow + ox) * oc..][..oc];
            for (o, &go) in g.iter().enumerate() {
                gb[o] += go;
            }
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= ih as isize {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= iw as isize {
                        continue;
                    }
                    let base = (iy as usize * iw + ix as usize) * ic;
                    for (o, &go) in g.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        let woff = ((o * kernel + ky) * kernel + kx) * ic;
                        for c in 0..ic {
                            gw[woff + c] += go * x[base + c];
                            grad_in[base + c] += go * wt[woff + c];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

impl TwoHeadNet {
    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn h_shape(&self) -> [usize; 3] {
        *self.shapes.last().unwrap()
    }

    /// Length of `flatten(h)`.
    pub fn h_dim(&self) -> usize {
        self.h_shape().iter().product()
    }

    /// Length of the pooled vector `x`.
    pub fn pooled_dim(&self) -> usize {
        self.h_shape()[2]
    }

    /// Parameters in a fixed order: each conv weight then bias, `W_logits`, `W_emb`.
    pub fn params(&self) -> Vec<&DenseArray> {
        let mut v: Vec<&DenseArray> = Vec::new();
        for c in &self.convs {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        v.push(&self.w_logits);
        v.push(&self.w_emb);
        v
    }

    /// Mutable parameters; invalidates outstanding traces.
    pub fn params_mut(&mut self) -> Vec<&mut DenseArray> {
        self.version += 1;
        let mut v: Vec<&mut DenseArray> = Vec::new();
        for c in &mut self.convs {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v.push(&mut self.w_logits);
        v.push(&mut self.w_emb);
        v
    }

    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut g = vec![ParamGroup::Trunk; 2 * self.convs.len()];
        g.push(ParamGroup::Logits);
        g.push(ParamGroup::Embedding);
        g
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn forward(&self, input: &DenseArray) -> Result<ForwardTrace> {
        if input.shape() != self.config.input.as_slice() {
            return Err(Error::ShapeError(format!(
                "input {:?}, network expects {:?}",
                input.shape(),
                self.config.input
            )));
        }
        let mut activations = Vec::with_capacity(self.convs.len() + 1);
        activations.push(input.clone());
        for (l, layer) in self.convs.iter().enumerate() {
            let mut out = conv_forward(layer, &activations[l], self.shapes[l], self.shapes[l + 1]);
            out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(out);
        }
        let h = activations.last().unwrap();
        let [hh, hw, hc] = self.h_shape();
        let cells = (hh * hw) as f64;
        let mut pooled = vec![0.0; hc];
        for cell in h.data().chunks_exact(hc) {
            for (p, v) in pooled.iter_mut().zip(cell) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= cells);

        let n = self.config.n_classes;
        let mut logits = vec![0.0; n];
        for (i, &xi) in pooled.iter().enumerate() {
            for (l, w) in logits.iter_mut().zip(self.w_logits.row(i)) {
                *l += xi * w;
            }
        }
        let mut raw = vec![0.0; self.config.d_emb];
        for (i, &hi) in h.data().iter().enumerate() {
            if hi == 0.0 {
                continue;
            }
            for (r, w) in raw.iter_mut().zip(self.w_emb.row(i)) {
                *r += hi * w;
            }
        }
        let mut embedding = raw.clone();
        let raw_norm = normalize_in_place(&mut embedding, self.config.norm_epsilon);
        Ok(ForwardTrace {
            activations,
            pooled,
            logits,
            raw_embedding: raw,
            raw_norm,
            embedding,
            collapsed: raw_norm < self.config.norm_epsilon,
            net_id: self.id,
            net_version: self.version,
        })
    }

    /// Reverse pass for one sample. Parameter gradients are added to `grads`;
    /// the gradient with respect to the input is returned.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        grad_logits: &[f64],
        grad_embedding: &[f64],
        grads: &mut Gradients,
    ) -> Result<DenseArray> {
        if trace.net_id != self.id || trace.net_version != self.version {
            return Err(Error::TraceMismatch);
        }
        let (n, d) = (self.config.n_classes, self.config.d_emb);
        if grad_logits.len() != n || grad_embedding.len() != d {
            return Err(Error::ShapeError(format!(
                "gradients of length {}/{} for {n} logits and {d} embedding dims",
                grad_logits.len(),
                grad_embedding.len()
            )));
        }
        if grads.tensors.len() != 2 * self.convs.len() + 2 {
            return Err(Error::ShapeError("gradient buffer layout".into()));
        }
        let eps = self.config.norm_epsilon;
        let mut g_raw = grad_embedding.to_vec();
        if trace.raw_norm >= eps {
            let dot: f64 = g_raw.iter().zip(&trace.embedding).map(|(g, e)| g * e).sum();
            for (g, e) in g_raw.iter_mut().zip(&trace.embedding) {
                *g = (*g - dot * e) / trace.raw_norm;
            }
        } else {
            g_raw.iter_mut().for_each(|g| *g /= eps);
        }

        let nt = grads.tensors.len();
        let h = trace.h();
        let hc = self.pooled_dim();
        let cells = (h.len() / hc) as f64;
        let mut g_h = vec![0.0; h.len()];
        {
            let gwe = grads.tensors[nt - 1].data_mut();
            for (i, &hi) in h.data().iter().enumerate() {
                let wrow = self.w_emb.row(i);
                let grow = &mut gwe[i * d..(i + 1) * d];
                let mut acc = 0.0;
                for j in 0..d {
                    grow[j] += hi * g_raw[j];
                    acc += wrow[j] * g_raw[j];
                }
                g_h[i] = acc;
            }
        }
        {
            let gwl = grads.tensors[nt - 2].data_mut();
            let mut g_x = vec![0.0; hc];
            for (i, &xi) in trace.pooled.iter().enumerate() {
                let wrow = self.w_logits.row(i);
                for j in 0..n {
                    gwl[i * n + j] += xi * grad_logits[j];
                    g_x[i] += wrow[j] * grad_logits[j];
                }
            }
            for cell in g_h.chunks_exact_mut(hc) {
                for (g, gx) in cell.iter_mut().zip(&g_x) {
                    *g += gx / cells;
                }
            }
        }

        let mut grad = g_h;
        for l in (0..self.convs.len()).rev() {
            let out = &trace.activations[l + 1];
            for (g, &a) in grad.iter_mut().zip(out.data()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let (gw, gb) = grads.tensors.split_at_mut(2 * l + 1);
            grad = conv_backward(
                &self.convs[l],
                &trace.activations[l],
                &grad,
                self.shapes[l],
                self.shapes[l + 1],
                &mut gw[2 * l],
                &mut gb[0],
            );
        }
        DenseArray::new(self.config.input.to_vec(), grad)
    }

    /// Parameter and input gradients for a single sample.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_logits: &[f64],
        grad_embedding: &[f64],
    ) -> Result<(Gradients, DenseArray)> {
        let mut grads = Gradients::zeros_like(self);
        let input = self.backward_into(trace, grad_logits, grad_embedding, &mut grads)?;
        Ok((grads, input))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(&mut w, CHECKPOINT_VERSION)?;
        for v in c.input {
            put_u32(&mut w, v as u32)?;
        }
        put_u32(&mut w, c.conv.len() as u32)?;
        for s in &c.conv {
            for v in [s.out_channels, s.kernel, s.stride, s.padding] {
                put_u32(&mut w, v as u32)?;
            }
        }
        put_u32(&mut w, c.n_classes as u32)?;
        put_u32(&mut w, c.d_emb as u32)?;
        w.write_all(&c.norm_epsilon.to_le_bytes())?;
        let params = self.params();
        put_u32(&mut w, params.len() as u32)?;
        for p in params {
            put_u32(&mut w, p.shape().len() as u32)?;
            for &dim in p.shape() {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::InvalidConfig("not a twohead checkpoint".into()));
        }
        let version = get_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported checkpoint version {version}")));
        }
        let input = [get_u32(&mut r)? as usize, get_u32(&mut r)? as usize, get_u32(&mut r)? as usize];
        let n_conv = get_u32(&mut r)? as usize;
        let mut conv = Vec::with_capacity(n_conv.min(1024));
        for _ in 0..n_conv {
            conv.push(ConvSpec {
                out_channels: get_u32(&mut r)? as usize,
                kernel: get_u32(&mut r)? as usize,
                stride: get_u32(&mut r)? as usize,
                padding: get_u32(&mut r)? as usize,
            });
        }
        let n_classes = get_u32(&mut r)? as usize;
        let d_emb = get_u32(&mut r)? as usize;
        let norm_epsilon = get_f64(&mut r)?;
        let config = NetConfig { input, conv, n_classes, d_emb, norm_epsilon };
        let mut net = init_params(&config, &mut SeededRng::new(0))?;
        let count = get_u32(&mut r)? as usize;
        let mut params = net.params_mut();
        if count != params.len() {
            return Err(Error::ShapeError(format!("checkpoint has {count} tensors, expected {}", params.len())));
        }
        for p in params.iter_mut() {
            let ndim = get_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            if shape != p.shape() {
                return Err(Error::ShapeError(format!("tensor shape {shape:?}, expected {:?}", p.shape())));
            }
            let data = (0..p.len()).map(|_| get_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            **p = DenseArray::new(shape, data)?;
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Checkpoint layout, all integers and floats little-endian:
/// `"THNC"`, `u32` version, `u32 x 3` input shape, `u32` conv count, per conv
/// `u32 x 4` (out_channels, kernel, stride, padding), `u32` n_classes,
/// `u32` d_emb, `f64` norm epsilon, `u32` tensor count, and per tensor
/// `u32` rank, `u64` per dim, then `f64` values row-major.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"THNC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
