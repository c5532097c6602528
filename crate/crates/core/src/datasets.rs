//! Desk-scale data: Gaussian-mixture sets (optionally rendered as images),
//! long-tail class counts, synthetic motion videos with their
//! stack-of-difference encoding, and CSV loading.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseArray, SeededRng};

/// Labeled samples sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DenseArray>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<DenseArray>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::ShapeError(format!(
                "{} samples vs {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let shape = samples[0].shape();
        if samples.iter().any(|s| s.shape() != shape) {
            return Err(Error::ShapeError("samples differ in shape".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidLabel { label: y, n_classes });
        }
        Ok(Self { samples, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.samples[0].shape()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// The first `train_counts[c]` samples of each class (in dataset order)
    /// form the first set, the remainder the second.
    pub fn split_per_class(&self, train_counts: &[usize]) -> Result<(Dataset, Dataset)> {
        if train_counts.len() != self.n_classes {
            return Err(Error::ShapeError(format!(
                "{} split counts for {} classes",
                train_counts.len(),
                self.n_classes
            )));
        }
        let mut seen = vec![0; self.n_classes];
        let (mut a, mut b) = ((Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
        for (s, &y) in self.samples.iter().zip(&self.labels) {
            let side = if seen[y] < train_counts[y] { &mut a } else { &mut b };
            seen[y] += 1;
            side.0.push(s.clone());
            side.1.push(y);
        }
        Ok((Dataset::new(a.0, a.1, self.n_classes)?, Dataset::new(b.0, b.1, self.n_classes)?))
    }

    /// Reinterprets every sample with a new shape of the same size.
    pub fn reshape_samples(self, shape: &[usize]) -> Result<Self> {
        let samples = self
            .samples
            .into_iter()
            .map(|s| s.reshape(shape.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, ..self })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleCounts {
    PerClass(usize),
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputMode {
    /// Raw latent vectors of dimension `dim`.
    Vector { dim: usize },
    /// Latent vectors of dimension `latent_dim` rendered as `height x width x channels`
    /// low-frequency patterns.
    Image { width: usize, height: usize, channels: usize, latent_dim: usize },
}

impl InputMode {
    fn latent_dim(&self) -> usize {
        match *self {
            InputMode::Vector { dim } => dim,
            InputMode::Image { latent_dim, .. } => latent_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    #[serde(default = "one")]
    pub modes_per_class: usize,
    pub counts: SampleCounts,
    pub input: InputMode,
    pub sigma: f64,
    /// Mode centers are drawn uniformly from `[-spread, spread]^latent_dim`.
    #[serde(default = "one_f")]
    pub spread: f64,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.modes_per_class < 1 || !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig(
                "need n_classes >= 2, modes_per_class >= 1, sigma > 0".into(),
            ));
        }
        if self.input.latent_dim() == 0 || !(self.spread > 0.0) {
            return Err(Error::InvalidConfig("latent dim and spread must be positive".into()));
        }
        if let SampleCounts::Explicit(c) = &self.counts {
            if c.len() != self.n_classes {
                return Err(Error::InvalidConfig(format!(
                    "{} counts for {} classes",
                    c.len(),
                    self.n_classes
                )));
            }
        }
        if let InputMode::Image { width, height, channels, .. } = self.input {
            if width == 0 || height == 0 || channels == 0 {
                return Err(Error::InvalidConfig("empty image shape".into()));
            }
        }
        Ok(())
    }

    fn count(&self, class: usize) -> usize {
        match &self.counts {
            SampleCounts::PerClass(n) => *n,
            SampleCounts::Explicit(c) => c[class],
        }
    }
}

/// A generated set together with its latent structure.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// `(n_classes * modes_per_class) x latent_dim`; mode `c * modes + m` belongs to class `c`.
    pub mode_centers: DenseArray,
    pub latents: Vec<Vec<f64>>,
    pub modes: Vec<usize>,
}

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Gaussian mixture with `modes_per_class` modes per class, all mode centers
/// at least `6 sigma` apart.
pub fn gen_synthetic(spec: &SyntheticSpec, rng: &mut SeededRng) -> Result<SyntheticData> {
    spec.validate()?;
    let dim = spec.input.latent_dim();
    let n_modes = spec.n_classes * spec.modes_per_class;
    let separation = 6.0 * spec.sigma;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    while centers.len() < n_modes {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c: Vec<f64> = (0..dim).map(|_| rng.uniform_range(-spec.spread, spec.spread)).collect();
            let dist_ok = centers.iter().all(|o| {
                c.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
            });
            if dist_ok {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementFailure { modes: n_modes, separation });
        }
    }

    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut latents = Vec::new();
    let mut modes = Vec::new();
    for class in 0..spec.n_classes {
        for j in 0..spec.count(class) {
            let mode = class * spec.modes_per_class + j % spec.modes_per_class;
            let z: Vec<f64> = centers[mode].iter().map(|m| m + spec.sigma * rng.normal()).collect();
            samples.push(match spec.input {
                InputMode::Vector { .. } => DenseArray::from_vec(z.clone())?,
                InputMode::Image { width, height, channels, .. } => {
                    render_pattern(&z, width, height, channels)
                }
            });
            labels.push(class);
            latents.push(z);
            modes.push(mode);
        }
    }
    let mode_centers = DenseArray::from_rows(&centers)?;
    Ok(SyntheticData { dataset: Dataset::new(samples, labels, spec.n_classes)?, mode_centers, latents, modes })
}

/// Renders a latent vector as a sum of low-frequency cosine patterns, one per
/// latent coordinate, into a `height x width x channels` array.
pub fn render_pattern(z: &[f64], width: usize, height: usize, channels: usize) -> DenseArray {
    use std::f64::consts::PI;
    let mut img = DenseArray::zeros(vec![height, width, channels]);
    let data = img.data_mut();
    for (l, &amp) in z.iter().enumerate() {
        let fy = 1.0 + (l % 3) as f64;
        let fx = 1.0 + ((l / 3) % 3) as f64;
        let phase = 0.7 * l as f64;
        for y in 0..height {
            let py = (2.0 * PI * fy * (y as f64 + 0.5) / height as f64 + phase).cos();
            for x in 0..width {
                let px = (2.0 * PI * fx * (x as f64 + 0.5) / width as f64 + 0.5 * phase).cos();
                for c in 0..channels {
                    let pc = (c as f64 * (l as f64 + 1.0)).cos();
                    data[(y * width + x) * channels + c] += amp * py * px * pc;
                }
            }
        }
    }
    img
}

/// Class `i` gets `max(1, round(head_count * decay^i))` samples.
pub fn gen_long_tail(n_classes: usize, head_count: usize, decay: f64) -> Result<Vec<usize>> {
    if head_count == 0 || !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "need head_count >= 1 and decay in (0, 1], got {head_count}, {decay}"
        )));
    }
    Ok((0..n_classes)
        .map(|i| ((head_count as f64 * decay.powi(i as i32)).round() as usize).max(1))
        .collect())
}

/// An 8-bit RGB frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbFrame {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self { width, height, pixels: vec![rgb; width * height] }
    }

    /// Luma grayscale rounded to an integer in `[0, 255]`.
    pub fn gray(&self) -> Vec<i16> {
        self.pixels
            .iter()
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as i16)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoEvent {
    pub frames: Vec<RgbFrame>,
    pub frame_rate: f64,
    pub label: usize,
}

pub const SOD_FRAMES: usize = 6;
pub const SOD_CHANNELS: usize = SOD_FRAMES - 1;

/// Five-channel stack of consecutive grayscale frame differences, values in
/// `[-255, 255]`, stored `height x width x 5`.
#[derive(Debug, Clone, PartialEq)]
pub struct SodStack {
    pub width: usize,
    pub height: usize,
    pub data: Vec<i16>,
}

impl SodStack {
    pub fn at(&self, y: usize, x: usize, channel: usize) -> i16 {
        self.data[(y * self.width + x) * SOD_CHANNELS + channel]
    }

    /// Network input scaled by `1/255` into `[-1, 1]`.
    pub fn to_input(&self) -> DenseArray {
        let data = self.data.iter().map(|&v| v as f64 / 255.0).collect();
        DenseArray::new(vec![self.height, self.width, SOD_CHANNELS], data)
            .expect("sod stack shape is consistent")
    }
}

/// Encodes a uniformly chosen window of six consecutive frames.
pub fn sod_encode(event: &VideoEvent, rng: &mut SeededRng) -> Result<SodStack> {
    let n = event.frames.len();
    if n < SOD_FRAMES {
        return Err(Error::EventTooShort { frames: n, needed: SOD_FRAMES });
    }
    let start = rng.below(n - SOD_FRAMES + 1);
    let window = &event.frames[start..start + SOD_FRAMES];
    let (w, h) = (window[0].width, window[0].height);
    if window.iter().any(|f| f.width != w || f.height != h || f.pixels.len() != w * h) {
        return Err(Error::ShapeError("frames differ in size".into()));
    }
    let gray: Vec<Vec<i16>> = window.iter().map(RgbFrame::gray).collect();
    let mut data = vec![0i16; w * h * SOD_CHANNELS];
    for p in 0..w * h {
        for k in 0..SOD_CHANNELS {
            data[p * SOD_CHANNELS + k] = gray[k + 1][p] - gray[k][p];
        }
    }
    Ok(SodStack { width: w, height: h, data })
}

/// Per-class motion of a bright square: static, then the four axis
/// directions, then the diagonals.
const MOTIONS: [(i32, i32); 9] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (-1, 1), (1, -1)];

pub const VIDEO_SIZE: usize = 16;
const SQUARE: usize = 4;

/// Synthetic motion events, `events_per_class` per class, 6 to 8 frames each
/// at 3 frames per second.
pub fn gen_synthetic_video(
    n_classes: usize,
    events_per_class: usize,
    rng: &mut SeededRng,
) -> Result<Vec<VideoEvent>> {
    if n_classes < 2 || n_classes > MOTIONS.len() {
        return Err(Error::InvalidConfig(format!(
            "n_classes must be in 2..={}, got {n_classes}",
            MOTIONS.len()
        )));
    }
    let mut events = Vec::with_capacity(n_classes * events_per_class);
    for label in 0..n_classes {
        let (vx, vy) = MOTIONS[label];
        for _ in 0..events_per_class {
            let n_frames = SOD_FRAMES + rng.below(3);
            let travel = (n_frames - 1) as i32;
            let span = (VIDEO_SIZE - SQUARE) as i32;
            let start = |v: i32, rng: &mut SeededRng| -> i32 {
                match v {
                    0 => rng.below(span as usize + 1) as i32,
                    v if v > 0 => rng.below((span - travel) as usize + 1) as i32,
                    _ => travel + rng.below((span - travel) as usize + 1) as i32,
                }
            };
            let (x0, y0) = (start(vx, rng), start(vy, rng));
            let bg = rng.below(60) as u8;
            let fg = [
                150 + rng.below(106) as u8,
                150 + rng.below(106) as u8,
                150 + rng.below(106) as u8,
            ];
            let frames = (0..n_frames as i32)
                .map(|t| {
                    let mut f = RgbFrame::filled(VIDEO_SIZE, VIDEO_SIZE, [bg; 3]);
                    let (sx, sy) = ((x0 + vx * t) as usize, (y0 + vy * t) as usize);
                    for y in sy..sy + SQUARE {
                        for x in sx..sx + SQUARE {
                            f.pixels[y * VIDEO_SIZE + x] = fg;
                        }
                    }
                    f
                })
                .collect();
            events.push(VideoEvent { frames, frame_rate: 3.0, label });
        }
    }
    Ok(events)
}

/// Rows of `label,f1,...,fd`. With `has_header` the first row is skipped.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(e.to_string()))?;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::ParseError { line, message };
        if record.len() < 2 {
            return Err(bad("expected a label and at least one feature".into()));
        }
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(bad(format!("expected {} fields, got {}", width.unwrap(), record.len())));
        }
        let label: usize = record[0].parse().map_err(|_| bad(format!("bad label {:?}", &record[0])))?;
        let features = record
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad value {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let sample = DenseArray::from_vec(features).map_err(|e| bad(e.to_string()))?;
        samples.push(sample);
        labels.push(label);
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(samples, labels, n_classes)
}

/// Writes `label,f1,...` rows with samples flattened row-major.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Io(e.to_string()))?;
    for (s, y) in dataset.samples.iter().zip(&dataset.labels) {
        let mut row = vec![y.to_string()];
        row.extend(s.data().iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn vector_spec(n_classes: usize, modes: usize, per_class: usize) -> SyntheticSpec {
        SyntheticSpec {
            n_classes,
            modes_per_class: modes,
            counts: SampleCounts::PerClass(per_class),
            input: InputMode::Vector { dim: 2 },
            sigma: 0.1,
            spread: 1.0,
        }
    }

    fn class_mean(data: &SyntheticData, class: usize) -> Vec<f64> {
        let rows: Vec<&Vec<f64>> =
            data.latents.iter().zip(&data.dataset.labels).filter(|(_, &y)| y == class).map(|(z, _)| z).collect();
        (0..rows[0].len()).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64).collect()
    }

    #[test]
    fn two_class_construction() {
        let data = gen_synthetic(&vector_spec(2, 1, 10), &mut SeededRng::new(1)).unwrap();
        assert_eq!(data.dataset.len(), 20);
        assert_eq!(data.dataset.class_counts(), vec![10, 10]);
        let c = data.mode_centers.row(0).iter().zip(data.mode_centers.row(1));
        assert!(c.map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= 0.6);
        let (m0, m1) = (class_mean(&data, 0), class_mean(&data, 1));
        assert!(m0.iter().zip(&m1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() > 0.3);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = vector_spec(3, 2, 5);
        let a = gen_synthetic(&spec, &mut SeededRng::new(9)).unwrap();
        let b = gen_synthetic(&spec, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn multimodal_centers_are_separated() {
        let data = gen_synthetic(&vector_spec(3, 2, 6), &mut SeededRng::new(2)).unwrap();
        let c = &data.mode_centers;
        assert_eq!(c.rows(), 6);
        for i in 0..6 {
            for j in i + 1..6 {
                let d: f64 = c.row(i).iter().zip(c.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(d.sqrt() >= 0.6 - 1e-12);
            }
        }
    }

    #[test]
    fn infeasible_placement() {
        let mut spec = vector_spec(50, 4, 1);
        spec.input = InputMode::Vector { dim: 1 };
        assert!(matches!(gen_synthetic(&spec, &mut SeededRng::new(0)), Err(Error::PlacementFailure { .. })));
    }

    #[test]
    fn nearest_mean_classifier_separates() {
        let data = gen_synthetic(&vector_spec(4, 1, 250), &mut SeededRng::new(5)).unwrap();
        let means: Vec<Vec<f64>> = (0..4).map(|c| class_mean(&data, c)).collect();
        let correct = data
            .latents
            .iter()
            .zip(&data.dataset.labels)
            .filter(|(z, &y)| {
                let d = |m: &Vec<f64>| z.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (0..4).min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b]))).unwrap() == y
            })
            .count();
        assert!(correct as f64 / 1000.0 > 0.99);
    }

    #[test]
    fn image_mode_shape() {
        let mut spec = vector_spec(2, 1, 3);
        spec.input = InputMode::Image { width: 16, height: 16, channels: 1, latent_dim: 4 };
        let data = gen_synthetic(&spec, &mut SeededRng::new(3)).unwrap();
        assert_eq!(data.dataset.sample_shape(), &[16, 16, 1]);
    }

    #[test]
    fn long_tail_examples() {
        assert_eq!(gen_long_tail(4, 100, 0.5).unwrap(), vec![100, 50, 25, 13]);
        assert_eq!(gen_long_tail(3, 7, 1.0).unwrap(), vec![7, 7, 7]);
        assert!(gen_long_tail(30, 10, 0.1).unwrap().iter().all(|&c| c >= 1));
        assert_eq!(gen_long_tail(8, 200, 0.55).unwrap(), vec![200, 110, 61, 33, 18, 10, 6, 3]);
        assert!(gen_long_tail(3, 10, 0.0).is_err());
    }

    fn event(levels: &[u8]) -> VideoEvent {
        VideoEvent {
            frames: levels.iter().map(|&v| RgbFrame::filled(4, 3, [v; 3])).collect(),
            frame_rate: 3.0,
            label: 0,
        }
    }

    #[test]
    fn sod_identical_frames_are_zero() {
        let s = sod_encode(&event(&[77; 6]), &mut SeededRng::new(0)).unwrap();
        assert!(s.data.iter().all(|&v| v == 0));
        assert_eq!(s.data.len(), 4 * 3 * 5);
    }

    #[test]
    fn sod_constant_ramp() {
        let s = sod_encode(&event(&[0, 10, 20, 30, 40, 50]), &mut SeededRng::new(0)).unwrap();
        assert!(s.data.iter().all(|&v| v == 10));
    }

    #[test]
    fn sod_short_event() {
        assert_eq!(
            sod_encode(&event(&[1, 2, 3, 4, 5]), &mut SeededRng::new(0)).unwrap_err(),
            Error::EventTooShort { frames: 5, needed: 6 }
        );
    }

    #[test]
    fn sod_bounds() {
        let s = sod_encode(&event(&[0, 255, 0, 255, 0, 255, 0]), &mut SeededRng::new(4)).unwrap();
        assert!(s.data.iter().all(|&v| v == 255 || v == -255));
        let input = s.to_input();
        assert!(input.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn video_motion_signs() {
        let events = gen_synthetic_video(3, 4, &mut SeededRng::new(8)).unwrap();
        for e in &events {
            assert!(e.frames.len() >= SOD_FRAMES);
            let s = sod_encode(e, &mut SeededRng::new(1)).unwrap();
            match e.label {
                0 => assert!(s.data.iter().all(|&v| v == 0)),
                1 => {
                    // rightward: positive mass right of negative mass in channel 0
                    let (mut pos_x, mut neg_x, mut np, mut nn) = (0.0, 0.0, 0.0, 0.0);
                    for y in 0..s.height {
                        for x in 0..s.width {
                            let v = s.at(y, x, 0);
                            if v > 0 {
                                pos_x += x as f64;
                                np += 1.0;
                            } else if v < 0 {
                                neg_x += x as f64;
                                nn += 1.0;
                            }
                        }
                    }
                    assert!(np > 0.0 && nn > 0.0);
                    assert!(pos_x / np > neg_x / nn);
                }
                _ => assert!(s.data.iter().any(|&v| v != 0)),
            }
        }
        let again = gen_synthetic_video(3, 4, &mut SeededRng::new(8)).unwrap();
        assert_eq!(events, again);
    }

    #[test]
    fn csv_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "1,0.5,0.25\n0,1,2\n").unwrap();
        let d = load_csv(&path, false).unwrap();
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.samples[0].data(), &[0.5, 0.25]);

        let empty = dir.path().join("e.csv");
        std::fs::File::create(&empty).unwrap();
        assert_eq!(load_csv(&empty, false).unwrap_err(), Error::EmptyInput);

        let bad = dir.path().join("b.csv");
        let mut f = std::fs::File::create(&bad).unwrap();
        writeln!(f, "label,a,b\n0,1,2\n1,x,3").unwrap();
        match load_csv(&bad, true).unwrap_err() {
            Error::ParseError { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let data = gen_synthetic(&vector_spec(2, 1, 3), &mut SeededRng::new(1)).unwrap().dataset;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        write_csv(&data, &path).unwrap();
        assert_eq!(load_csv(&path, false).unwrap(), data);
    }
}
