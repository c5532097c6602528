//! Dense numeric substrate: row-major `f64` arrays, a seeded portable RNG and
//! the central finite-difference gradient oracle.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major dense array of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeError(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("element {pos} is {}", data[pos])));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Builds a 2-D array from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeError("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeError(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Row width; for arrays of rank > 2 this is the product of trailing dims.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &DenseArray, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeError(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Seedable generator backed by ChaCha8, whose stream is defined by the
/// seed alone and is identical on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a named sub-stream of the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self { seed: self.seed, inner }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `[0, n)` in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k.min(n) {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k.min(n));
        pool
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central finite-difference gradient of `f` at `point`.
pub fn finite_diff_grad<F>(mut f: F, point: &DenseArray, step: f64) -> Result<DenseArray>
where
    F: FnMut(&DenseArray) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {step}")));
    }
    let mut probe = point.clone();
    let mut grad = DenseArray::zeros(point.shape().to_vec());
    for i in 0..point.len() {
        let x = point.data[i];
        probe.data[i] = x + step;
        let up = f(&probe);
        probe.data[i] = x - step;
        let down = f(&probe);
        probe.data[i] = x;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteValue(format!(
                "f evaluated to {up} / {down} around coordinate {i}"
            )));
        }
        grad.data[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_nan() {
        assert!(matches!(
            DenseArray::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::ShapeError(_))
        ));
        assert!(matches!(
            DenseArray::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFiniteValue(_))
        ));
        assert!(DenseArray::new(vec![2, 1, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn fd_square() {
        let p = DenseArray::from_vec(vec![3.0]).unwrap();
        let g = finite_diff_grad(|x| x.data()[0] * x.data()[0], &p, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn fd_constant_is_zero() {
        let p = DenseArray::from_vec(vec![1.0, -2.0, 0.5]).unwrap();
        let g = finite_diff_grad(|_| 4.2, &p, DEFAULT_FD_STEP).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fd_reports_non_finite() {
        let p = DenseArray::from_vec(vec![0.0]).unwrap();
        let err = finite_diff_grad(|x| if x.data()[0] > 0.0 { f64::INFINITY } else { 0.0 }, &p, 1e-5);
        assert!(matches!(err, Err(Error::NonFiniteValue(_))));
    }

    #[test]
    fn fd_quadratic_form() {
        // x'Ax has gradient (A + A')x
        let a = [[2.0, -1.0, 0.5], [0.3, 1.0, 4.0], [-2.0, 0.0, 3.0]];
        let mut rng = SeededRng::new(7);
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let point = DenseArray::from_vec(x.clone()).unwrap();
        let f = |v: &DenseArray| {
            let v = v.data();
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += v[i] * a[i][j] * v[j];
                }
            }
            s
        };
        let g = finite_diff_grad(f, &point, 1e-5).unwrap();
        let expected: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| (a[i][j] + a[j][i]) * x[j]).sum())
            .collect();
        assert!(relative_error(g.data(), &expected) < 1e-9);
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = SeededRng::new(43);
        let mut a = SeededRng::new(42);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn fork_gives_distinct_stream() {
        let base = SeededRng::new(5);
        let mut f1 = base.fork(1);
        let mut f1b = base.fork(1);
        let mut f2 = base.fork(2);
        let x = f1.next_u64();
        assert_eq!(x, f1b.next_u64());
        assert_ne!(x, f2.next_u64());
    }

    #[test]
    fn sample_without_replacement_is_distinct() {
        let mut rng = SeededRng::new(1);
        let mut s = rng.sample_without_replacement(20, 20);
        s.sort_unstable();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
    }
}
