//! C ABI over the `twohead` crate.
//!
//! Networks and mined triplet sets are opaque handles created and freed by
//! this library. Every fallible function returns a [`TwoheadStatus`]; on
//! failure a description is available from [`twohead_last_error`] on the
//! same thread. Panics never cross the boundary: they are caught and reported
//! as [`TwoheadStatus::Panic`].
//!
//! Arrays are row-major `double` buffers; lengths are element counts.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use twohead::evaluation::{nmi, recall_at_k, Clustering};
use twohead::geometry::{pairwise_sq_distances, EmbeddingBatch};
use twohead::mining::{mine_batch_hard, mine_semi_hard, TripletSet};
use twohead::network::{init_params, NetConfig, TwoHeadNet};
use twohead::tensor::{DenseArray, SeededRng};
use twohead::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoheadStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    EmptyResult = 5,
    Failed = 6,
    Panic = 7,
}

/// Triplet mining strategy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoheadMining {
    BatchHard = 0,
    SemiHard = 1,
}

/// Indices into the mined batch.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TwoheadTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Static description of a network.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TwoheadNetInfo {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub d_emb: usize,
    pub param_count: usize,
}

/// Opaque network handle.
pub struct TwoheadNet {
    inner: TwoHeadNet,
}

/// Opaque mined triplet set.
pub struct TwoheadTriplets {
    inner: TripletSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Fail(TwoheadStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::ShapeError(_) | Error::TraceMismatch => TwoheadStatus::ShapeMismatch,
            Error::Io(_) => TwoheadStatus::Io,
            Error::EmptyTripletSet | Error::EmptyInput => TwoheadStatus::EmptyResult,
            Error::InvalidConfig(_)
            | Error::InvalidLabel { .. }
            | Error::KTooLarge { .. }
            | Error::BatchTooSmall { .. }
            | Error::NonFiniteValue(_) => TwoheadStatus::InvalidArgument,
            _ => TwoheadStatus::Failed,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(TwoheadStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TwoheadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TwoheadStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TwoheadStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(TwoheadStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null only when `len == 0`, otherwise valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// As [`slice`], for writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be a valid NUL-terminated string.
unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    non_null(p, "path")?;
    CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))
}

/// # Safety
/// `emb` must hold `n * d` values and `labels` `n` values.
unsafe fn batch(emb: *const f64, labels: *const usize, n: usize, d: usize) -> Result<EmbeddingBatch, Fail> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let len = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
    let data = slice(emb, len, "embeddings")?.to_vec();
    let labels = slice(labels, n, "labels")?.to_vec();
    Ok(EmbeddingBatch::new(DenseArray::new(vec![n, d], data)?, labels)?)
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn twohead_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn twohead_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a network with the default desk trunk (two 3x3 stride-2
/// convolutions with 8 channels) for `height x width x channels` inputs.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn twohead_net_new(
    height: usize,
    width: usize,
    channels: usize,
    n_classes: usize,
    d_emb: usize,
    seed: u64,
    out: *mut *mut TwoheadNet,
) -> TwoheadStatus {
    guard(|| {
        non_null(out, "out")?;
        if height == 0 || width == 0 || channels == 0 || n_classes == 0 || d_emb == 0 {
            return Err(invalid("dimensions must be positive"));
        }
        let mut config = NetConfig::desk(channels, n_classes, d_emb);
        config.input = [height, width, channels];
        let net = init_params(&config, &mut SeededRng::new(seed))?;
        *out = Box::into_raw(Box::new(TwoheadNet { inner: net }));
        Ok(())
    })
}

/// Loads a checkpoint written by `twohead train` or [`twohead_net_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn twohead_net_load(path: *const c_char, out: *mut *mut TwoheadNet) -> TwoheadStatus {
    guard(|| {
        non_null(out, "out")?;
        let net = TwoHeadNet::load(c_path(path)?)?;
        *out = Box::into_raw(Box::new(TwoheadNet { inner: net }));
        Ok(())
    })
}

/// # Safety
/// `net` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn twohead_net_save(net: *const TwoheadNet, path: *const c_char) -> TwoheadStatus {
    guard(|| {
        non_null(net, "net")?;
        (*net).inner.save(c_path(path)?)?;
        Ok(())
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn twohead_net_free(net: *mut TwoheadNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must come from this library; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn twohead_net_info(net: *const TwoheadNet, out: *mut TwoheadNetInfo) -> TwoheadStatus {
    guard(|| {
        non_null(net, "net")?;
        non_null(out, "out")?;
        let n = &(*net).inner;
        let c = n.config();
        *out = TwoheadNetInfo {
            height: c.input[0],
            width: c.input[1],
            channels: c.input[2],
            n_classes: c.n_classes,
            d_emb: c.d_emb,
            param_count: n.param_count(),
        };
        Ok(())
    })
}

/// Runs one `height x width x channels` (HWC) input through both heads.
/// `logits` receives `n_classes` values and `embedding` `d_emb` values;
/// `raw_norm` (optional) receives the pre-normalization embedding norm.
///
/// # Safety
/// Buffers must be valid for the stated lengths; `raw_norm` may be null.
#[no_mangle]
pub unsafe extern "C" fn twohead_net_forward(
    net: *const TwoheadNet,
    input: *const f64,
    input_len: usize,
    logits: *mut f64,
    logits_len: usize,
    embedding: *mut f64,
    embedding_len: usize,
    raw_norm: *mut f64,
) -> TwoheadStatus {
    guard(|| {
        non_null(net, "net")?;
        let n = &(*net).inner;
        let c = n.config();
        let shape = c.input.to_vec();
        let expected: usize = shape.iter().product();
        if input_len != expected || logits_len != c.n_classes || embedding_len != c.d_emb {
            return Err(Fail(
                TwoheadStatus::ShapeMismatch,
                format!(
                    "expected input {expected}, logits {}, embedding {}; got {input_len}, {logits_len}, {embedding_len}",
                    c.n_classes, c.d_emb
                ),
            ));
        }
        let x = DenseArray::new(shape, slice(input, input_len, "input")?.to_vec())?;
        let trace = n.forward(&x)?;
        slice_mut(logits, logits_len, "logits")?.copy_from_slice(&trace.logits);
        slice_mut(embedding, embedding_len, "embedding")?.copy_from_slice(&trace.embedding);
        if !raw_norm.is_null() {
            *raw_norm = trace.raw_norm;
        }
        Ok(())
    })
}

/// Squared Euclidean distances between the `n` rows of `embeddings`
/// (`n x d`), written to `out` (`n x n`).
///
/// # Safety
/// `embeddings` must hold `n * d` values and `out` `n * n`.
#[no_mangle]
pub unsafe extern "C" fn twohead_pairwise_sq_distances(
    embeddings: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> TwoheadStatus {
    guard(|| {
        let labels = vec![0usize; n];
        let b = batch(embeddings, labels.as_ptr(), n, d)?;
        let dist = pairwise_sq_distances(&b)?;
        let len = n.checked_mul(n).ok_or_else(|| invalid("n * n overflows"))?;
        let out = slice_mut(out, len, "out")?;
        for i in 0..n {
            out[i * n..(i + 1) * n].copy_from_slice(dist.row(i));
        }
        Ok(())
    })
}

/// Mines triplets from a labeled batch. `margin` is used by semi-hard
/// mining only. Fails with `EmptyResult` when the batch has no valid triplet.
///
/// # Safety
/// `embeddings` must hold `n * d` values, `labels` `n`, and `out` must be
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn twohead_mine(
    embeddings: *const f64,
    labels: *const usize,
    n: usize,
    d: usize,
    strategy: TwoheadMining,
    margin: f64,
    out: *mut *mut TwoheadTriplets,
) -> TwoheadStatus {
    guard(|| {
        non_null(out, "out")?;
        if margin.is_nan() || margin < 0.0 || margin.is_infinite() {
            return Err(invalid("margin must be finite and >= 0"));
        }
        let b = batch(embeddings, labels, n, d)?;
        let dist = pairwise_sq_distances(&b)?;
        let set = match strategy {
            TwoheadMining::BatchHard => mine_batch_hard(&dist, b.labels())?,
            TwoheadMining::SemiHard => mine_semi_hard(&dist, b.labels(), margin)?,
        };
        *out = Box::into_raw(Box::new(TwoheadTriplets { inner: set }));
        Ok(())
    })
}

/// Number of triplets in a set; 0 for null.
///
/// # Safety
/// `set` must be null or come from [`twohead_mine`].
#[no_mangle]
pub unsafe extern "C" fn twohead_triplets_len(set: *const TwoheadTriplets) -> usize {
    if set.is_null() {
        0
    } else {
        (*set).inner.len()
    }
}

/// # Safety
/// `set` must come from [`twohead_mine`]; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn twohead_triplets_get(
    set: *const TwoheadTriplets,
    index: usize,
    out: *mut TwoheadTriplet,
) -> TwoheadStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(out, "out")?;
        let set = &*set;
        let t = set
            .inner
            .triplets
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range")))?;
        *out = TwoheadTriplet { anchor: t.anchor, positive: t.positive, negative: t.negative };
        Ok(())
    })
}

/// Releases a triplet set. Null is ignored.
///
/// # Safety
/// `set` must come from [`twohead_mine`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn twohead_triplets_free(set: *mut TwoheadTriplets) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Recall@K of a labeled batch, `1 <= k < n`.
///
/// # Safety
/// `embeddings` must hold `n * d` values, `labels` `n`; `out` one write.
#[no_mangle]
pub unsafe extern "C" fn twohead_recall_at_k(
    embeddings: *const f64,
    labels: *const usize,
    n: usize,
    d: usize,
    k: usize,
    out: *mut f64,
) -> TwoheadStatus {
    guard(|| {
        non_null(out, "out")?;
        let b = batch(embeddings, labels, n, d)?;
        *out = recall_at_k(&b, &[k])?[&k];
        Ok(())
    })
}

/// Normalized mutual information between two partitions of `n` items.
///
/// # Safety
/// `truth` and `learned` must hold `n` values; `out` one write.
#[no_mangle]
pub unsafe extern "C" fn twohead_nmi(
    truth: *const usize,
    learned: *const usize,
    n: usize,
    out: *mut f64,
) -> TwoheadStatus {
    guard(|| {
        non_null(out, "out")?;
        let a = Clustering::from_labels(slice(truth, n, "truth")?);
        let b = Clustering::from_labels(slice(learned, n, "learned")?);
        *out = nmi(&a, &b)?;
        Ok(())
    })
}
