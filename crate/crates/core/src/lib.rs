//! Two-head classification and metric-learning toolkit.
//!
//! A convolutional trunk feeds a softmax head on pooled features and an
//! L2-normalized embedding head on the unpooled feature map. The embedding
//! head is trained with triplet (hard or semi-hard mining), center,
//! triplet-center or magnet losses alongside the softmax loss, and evaluated
//! with Recall@K, NMI and micro/macro accuracy.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod losses;
pub mod mining;
pub mod network;
pub mod sampling;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
