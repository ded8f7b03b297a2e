//! Benchmarking toolkit for invisible image watermarks.
//!
//! The crate covers the full loop of a watermark robustness study:
//!
//! - embedding and decoding a blind block-DCT watermark ([`watermark`])
//! - a fixed suite of distortion attacks and gradient-based adversarial
//!   attacks ([`distortion`], [`adversarial`])
//! - full-reference quality metrics with corpus-quantile normalization
//!   ([`quality`])
//! - detection and identification scoring, per-attack performance/quality
//!   curves, buffered-tie leaderboards and radar summaries ([`eval`])
//! - a deterministic, resumable run pipeline with fixed report formats
//!   ([`pipeline`])
//!
//! Numeric kernels are generic over the pixel scalar through [`Real`];
//! `f32` halves memory on large corpora while `f64` is the default
//! precision used by the pipeline. The aliases [`ImageF32`] and
//! [`ImageF64`] name the two concrete image types.
//!
//! Determinism is part of every contract. All randomness is drawn from
//! [`rng::StreamRng`] streams derived from a single master seed and a
//! textual stream id, so re-running a configuration reproduces every
//! output byte, and any stage can be re-executed in isolation.
//!
//! Error conventions: failures rooted in data or configuration
//! (unreadable files, undersized corpora, degenerate statistics,
//! out-of-range settings) surface as [`Error`]; violations of documented
//! call contracts (mismatched image shapes, unequal message lengths)
//! panic with a message naming the violated requirement.

#![forbid(unsafe_code)]

pub mod adversarial;
pub mod bits;
pub mod distortion;
mod error;
pub mod eval;
pub mod fixtures;
pub mod image;
pub mod manifest;
pub mod pipeline;
pub mod quality;
pub mod rng;
mod scalar;
pub mod watermark;

pub use error::{Error, Result};
pub use scalar::Real;

/// Single-precision image buffer.
pub type ImageF32 = image::ImageBuffer<f32>;
/// Double-precision image buffer, the pipeline default.
pub type ImageF64 = image::ImageBuffer<f64>;
