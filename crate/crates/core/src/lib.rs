//! Neighborhood decoding and repulsive unsigned-distance surface extraction.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: points, colored clouds, normalization, query sampling, augmentation
//! - [`spatial`]: exact k-d tree (k-NN, radius) and farthest point sampling
//! - [`shapes`]: closed-form unsigned distance fields used as ground truth
//! - [`autodiff`]: a small reverse-mode tape, Adam, gradient checking, checkpoints
//! - [`decoder`]: the anchor-based neighborhood decoder
//! - [`training`]: losses, supervision targets and the per-shape fitting loop
//! - [`extraction`]: point shifting with k-NN repulsion
//! - [`metrics`]: L1 chamfer, F1, L1-RGB and spacing uniformity
//! - [`io`]: PLY/CSV/JSON formats and run configuration
//! - [`demo2d`]: the two-mode extraction comparison on a planar L profile
//!
//! See the `examples/` directory of this crate for one runnable program per capability.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod decoder;
pub mod demo2d;
pub mod error;
pub mod extraction;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod shapes;
pub mod spatial;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{ColoredPointCloud, NormalizationTransform, Point3, Rgb};
