//! Lightweight single-image super-resolution with hierarchical patch
//! attention.
//!
//! The network divides feature maps into patches on a per-block cascaded
//! size schedule, lets every patch cross-attend to its most similar patch
//! anywhere in the image (selected via pooled-token inner products, with a
//! straight-through Gumbel relaxation during training), applies intra-patch
//! self-attention and a feed-forward sublayer, re-aggregates the patches,
//! and refines with 3x3 convolutions; a pixel-shuffle decoder plus a
//! bilinear skip produces the output.
//!
//! Everything runs on a small reverse-mode tape ([`tape::GradTape`]) that
//! supports f32 for deployment and f64 for finite-difference testing.
//! Kernels parallelize with rayon (cargo feature `parallel`, on by
//! default) in a gather style that keeps results bit-identical to the
//! sequential fallback.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod error;
pub mod image;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod patching;
pub mod resize;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{HpiError, Result};
pub use image::{ColorSpace, ImagePlane};
pub use model::{HpiConfig, Model, ModelParams};
pub use scalar::Scalar;
pub use tensor::Tensor;
