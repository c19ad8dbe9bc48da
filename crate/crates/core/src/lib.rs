//! Superpixel ranking from single-pass gradient saliency.
//!
//! The crate bundles everything needed to explain a small convolutional
//! classifier in terms of superpixels:
//!
//! * [`tensor`], [`rng`], [`stf`], [`ppm`]: dense f32 tensors, a portable
//!   SplitMix64 generator and the on-disk formats.
//! * [`micronet`]: fixed 2D and 3D micro-CNNs with hand-written forward and
//!   backward passes (standard and guided).
//! * [`segmentation`]: SLIC (2D and 3D) and QuickShift superpixels.
//! * [`saliency`]: nine pixel-scoring methods, each needing at most one
//!   forward and one backward pass.
//! * [`spscore`]: per-superpixel aggregation, ranking and rendering.
//! * [`lime`]: the sampling-based LIME baseline.
//! * [`eval`]: superpixel removal, top-k agreement and timing protocols.
//! * [`datagen`]: synthetic shape datasets with ground-truth masks.

pub mod color;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod lime;
pub mod micronet;
pub mod par;
pub mod ppm;
pub mod resample;
pub mod rng;
pub mod saliency;
pub mod segmentation;
pub mod spscore;
pub mod stf;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Prng;
pub use tensor::Tensor;
