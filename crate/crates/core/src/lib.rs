//! Synthesis and estimation of spatially varying linear motion blur.
//!
//! The crate covers the whole pipeline: rasterizing length/angle blur kernels,
//! blurring images uniformly or with piecewise-constant blur fields, generating
//! labeled datasets, sampling admissible training patches on a per-epoch patch
//! size schedule, training a VGG-style regression network, and analyzing its
//! predictions across patch sizes and across blur discontinuities.

pub mod blur;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod image;
pub mod kernel;
pub mod model;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
