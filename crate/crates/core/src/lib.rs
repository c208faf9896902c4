//! Heliostat digital twin.
//!
//! Simulates flux-density images of four-facet heliostats with spline mirror
//! surfaces by Monte-Carlo raytracing, generates domain-randomized training
//! data, and trains a small encoder-generator network that infers the
//! mirror surface back from a handful of flux images.
//!
//! Module map:
//!
//! - [`geometry`], [`nurbs`]: field frame, tracking, canting, facet surfaces
//! - [`optics`]: sunshape sampling, targets, raytracing, flux images
//! - [`datagen`]: surface prior, augmentation, sun grid, dataset files
//! - [`degrade`]: the named randomization transforms and their registry
//! - [`model`]: autograd, network, training, checkpoints
//! - [`metrics`]: surface MAE/SSIM, flux accuracy, summary statistics

pub mod datagen;
pub mod degrade;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod nurbs;
pub mod optics;
pub mod rng;

pub use error::{HelioError, Result};
pub use geometry::{HeliostatSpec, SunState, Vec3};
pub use nurbs::{FacetSurface, HeliostatSurface};
pub use optics::{FluxImage, Grid};
