//! Sunshape, targets, raytracing and flux images.

pub mod flux;
pub mod raytrace;
pub mod render;
pub mod sunshape;
pub mod target;

pub use flux::{superpose, FluxImage, FluxStatus, Grid};
pub use raytrace::{trace_flux, Tracer};
pub use sunshape::{buie_pdf, SunshapeConfig, SunshapeSampler};
pub use target::{CurvedReceiver, FluxTarget, TargetGeometry, TargetPlane};
