//! Robust saliency supervision toolkit for data-free class-incremental
//! learning: map kernels, elliptical saliency-noise generation, attribution,
//! low-level distillation losses, a small staged CNN, and an incremental
//! training engine with forgetting metrics.

pub mod attribution;
pub mod cil;
pub mod data;
pub mod error;
pub mod losses;
pub mod maps;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod numeric;
pub mod teacher;

pub use error::{Error, Result};
