//! Construction, cost analysis and search for scale-permuted backbones.
//!
//! - [`graph`]: block graph IR, validation, shape inference, JSON/DOT.
//! - [`resample`]: cross-scale resampling plans and their cost.
//! - [`zoo`]: named models from `models/*.json`.
//! - [`head`]: detection and classification heads.
//! - [`cost`]: multiply-add and parameter accounting.
//! - [`layers`]: lowering into a flat layer program.
//! - [`executor`]: deterministic reference forward pass.
//! - [`search`]: search space, sampling, controllers.
//! - [`ablation`]: fixed orderings and graph damage.

pub mod ablation;
pub mod cost;
pub mod error;
pub mod executor;
pub mod graph;
pub mod head;
pub mod layers;
pub mod resample;
pub mod search;
pub mod zoo;

pub use error::{Error, Result};
