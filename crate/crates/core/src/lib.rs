//! Key-based attribution of generative model outputs.
//!
//! Each user of a shared generator gets a secret unit-norm key phi; their
//! model is shifted by gamma * phi so that the linear classifier
//! sign(phi . x) separates that model's outputs from authentic data and from
//! every other user's outputs. This crate implements the key machinery:
//! sequential key generation, margin bounds that certify distinguishability
//! and attributability, a watermark sampling simulator, evaluation metrics,
//! image post-processing attacks, capacity estimation, and a serializable
//! key registry.

pub mod capacity;
pub mod dataio;
pub mod dataset;
pub mod error;
pub mod key;
pub mod keygen;
pub mod layout;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod postproc;
pub mod registry;
pub mod report;
pub mod rng;
pub(crate) mod stats;
pub mod theory;
pub mod watermark;

pub use dataset::DatasetHandle;
pub use error::{Error, Result};
pub use key::{Key, Label};
pub use layout::ImageLayout;
pub use noise::NoiseModel;
pub use report::MetricsReport;
pub use watermark::WatermarkModel;
