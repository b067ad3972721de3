//! Equivariant orientation histograms on SO(2) Fourier fields, steerable
//! pick and place models and a synthetic planar kitting task.

pub mod env;
pub mod eoh;
pub mod error;
pub mod field;
pub mod group;
pub mod io;
pub mod policy;
pub mod steerable;
pub mod tensor;
pub mod train;

pub use env::{Action, Demo, EnvConfig, Scene};
pub use error::{Error, Result};
pub use field::{FeatureField, Interpolation};
pub use group::{GroupElement, GroupTag, RepSpec};
pub use policy::{Descriptor, PolicyBundle, PolicyConfig};
pub use tensor::DiffTensor;
pub use train::{EvalReport, Sample, TrainConfig};
