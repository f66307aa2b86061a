//! Encoders, granularity-matching fusion, task heads, decoders and the
//! baseline variants.

mod config;
mod encoder;
mod fuse;
mod head;
mod model;

pub use config::{ModelDims, ModelSpec, StageSpec, Task, Variant};
pub use encoder::{upsample_nearest, upsample_nearest_backward, BranchKind, EncoderBranch};
pub use fuse::{FusionBlock, TapProjection};
pub use head::{DecoderBranch, OutputHead};
pub use model::{build_model, load_model, Batch, FusionModel, InputGrads};
