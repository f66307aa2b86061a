//! Multi-band Wi-Fi sensing laboratory.
//!
//! The crate covers the whole pipeline for fusing fine-grained sub-7 GHz CSI
//! with mid-grained 60 GHz beam SNR measurements:
//!
//! - [`channel`]: parametric multipath scenes, CFR/beam-SNR evaluation,
//!   hardware impairments and dataset generation/persistence.
//! - [`calib`]: guard removal, linear phase calibration, standardization and
//!   beam-SNR augmentation.
//! - [`nn`]: a small differentiable core (1-D conv, transposed conv,
//!   batchnorm, pooling, fully connected layers, losses, Adam, gradient check).
//! - [`fusion`]: CSI/beam-SNR encoders, granularity-matching fusion, task
//!   heads, mirrored decoders and the baseline variants.
//! - [`train`]: supervised training, autoencoder pretraining and transfer
//!   learning.
//! - [`eval`]: confusion matrices, accuracy and latent export.

pub mod calib;
pub mod channel;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod nn;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
