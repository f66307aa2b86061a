//! Synthetic multi-band channel generation.
//!
//! Scenes are lists of multipath components. The sub-7 GHz side is observed as
//! sampled CFRs over OFDM subcarriers for several spatial streams; the 60 GHz
//! side is observed as one SNR per probing beampattern.

mod config;
mod dataset;
mod impair;
mod propagation;
mod scene;
mod types;

pub use config::SimConfig;
pub use dataset::{
    generate_dataset, load_dataset, load_manifest, save_dataset, Dataset, DatasetManifest, SimSetup, Split,
};
pub use impair::{apply_impairments, quantize_db};
pub use propagation::{
    compute_beam_snr, compute_rssi, sample_cfr, simulate_baseband_voltage, BeamSnrEvaluation,
};
pub use scene::{build_scenes, subcarrier_grid, synthesize_beam_patterns, SceneGeometry};
pub use types::{
    AzimuthGrid, BeamPattern, BeamSnrVector, CsiFrame, ImpairmentConfig, JitterSpec, Path, Scene,
    SnrScale,
};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
