#![allow(dead_code)]

use mbsense::calib::fit_calib_stats;
use mbsense::channel::{generate_dataset, Dataset, SimConfig, Split};
use mbsense::fusion::ModelDims;
use mbsense::train::{prepare, PreparedSet};

/// A 20-subcarrier, single-stream, 12-beam room that matches `ModelDims::tiny`.
pub fn tiny_sim() -> SimConfig {
    let mut sim = SimConfig {
        n_subcarriers: 28,
        guards_per_edge: 4,
        n_streams: 1,
        n_beams: 12,
        ..SimConfig::default()
    };
    sim.impairments.rf_chain_phase_offsets_rad.truncate(1);
    sim
}

pub fn tiny_dims(n_classes: usize) -> ModelDims {
    ModelDims {
        tap_width: 8,
        latent_dim: 6,
        head_hidden: 16,
        ..ModelDims::tiny()
    }
    .with_classes(n_classes)
}

pub fn tiny_dataset(n_classes: usize, per_class: usize, seed: u64, split: Split) -> Dataset {
    let setup = tiny_sim().build_setup(n_classes).unwrap();
    generate_dataset(&setup, per_class, 1.0, seed, split).unwrap()
}

/// Train and test sets standardized with the train statistics.
pub fn tiny_prepared(n_classes: usize, per_class: usize) -> (PreparedSet, PreparedSet) {
    let train = tiny_dataset(n_classes, per_class, 11, Split::Train);
    let test = tiny_dataset(n_classes, per_class, 12, Split::Test);
    let stats = fit_calib_stats(&train).unwrap();
    (prepare(&train, &stats).unwrap(), prepare(&test, &stats).unwrap())
}
