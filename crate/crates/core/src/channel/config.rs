use serde::{Deserialize, Serialize};

use super::dataset::SimSetup;
use super::scene::{build_scenes, subcarrier_grid, synthesize_beam_patterns, SceneGeometry};
use super::types::ImpairmentConfig;
use crate::seed::derive_tag;
use crate::{Error, Result};

/// Serializable description of a simulated testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub center_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// Subcarriers including guards.
    pub n_subcarriers: usize,
    pub guards_per_edge: usize,
    pub n_streams: usize,
    pub n_beams: usize,
    pub geometry: SceneGeometry,
    pub impairments: ImpairmentConfig,
    pub session_length: usize,
    /// Seed of the room layout and beampatterns; snapshots use the dataset
    /// seed instead, so train and test share one room.
    pub layout_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            center_freq_hz: 5.21e9,
            subcarrier_spacing_hz: 312.5e3,
            n_subcarriers: 242,
            guards_per_edge: 4,
            n_streams: 3,
            n_beams: 36,
            geometry: SceneGeometry::default(),
            impairments: ImpairmentConfig::default(),
            session_length: 50,
            layout_seed: 7,
        }
    }
}

impl SimConfig {
    /// Active (non-guard) subcarriers.
    pub fn active_subcarriers(&self) -> usize {
        self.n_subcarriers.saturating_sub(2 * self.guards_per_edge)
    }

    pub fn build_setup(&self, n_classes: usize) -> Result<SimSetup> {
        if self.impairments.rf_chain_phase_offsets_rad.len() < self.n_streams {
            return Err(Error::invalid(format!(
                "{} RF chain offsets for {} streams",
                self.impairments.rf_chain_phase_offsets_rad.len(),
                self.n_streams
            )));
        }
        let (freqs, mask) = subcarrier_grid(
            self.center_freq_hz,
            self.subcarrier_spacing_hz,
            self.n_subcarriers,
            self.guards_per_edge,
        )?;
        Ok(SimSetup {
            scenes: build_scenes(&self.geometry, n_classes, derive_tag(self.layout_seed, "scenes"))?,
            patterns: synthesize_beam_patterns(self.n_beams, derive_tag(self.layout_seed, "beams"))?,
            subcarrier_freqs_hz: freqs,
            guard_mask: mask,
            n_streams: self.n_streams,
            impairments: self.impairments.clone(),
            session_length: self.session_length,
        })
    }
}
