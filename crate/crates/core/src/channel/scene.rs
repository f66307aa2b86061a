//! Parametric scene layouts, beampattern tables and subcarrier grids.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{AzimuthGrid, BeamPattern, JitterSpec, Path, Scene};
use super::SPEED_OF_LIGHT;
use crate::{seed, Error, Result};

/// Free-space geometry from which class scenes are derived.
///
/// Each class is a fixed set of point scatterers near the link midpoint
/// (a body, an occupied chair, a user position) on top of a static set of
/// environment scatterers shared by all classes. Every scatterer yields one
/// single-bounce path; the direct path is always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub tx_pos_m: [f64; 2],
    pub rx_pos_m: [f64; 2],
    /// Half extents of the room around the link midpoint.
    pub room_half_extent_m: [f64; 2],
    pub env_scatterers: usize,
    pub class_scatterers: usize,
    pub env_reflectivity: f64,
    pub class_reflectivity: f64,
    /// Class scatterers are drawn within this radius of the link midpoint.
    pub class_region_radius_m: f64,
    pub jitter: JitterSpec,
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self {
            tx_pos_m: [0.0, 0.0],
            rx_pos_m: [4.0, 0.0],
            room_half_extent_m: [3.5, 3.0],
            env_scatterers: 4,
            class_scatterers: 3,
            env_reflectivity: 0.5,
            class_reflectivity: 0.6,
            class_region_radius_m: 1.5,
            jitter: JitterSpec::default(),
        }
    }
}

impl SceneGeometry {
    fn direct_length(&self) -> f64 {
        dist(self.tx_pos_m, self.rx_pos_m)
    }

    fn direct_path(&self) -> Result<Path> {
        Path::new(1.0, 0.0, self.direct_length() / SPEED_OF_LIGHT, 0.0, 0.0)
    }

    fn scatter_path(&self, pos: [f64; 2], reflectivity: f64, phase: f64) -> Result<Path> {
        let [tx, rx] = [self.tx_pos_m, self.rx_pos_m];
        let length = dist(tx, pos) + dist(pos, rx);
        // Tx boresight points at the receiver and vice versa.
        let boresight = (rx[1] - tx[1]).atan2(rx[0] - tx[0]);
        let az_tx = wrap_pi((pos[1] - tx[1]).atan2(pos[0] - tx[0]) - boresight);
        let az_rx = -wrap_pi((pos[1] - rx[1]).atan2(pos[0] - rx[0]) - boresight - std::f64::consts::PI);
        Path::new(
            reflectivity * self.direct_length() / length,
            phase,
            length / SPEED_OF_LIGHT,
            az_tx,
            az_rx,
        )
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn wrap_pi(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI
}

/// Builds one scene per class. Environment scatterers are shared; class
/// scatterers are drawn independently per class. Deterministic in `seed`.
pub fn build_scenes(geometry: &SceneGeometry, n_classes: usize, seed: u64) -> Result<Vec<Scene>> {
    if n_classes == 0 {
        return Err(Error::invalid("at least one class is required"));
    }
    let mid = [
        0.5 * (geometry.tx_pos_m[0] + geometry.rx_pos_m[0]),
        0.5 * (geometry.tx_pos_m[1] + geometry.rx_pos_m[1]),
    ];
    let [hx, hy] = geometry.room_half_extent_m;

    let mut env_rng = seed::rng(seed::derive_tag(seed, "environment"));
    let mut env_paths = vec![geometry.direct_path()?];
    for _ in 0..geometry.env_scatterers {
        // Keep static scatterers away from the direct line.
        let x = mid[0] + env_rng.random_range(-hx..hx);
        let side = if env_rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let y = mid[1] + side * env_rng.random_range(0.4 * hy..hy);
        let phase = env_rng.random_range(0.0..TAU);
        env_paths.push(geometry.scatter_path([x, y], geometry.env_reflectivity, phase)?);
    }

    (0..n_classes)
        .map(|class| {
            let mut rng = seed::rng(seed::derive(seed::derive_tag(seed, "class"), class as u64));
            let mut paths = env_paths.clone();
            for _ in 0..geometry.class_scatterers {
                let r = geometry.class_region_radius_m * rng.random_range(0.0_f64..1.0).sqrt();
                let a = rng.random_range(0.0..TAU);
                let mut pos = [mid[0] + r * a.cos(), mid[1] + r * a.sin()];
                // A scatterer on the direct line would be indistinguishable
                // from it.
                if pos[1].abs() < 0.15 {
                    pos[1] = 0.15_f64.copysign(pos[1]);
                }
                let phase = rng.random_range(0.0..TAU);
                paths.push(geometry.scatter_path(pos, geometry.class_reflectivity, phase)?);
            }
            Scene::new(paths, class, geometry.jitter)
        })
        .collect()
}

/// Draws `n_beams` irregular probing beampatterns on the 1° front-hemisphere
/// grid: a Gaussian main lobe per sector plus a smoothed random positive
/// ripple; the receive side is quasi-omni with mild ripple.
pub fn synthesize_beam_patterns(n_beams: usize, seed: u64) -> Result<Vec<BeamPattern>> {
    if n_beams == 0 {
        return Err(Error::invalid("at least one beampattern is required"));
    }
    const PEAK_GAIN: f64 = 10.0;
    const LOBE_STD_DEG: f64 = 8.0;
    let grid = AzimuthGrid::front_hemisphere();
    let span = 170.0;
    (0..n_beams)
        .map(|m| {
            let mut rng = seed::rng(seed::derive(seed::derive_tag(seed, "beam"), m as u64));
            let center = if n_beams == 1 {
                0.0
            } else {
                -span / 2.0 + span * m as f64 / (n_beams - 1) as f64
            };
            let ripple_level = rng.random_range(0.05..0.3) * PEAK_GAIN;
            let ripple = smoothed_noise(&mut rng, grid.len, 9);
            let tx = (0..grid.len)
                .map(|i| {
                    let delta = grid.angle(i).to_degrees() - center;
                    PEAK_GAIN * (-0.5 * (delta / LOBE_STD_DEG).powi(2)).exp()
                        + ripple_level * ripple[i]
                })
                .collect();
            let rx_ripple = smoothed_noise(&mut rng, grid.len, 15);
            let rx = rx_ripple.iter().map(|r| 0.8 + 0.4 * r).collect();
            BeamPattern::new(grid, tx, rx, m)
        })
        .collect()
}

/// Moving average of uniform noise, values in `[0, 1]`.
fn smoothed_noise(rng: &mut impl Rng, len: usize, window: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len + window).map(|_| rng.random_range(0.0..1.0)).collect();
    raw.windows(window)
        .take(len)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Equally spaced subcarriers centred on `center_hz`, with `guards_per_edge`
/// zero-energy guard subcarriers at each band edge.
pub fn subcarrier_grid(
    center_hz: f64,
    spacing_hz: f64,
    n_subcarriers: usize,
    guards_per_edge: usize,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if n_subcarriers == 0 || 2 * guards_per_edge >= n_subcarriers {
        return Err(Error::invalid(format!(
            "{n_subcarriers} subcarriers cannot hold {guards_per_edge} guards per edge"
        )));
    }
    if !(spacing_hz > 0.0) {
        return Err(Error::invalid("subcarrier spacing must be > 0"));
    }
    let half = (n_subcarriers as f64 - 1.0) / 2.0;
    let freqs = (0..n_subcarriers)
        .map(|k| center_hz + (k as f64 - half) * spacing_hz)
        .collect();
    let mask = (0..n_subcarriers)
        .map(|k| k < guards_per_edge || k >= n_subcarriers - guards_per_edge)
        .collect();
    Ok((freqs, mask))
}
