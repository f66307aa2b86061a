use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One multipath component.
///
/// The same path list drives both bands: the complex gain and delay feed the
/// CFR, the azimuths and power feed the beam SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    amplitude: f64,
    phase_rad: f64,
    delay_s: f64,
    azimuth_tx_rad: f64,
    azimuth_rx_rad: f64,
    power: f64,
}

impl Path {
    /// Builds a path; the phase is wrapped into `[0, 2π)` and the power is
    /// set to `amplitude²`.
    pub fn new(
        amplitude: f64,
        phase_rad: f64,
        delay_s: f64,
        azimuth_tx_rad: f64,
        azimuth_rx_rad: f64,
    ) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::invalid(format!(
                "path amplitude must be finite and >= 0, got {amplitude}"
            )));
        }
        if !(delay_s >= 0.0) || !delay_s.is_finite() {
            return Err(Error::invalid(format!(
                "path delay must be finite and >= 0, got {delay_s}"
            )));
        }
        if !phase_rad.is_finite() || !azimuth_tx_rad.is_finite() || !azimuth_rx_rad.is_finite() {
            return Err(Error::invalid("path angles must be finite"));
        }
        Ok(Self {
            amplitude,
            phase_rad: phase_rad.rem_euclid(TAU),
            delay_s,
            azimuth_tx_rad,
            azimuth_rx_rad,
            power: amplitude * amplitude,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
    pub fn phase_rad(&self) -> f64 {
        self.phase_rad
    }
    pub fn delay_s(&self) -> f64 {
        self.delay_s
    }
    pub fn azimuth_tx_rad(&self) -> f64 {
        self.azimuth_tx_rad
    }
    pub fn azimuth_rx_rad(&self) -> f64 {
        self.azimuth_rx_rad
    }
    pub fn power(&self) -> f64 {
        self.power
    }

    /// Returns a copy with the power scaled by `factor` (amplitude by its
    /// square root).
    pub fn scaled_power(&self, factor: f64) -> Result<Self> {
        Path::new(
            self.amplitude * factor.sqrt(),
            self.phase_rad,
            self.delay_s,
            self.azimuth_tx_rad,
            self.azimuth_rx_rad,
        )
    }
}

/// Gaussian standard deviations applied to every path of a scene per snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    /// Relative amplitude jitter (multiplicative, `1 + N(0, std)`).
    pub amplitude_rel: f64,
    pub phase_rad: f64,
    pub delay_s: f64,
    pub azimuth_rad: f64,
}

impl JitterSpec {
    pub fn none() -> Self {
        Self {
            amplitude_rel: 0.0,
            phase_rad: 0.0,
            delay_s: 0.0,
            azimuth_rad: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.amplitude_rel,
            self.phase_rad,
            self.delay_s,
            self.azimuth_rad,
        ];
        if all.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("jitter standard deviations must be >= 0"));
        }
        Ok(())
    }
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            amplitude_rel: 0.05,
            phase_rad: 0.15,
            delay_s: 5e-12,
            azimuth_rad: 1.5_f64.to_radians(),
        }
    }
}

/// A class-specific multipath layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    paths: Vec<Path>,
    class_label: usize,
    jitter: JitterSpec,
}

impl Scene {
    pub fn new(paths: Vec<Path>, class_label: usize, jitter: JitterSpec) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("a scene needs at least one path"));
        }
        jitter.validate()?;
        Ok(Self {
            paths,
            class_label,
            jitter,
        })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }
    pub fn class_label(&self) -> usize {
        self.class_label
    }
    pub fn jitter(&self) -> &JitterSpec {
        &self.jitter
    }

    pub fn with_jitter(mut self, jitter: JitterSpec) -> Result<Self> {
        jitter.validate()?;
        self.jitter = jitter;
        Ok(self)
    }
}

/// Uniform azimuth grid shared by all beampatterns of one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AzimuthGrid {
    pub start_rad: f64,
    pub step_rad: f64,
    pub len: usize,
}

impl AzimuthGrid {
    /// 1° grid over `[-90°, 90°]`.
    pub fn front_hemisphere() -> Self {
        Self {
            start_rad: (-90.0_f64).to_radians(),
            step_rad: 1.0_f64.to_radians(),
            len: 181,
        }
    }

    pub fn angle(&self, index: usize) -> f64 {
        self.start_rad + self.step_rad * index as f64
    }

    /// Nearest grid index; the flag is set when the angle fell outside the
    /// grid and was clamped to an edge.
    pub fn nearest(&self, azimuth_rad: f64) -> (usize, bool) {
        let pos = ((azimuth_rad - self.start_rad) / self.step_rad).round();
        if pos < 0.0 {
            (0, true)
        } else if pos > (self.len - 1) as f64 {
            (self.len - 1, true)
        } else {
            (pos as usize, false)
        }
    }
}

/// Transmit and receive gain tables of one probing beampattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamPattern {
    grid: AzimuthGrid,
    tx_gain: Vec<f64>,
    rx_gain: Vec<f64>,
    beam_index: usize,
}

impl BeamPattern {
    pub fn new(
        grid: AzimuthGrid,
        tx_gain: Vec<f64>,
        rx_gain: Vec<f64>,
        beam_index: usize,
    ) -> Result<Self> {
        if grid.len == 0 || tx_gain.len() != grid.len || rx_gain.len() != grid.len {
            return Err(Error::invalid(format!(
                "gain tables must have grid length {}, got tx {} / rx {}",
                grid.len,
                tx_gain.len(),
                rx_gain.len()
            )));
        }
        if tx_gain.iter().chain(&rx_gain).any(|g| !(*g >= 0.0)) {
            return Err(Error::invalid("beampattern gains must be >= 0"));
        }
        Ok(Self {
            grid,
            tx_gain,
            rx_gain,
            beam_index,
        })
    }

    /// A pattern with unit gain in every direction.
    pub fn isotropic(grid: AzimuthGrid, beam_index: usize) -> Self {
        Self {
            grid,
            tx_gain: vec![1.0; grid.len],
            rx_gain: vec![1.0; grid.len],
            beam_index,
        }
    }

    pub fn grid(&self) -> &AzimuthGrid {
        &self.grid
    }
    pub fn tx_gain(&self) -> &[f64] {
        &self.tx_gain
    }
    pub fn rx_gain(&self) -> &[f64] {
        &self.rx_gain
    }
    pub fn beam_index(&self) -> usize {
        self.beam_index
    }
}

/// Sampled CFRs of `n_streams` spatial streams over `n_subcarriers`
/// subcarriers, stored stream-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    n_streams: usize,
    n_subcarriers: usize,
    values: Vec<Complex64>,
    subcarrier_freqs_hz: Vec<f64>,
    guard_mask: Vec<bool>,
}

impl CsiFrame {
    pub fn new(
        n_streams: usize,
        values: Vec<Complex64>,
        subcarrier_freqs_hz: Vec<f64>,
        guard_mask: Vec<bool>,
    ) -> Result<Self> {
        let n_subcarriers = subcarrier_freqs_hz.len();
        if n_streams == 0 || n_subcarriers == 0 {
            return Err(Error::invalid("CSI frame needs at least one stream and subcarrier"));
        }
        if values.len() != n_streams * n_subcarriers {
            return Err(Error::ShapeMismatch {
                expected: vec![n_streams, n_subcarriers],
                actual: vec![values.len()],
            });
        }
        if guard_mask.len() != n_subcarriers {
            return Err(Error::ShapeMismatch {
                expected: vec![n_subcarriers],
                actual: vec![guard_mask.len()],
            });
        }
        Ok(Self {
            n_streams,
            n_subcarriers,
            values,
            subcarrier_freqs_hz,
            guard_mask,
        })
    }

    pub fn n_streams(&self) -> usize {
        self.n_streams
    }
    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
    pub fn subcarrier_freqs_hz(&self) -> &[f64] {
        &self.subcarrier_freqs_hz
    }
    pub fn guard_mask(&self) -> &[bool] {
        &self.guard_mask
    }

    pub fn stream(&self, s: usize) -> &[Complex64] {
        &self.values[s * self.n_subcarriers..(s + 1) * self.n_subcarriers]
    }

    pub fn stream_mut(&mut self, s: usize) -> &mut [Complex64] {
        let m = self.n_subcarriers;
        &mut self.values[s * m..(s + 1) * m]
    }

    pub fn get(&self, s: usize, k: usize) -> Complex64 {
        self.values[s * self.n_subcarriers + k]
    }
}

/// Units of a beam SNR vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrScale {
    Linear,
    Db,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSnrVector {
    values: Vec<f64>,
    scale: SnrScale,
    quantized: bool,
}

impl BeamSnrVector {
    pub fn new(values: Vec<f64>, scale: SnrScale, quantized: bool) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("beam SNR entries must be finite and >= 0"));
        }
        if quantized && values.iter().any(|v| (v * 4.0).fract() != 0.0) {
            return Err(Error::invalid(
                "quantized beam SNR entries must be multiples of 0.25",
            ));
        }
        Ok(Self {
            values,
            scale,
            quantized,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn scale(&self) -> SnrScale {
        self.scale
    }
    pub fn quantized(&self) -> bool {
        self.quantized
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Hardware impairment model for one measurement session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentConfig {
    /// Per-frame AGC gain error, dB.
    pub agc_gain_db_std: f64,
    /// Per-frame SFO phase slope, rad per subcarrier index.
    pub sfo_slope_rad_per_subcarrier_std: f64,
    /// Per-frame packet boundary detection phase offset, rad.
    pub pbd_offset_rad_std: f64,
    /// Residual CFO phase drift per frame within a session, rad.
    pub cfo_drift_rad_per_frame_std: f64,
    /// Fixed phase offset of each receive RF chain, rad.
    pub rf_chain_phase_offsets_rad: Vec<f64>,
    pub bsnr_quantize: bool,
    /// Noise variance of the beam SNR measurement.
    pub noise_var: f64,
    /// Range of the per-frame factor that multiplies every reported beam SNR
    /// (the packet-to-packet scaling seen on real hardware). `[1, 1]` disables it.
    #[serde(default = "unit_range")]
    pub bsnr_scale_range: [f64; 2],
}

fn unit_range() -> [f64; 2] {
    [1.0, 1.0]
}

impl ImpairmentConfig {
    /// No impairment at all; beam SNR stays linear and unquantized.
    pub fn identity(n_streams: usize, noise_var: f64) -> Self {
        Self {
            agc_gain_db_std: 0.0,
            sfo_slope_rad_per_subcarrier_std: 0.0,
            pbd_offset_rad_std: 0.0,
            cfo_drift_rad_per_frame_std: 0.0,
            rf_chain_phase_offsets_rad: vec![0.0; n_streams],
            bsnr_quantize: false,
            noise_var,
            bsnr_scale_range: unit_range(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [
            self.agc_gain_db_std,
            self.sfo_slope_rad_per_subcarrier_std,
            self.pbd_offset_rad_std,
            self.cfo_drift_rad_per_frame_std,
        ];
        if stds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("impairment standard deviations must be >= 0"));
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(Error::invalid(format!(
                "noise variance must be > 0, got {}",
                self.noise_var
            )));
        }
        if self.rf_chain_phase_offsets_rad.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("RF chain offsets must be finite"));
        }
        let [lo, hi] = self.bsnr_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!("bad beam SNR scale range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            agc_gain_db_std: 1.0,
            sfo_slope_rad_per_subcarrier_std: 0.05,
            pbd_offset_rad_std: std::f64::consts::PI,
            cfo_drift_rad_per_frame_std: 0.1,
            rf_chain_phase_offsets_rad: vec![0.0, 1.1, -2.0],
            bsnr_quantize: true,
            noise_var: 0.05,
            bsnr_scale_range: [0.9, 1.2],
        }
    }
}
