//! Measurement preprocessing: guard removal, linear phase calibration,
//! per-cell standardization and beam-SNR scaling augmentation.
//!
//! The network sees a CSI frame as `2·N_s` real channels over the active
//! subcarriers: for every stream its amplitude followed by its calibrated
//! phase.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{BeamSnrVector, CsiFrame, Dataset};
use crate::{seed, Error, Result};

/// Lower bound applied to every fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Range of the beam-SNR augmentation scale factor.
pub const AUGMENT_RANGE: (f64, f64) = (0.9, 1.2);

/// Drops guard subcarriers; the remaining columns are copied unchanged.
pub fn remove_guard_subcarriers(frame: &CsiFrame) -> Result<CsiFrame> {
    let keep: Vec<usize> = frame
        .guard_mask()
        .iter()
        .enumerate()
        .filter_map(|(k, g)| (!g).then_some(k))
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid("every subcarrier is a guard"));
    }
    if keep.len() == frame.n_subcarriers() {
        return Ok(frame.clone());
    }
    let values = (0..frame.n_streams())
        .flat_map(|s| keep.iter().map(move |&k| frame.get(s, k)))
        .collect();
    let freqs = keep.iter().map(|&k| frame.subcarrier_freqs_hz()[k]).collect();
    CsiFrame::new(frame.n_streams(), values, freqs, vec![false; keep.len()])
}

/// Standard unwrapping: whenever consecutive samples jump by more than π, a
/// multiple of 2π is accumulated to undo the jump.
pub fn unwrap_phase(phase: &mut [f64]) {
    let mut correction = 0.0;
    let mut prev = match phase.first() {
        Some(p) => *p,
        None => return,
    };
    for p in phase.iter_mut().skip(1) {
        let raw = *p;
        let diff = raw - prev;
        if diff.abs() > PI {
            correction += (diff + PI).rem_euclid(TAU) - PI - diff;
        }
        prev = raw;
        *p = raw + correction;
    }
}

/// Least-squares intercept and slope of `y` against `x`.
fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - xm) * (b - ym);
        sxx += (a - xm) * (a - xm);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (ym - slope * xm, slope)
}

/// Subcarrier index positions recovered from the frequency grid, so that
/// gaps left by removed subcarriers keep their spacing.
fn subcarrier_positions(freqs: &[f64]) -> Vec<f64> {
    let spacing = freqs
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    freqs.iter().map(|f| (f - freqs[0]) / spacing).collect()
}

/// Per-stream residual phase after unwrapping and removing the fitted line,
/// stream-major. Residuals are not rewrapped.
pub fn calibrated_phases(frame: &CsiFrame) -> Result<Vec<f64>> {
    let m = frame.n_subcarriers();
    if m < 3 {
        return Err(Error::invalid(format!(
            "phase calibration needs at least 3 subcarriers, got {m}"
        )));
    }
    let x = subcarrier_positions(frame.subcarrier_freqs_hz());
    let mut out = Vec::with_capacity(frame.n_streams() * m);
    for s in 0..frame.n_streams() {
        let mut phase: Vec<f64> = frame.stream(s).iter().map(|v| v.arg()).collect();
        unwrap_phase(&mut phase);
        let (b, a) = fit_line(&x, &phase);
        out.extend(phase.iter().zip(&x).map(|(p, xi)| p - (b + a * xi)));
    }
    Ok(out)
}

/// Removes the linear phase trend (SFO slope and PBD/CFO/RF-chain offsets)
/// from every stream; magnitudes are kept.
pub fn calibrate_phase_linear(frame: &CsiFrame) -> Result<CsiFrame> {
    let residual = calibrated_phases(frame)?;
    let values = frame
        .values()
        .iter()
        .zip(&residual)
        .map(|(v, &p)| Complex64::from_polar(v.norm(), p))
        .collect();
    CsiFrame::new(
        frame.n_streams(),
        values,
        frame.subcarrier_freqs_hz().to_vec(),
        frame.guard_mask().to_vec(),
    )
}

/// Network-ready real features of a raw frame: guards removed, phase
/// calibrated, laid out as `[2·N_s, M_s]` with (amplitude, phase) per stream.
pub fn csi_features(frame: &CsiFrame) -> Result<Vec<f64>> {
    let active = remove_guard_subcarriers(frame)?;
    let phases = calibrated_phases(&active)?;
    let m = active.n_subcarriers();
    let mut out = Vec::with_capacity(2 * active.n_streams() * m);
    for s in 0..active.n_streams() {
        out.extend(active.stream(s).iter().map(|v| v.norm()));
        out.extend_from_slice(&phases[s * m..(s + 1) * m]);
    }
    Ok(out)
}

/// Per-cell training statistics.
///
/// CSI statistics are per (stream, active subcarrier) for amplitude and
/// calibrated phase; beam-SNR statistics are per beam index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibStats {
    pub amp_mean: Vec<Vec<f64>>,
    pub amp_std: Vec<Vec<f64>>,
    pub phase_mean: Vec<Vec<f64>>,
    pub phase_std: Vec<Vec<f64>>,
    pub bsnr_mean: Vec<f64>,
    pub bsnr_std: Vec<f64>,
}

impl CalibStats {
    pub fn n_streams(&self) -> usize {
        self.amp_mean.len()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.amp_mean.first().map_or(0, Vec::len)
    }

    pub fn n_beams(&self) -> usize {
        self.bsnr_mean.len()
    }

    /// Shape `[channels, width]` of standardized CSI.
    pub fn csi_shape(&self) -> [usize; 2] {
        [2 * self.n_streams(), self.n_subcarriers()]
    }

    fn csi_mean_std(&self) -> (Vec<f64>, Vec<f64>) {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for s in 0..self.n_streams() {
            mean.extend_from_slice(&self.amp_mean[s]);
            mean.extend_from_slice(&self.phase_mean[s]);
            std.extend_from_slice(&self.amp_std[s]);
            std.extend_from_slice(&self.phase_std[s]);
        }
        (mean, std)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Streaming (Welford) mean and population variance per cell.
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(width: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.mean.len()],
                actual: vec![x.len()],
            });
        }
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
        Ok(())
    }

    fn finish(self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        let std = self
            .m2
            .iter()
            .map(|s| (s / n).sqrt().max(STD_FLOOR))
            .collect();
        (self.mean, std)
    }
}

fn split_rows(flat: &[f64], streams: usize, m: usize, which: usize) -> Vec<Vec<f64>> {
    (0..streams)
        .map(|s| flat[(2 * s + which) * m..(2 * s + which + 1) * m].to_vec())
        .collect()
}

/// Fits standardization statistics over every sample of `train`.
pub fn fit_calib_stats(train: &Dataset) -> Result<CalibStats> {
    let first = train
        .csi
        .first()
        .ok_or_else(|| Error::invalid("cannot fit statistics on an empty dataset"))?;
    let f0 = csi_features(first)?;
    let streams = first.n_streams();
    let m = f0.len() / (2 * streams);
    let mut csi = Moments::new(f0.len());
    let mut bsnr = Moments::new(train.bsnr[0].len());
    for (c, b) in train.csi.iter().zip(&train.bsnr) {
        csi.push(&csi_features(c)?)?;
        bsnr.push(b.values())?;
    }
    let (cm, cs) = csi.finish();
    let (bm, bs) = bsnr.finish();
    Ok(CalibStats {
        amp_mean: split_rows(&cm, streams, m, 0),
        amp_std: split_rows(&cs, streams, m, 0),
        phase_mean: split_rows(&cm, streams, m, 1),
        phase_std: split_rows(&cs, streams, m, 1),
        bsnr_mean: bm,
        bsnr_std: bs,
    })
}

/// Standardizes precomputed CSI features (see [`csi_features`]).
pub fn standardize_csi_features(features: &[f64], stats: &CalibStats) -> Result<Vec<f64>> {
    let (mean, std) = stats.csi_mean_std();
    if features.len() != mean.len() {
        let [c, w] = stats.csi_shape();
        return Err(Error::ShapeMismatch {
            expected: vec![c, w],
            actual: vec![features.len()],
        });
    }
    Ok(features
        .iter()
        .zip(mean.iter().zip(&std))
        .map(|(x, (m, s))| (x - m) / s)
        .collect())
}

/// `(x − mean)/std` per cell of a raw CSI frame, shape `[2·N_s, M_s]`.
pub fn standardize_csi(frame: &CsiFrame, stats: &CalibStats) -> Result<Vec<f64>> {
    if frame.n_streams() != stats.n_streams() {
        return Err(Error::ShapeMismatch {
            expected: vec![stats.n_streams()],
            actual: vec![frame.n_streams()],
        });
    }
    standardize_csi_features(&csi_features(frame)?, stats)
}

/// `(x − mean)/std` per beam index.
pub fn standardize_bsnr(values: &[f64], stats: &CalibStats) -> Result<Vec<f64>> {
    if values.len() != stats.n_beams() {
        return Err(Error::ShapeMismatch {
            expected: vec![stats.n_beams()],
            actual: vec![values.len()],
        });
    }
    Ok(values
        .iter()
        .zip(stats.bsnr_mean.iter().zip(&stats.bsnr_std))
        .map(|(x, (m, s))| (x - m) / s)
        .collect())
}

/// The scale factor drawn by [`augment_beam_snr`] for `rng_seed`.
pub fn augment_factor(rng_seed: u64) -> f64 {
    let (lo, hi) = AUGMENT_RANGE;
    seed::rng(rng_seed).random_range(lo..=hi)
}

/// Multiplies every entry by one factor drawn uniformly from `[0.9, 1.2]`.
pub fn augment_beam_snr(bsnr: &BeamSnrVector, rng_seed: u64) -> Result<BeamSnrVector> {
    let factor = augment_factor(rng_seed);
    scale_beam_snr(bsnr, factor)
}

pub fn scale_beam_snr(bsnr: &BeamSnrVector, factor: f64) -> Result<BeamSnrVector> {
    if factor == 1.0 {
        return Ok(bsnr.clone());
    }
    BeamSnrVector::new(
        bsnr.values().iter().map(|v| v * factor).collect(),
        bsnr.scale(),
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{SnrScale, Split};

    fn freqs(m: usize) -> Vec<f64> {
        (0..m).map(|k| 5.0e9 + 312.5e3 * k as f64).collect()
    }

    fn frame_from_phase(streams: usize, m: usize, phase: impl Fn(usize, usize) -> f64) -> CsiFrame {
        let values = (0..streams)
            .flat_map(|s| (0..m).map(move |k| (s, k)))
            .map(|(s, k)| Complex64::from_polar(1.0 + 0.01 * k as f64, phase(s, k)))
            .collect();
        CsiFrame::new(streams, values, freqs(m), vec![false; m]).unwrap()
    }

    #[test]
    fn guard_removal_widths() {
        let mut mask = vec![false; 242];
        for k in [0, 1, 2, 3, 238, 239, 240, 241] {
            mask[k] = true;
        }
        let values = (0..3 * 242).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let f = CsiFrame::new(3, values, freqs(242), mask).unwrap();
        let out = remove_guard_subcarriers(&f).unwrap();
        assert_eq!(out.n_subcarriers(), 234);
        for s in 0..3 {
            for k in 0..234 {
                assert_eq!(out.get(s, k), f.get(s, k + 4));
            }
        }
    }

    #[test]
    fn no_guards_is_identity_and_all_guards_fail() {
        let f = frame_from_phase(2, 8, |_, _| 0.3);
        assert_eq!(remove_guard_subcarriers(&f).unwrap(), f);
        let all = CsiFrame::new(1, vec![Complex64::new(0.0, 0.0); 4], freqs(4), vec![true; 4]).unwrap();
        assert!(remove_guard_subcarriers(&all).is_err());
    }

    #[test]
    fn linear_phase_removed() {
        let f = frame_from_phase(3, 64, |s, k| 0.7 * s as f64 - 0.21 * k as f64 + 1.0);
        let out = calibrate_phase_linear(&f).unwrap();
        for v in out.values() {
            assert!(v.arg().abs() < 1e-9);
        }
    }

    #[test]
    fn positive_real_frame_unchanged() {
        let f = frame_from_phase(2, 16, |_, _| 0.0);
        let out = calibrate_phase_linear(&f).unwrap();
        for (a, b) in f.values().iter().zip(out.values()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn too_few_subcarriers() {
        let f = frame_from_phase(1, 2, |_, _| 0.0);
        assert!(calibrate_phase_linear(&f).is_err());
    }

    #[test]
    fn unwrap_handles_multiple_turns() {
        let truth: Vec<f64> = (0..50).map(|k| -2.9 * k as f64).collect();
        let mut wrapped: Vec<f64> = truth
            .iter()
            .map(|p| Complex64::from_polar(1.0, *p).arg())
            .collect();
        unwrap_phase(&mut wrapped);
        for (a, b) in wrapped.iter().zip(&truth) {
            assert!((a - b - (wrapped[0] - truth[0])).abs() < 1e-9);
        }
    }

    fn tiny_dataset(cells: &[[f64; 2]]) -> Dataset {
        let csi = cells
            .iter()
            .map(|c| {
                let v = vec![
                    Complex64::new(c[0], 0.0),
                    Complex64::new(c[0], 0.0),
                    Complex64::new(c[0], 0.0),
                ];
                CsiFrame::new(1, v, freqs(3), vec![false; 3]).unwrap()
            })
            .collect();
        let bsnr = cells
            .iter()
            .map(|c| BeamSnrVector::new(vec![c[1], 1.0], SnrScale::Db, false).unwrap())
            .collect();
        Dataset::new(csi, bsnr, vec![None; cells.len()], 1, Split::Train, 0).unwrap()
    }

    #[test]
    fn two_sample_stats() {
        let ds = tiny_dataset(&[[0.0, 0.0], [2.0, 2.0]]);
        let st = fit_calib_stats(&ds).unwrap();
        assert_eq!(st.amp_mean[0], vec![1.0; 3]);
        assert_eq!(st.amp_std[0], vec![1.0; 3]);
        assert_eq!(st.bsnr_mean, vec![1.0, 1.0]);
        assert_eq!(st.bsnr_std, vec![1.0, STD_FLOOR]);
    }

    #[test]
    fn constant_dataset_floors_std() {
        let ds = tiny_dataset(&[[3.0, 5.0], [3.0, 5.0], [3.0, 5.0]]);
        let st = fit_calib_stats(&ds).unwrap();
        assert_eq!(st.amp_mean[0], vec![3.0; 3]);
        assert!(st.amp_std[0].iter().all(|s| *s == STD_FLOOR));
        assert!(st.phase_std[0].iter().all(|s| *s == STD_FLOOR));
        assert_eq!(st.bsnr_mean[0], 5.0);
        let z = standardize_bsnr(&[5.0, 1.0], &st).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        assert!(standardize_bsnr(&[1.0], &st).is_err());
    }

    #[test]
    fn augmentation_is_a_single_scale() {
        let b = BeamSnrVector::new((0..36).map(|i| 1.0 + i as f64).collect(), SnrScale::Db, true).unwrap();
        let a = augment_beam_snr(&b, 1234).unwrap();
        let r0 = a.values()[0] / b.values()[0];
        assert!((0.9..=1.2).contains(&r0));
        for (x, y) in b.values().iter().zip(a.values()) {
            assert!((y / x - r0).abs() < 1e-12);
        }
        assert_eq!(scale_beam_snr(&b, 1.0).unwrap(), b);
        assert_eq!(augment_beam_snr(&b, 1234).unwrap(), a);
    }

    #[test]
    fn stats_round_trip_json() {
        let ds = tiny_dataset(&[[0.0, 0.0], [2.0, 2.0]]);
        let st = fit_calib_stats(&ds).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("calib.json");
        st.save(&p).unwrap();
        assert_eq!(CalibStats::load(&p).unwrap(), st);
    }
}
