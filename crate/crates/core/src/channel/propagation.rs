//! Closed-form channel observables of a multipath list.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use super::types::{BeamPattern, BeamSnrVector, Path, SnrScale};
use crate::{Error, Result};

/// Baseband voltage `Σ aᵢ·exp(−jθᵢ)`.
pub fn simulate_baseband_voltage(paths: &[Path]) -> Result<Complex64> {
    if paths.is_empty() {
        return Err(Error::invalid("baseband voltage needs at least one path"));
    }
    Ok(paths
        .iter()
        .map(|p| Complex64::from_polar(p.amplitude(), -p.phase_rad()))
        .sum())
}

/// Received power in dB, `10·log10(|V|²)`.
///
/// A zero voltage yields `f64::NEG_INFINITY`.
pub fn compute_rssi(voltage: Complex64) -> f64 {
    let power = voltage.norm_sqr();
    if power == 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * power.log10()
}

/// Samples the CFR `H(f_k) = Σ aᵢ·exp(−jθᵢ)·exp(−j2π f_k τᵢ)` on a subcarrier
/// grid for one receive stream.
///
/// Streams are elements of a half-wavelength uniform linear array, so stream
/// `s` sees an extra phase of `−π·s·sin(ψᵢ)` on path `i`.
pub fn sample_cfr(
    paths: &[Path],
    subcarrier_freqs_hz: &[f64],
    stream_index: usize,
) -> Result<Vec<Complex64>> {
    if subcarrier_freqs_hz.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(
            "subcarrier frequencies must be strictly increasing",
        ));
    }
    let array_phase: Vec<f64> = paths
        .iter()
        .map(|p| PI * stream_index as f64 * p.azimuth_rx_rad().sin())
        .collect();
    Ok(subcarrier_freqs_hz
        .iter()
        .map(|&f| {
            paths
                .iter()
                .zip(&array_phase)
                .map(|(p, &arr)| {
                    let phase = p.phase_rad() + TAU * f * p.delay_s() + arr;
                    Complex64::from_polar(p.amplitude(), -phase)
                })
                .sum()
        })
        .collect())
}

/// Beam SNR together with the number of gain lookups that fell off the
/// azimuth grid and were clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSnrEvaluation {
    pub snr: BeamSnrVector,
    pub clamped_lookups: usize,
}

/// `h_m = (1/σ²)·Σᵢ γ_m(θᵢ)·ζ_m(ψᵢ)·Pᵢ` for every pattern, with nearest-grid
/// gain lookup.
pub fn compute_beam_snr(
    paths: &[Path],
    patterns: &[BeamPattern],
    noise_var: f64,
) -> Result<BeamSnrEvaluation> {
    if patterns.is_empty() {
        return Err(Error::invalid("beam SNR needs at least one beampattern"));
    }
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(Error::invalid(format!(
            "noise variance must be > 0, got {noise_var}"
        )));
    }
    let grid = *patterns[0].grid();
    if patterns.iter().any(|p| *p.grid() != grid) {
        return Err(Error::invalid("beampatterns must share one azimuth grid"));
    }

    let mut clamped = 0;
    let lookups: Vec<(usize, usize)> = paths
        .iter()
        .map(|p| {
            let (ti, tc) = grid.nearest(p.azimuth_tx_rad());
            let (ri, rc) = grid.nearest(p.azimuth_rx_rad());
            clamped += usize::from(tc) + usize::from(rc);
            (ti, ri)
        })
        .collect();

    let values = patterns
        .iter()
        .map(|pat| {
            let total: f64 = paths
                .iter()
                .zip(&lookups)
                .map(|(p, &(ti, ri))| pat.tx_gain()[ti] * pat.rx_gain()[ri] * p.power())
                .sum();
            total / noise_var
        })
        .collect();
    Ok(BeamSnrEvaluation {
        snr: BeamSnrVector::new(values, SnrScale::Linear, false)?,
        clamped_lookups: clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::types::AzimuthGrid;

    fn unit_path(phase: f64) -> Path {
        Path::new(1.0, phase, 0.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn single_unit_path_voltage() {
        let v = simulate_baseband_voltage(&[unit_path(0.0)]).unwrap();
        assert_eq!(v, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn opposite_phases_cancel() {
        let v = simulate_baseband_voltage(&[unit_path(0.0), unit_path(PI)]).unwrap();
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn empty_path_list_rejected() {
        assert!(simulate_baseband_voltage(&[]).is_err());
    }

    #[test]
    fn rssi_values() {
        assert_eq!(compute_rssi(Complex64::new(1.0, 0.0)), 0.0);
        let r = compute_rssi(Complex64::new(3.0, 4.0));
        assert!((r - 13.979_400_086_720_377).abs() < 1e-12);
        assert_eq!(compute_rssi(Complex64::new(0.0, 0.0)), f64::NEG_INFINITY);
    }

    #[test]
    fn rssi_scaling_identity() {
        let v = Complex64::new(0.3, -1.7);
        for alpha in [0.1, 2.0, 17.5] {
            let d = compute_rssi(v * alpha) - compute_rssi(v);
            assert!((d - 20.0 * alpha.log10()).abs() < 1e-10);
        }
    }

    #[test]
    fn pure_impulse_gives_flat_cfr() {
        let freqs: Vec<f64> = (0..16).map(|k| 5.0e9 + k as f64 * 312.5e3).collect();
        let h = sample_cfr(&[unit_path(0.0)], &freqs, 0).unwrap();
        assert!(h.iter().all(|c| (*c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn delayed_path_has_linear_phase() {
        let tau = 20e-9;
        let path = Path::new(1.0, 0.0, tau, 0.0, 0.0).unwrap();
        let freqs: Vec<f64> = (0..8).map(|k| 1.0e6 * k as f64).collect();
        let h = sample_cfr(&[path], &freqs, 0).unwrap();
        for (c, f) in h.iter().zip(&freqs) {
            assert!((c.norm() - 1.0).abs() < 1e-12);
            let expected = Complex64::from_polar(1.0, -TAU * f * tau);
            assert!((c - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn non_monotone_grid_rejected() {
        assert!(sample_cfr(&[unit_path(0.0)], &[1.0, 3.0, 2.0], 0).is_err());
        assert!(sample_cfr(&[unit_path(0.0)], &[1.0, 1.0], 0).is_err());
    }

    #[test]
    fn all_unit_beam_snr() {
        let grid = AzimuthGrid::front_hemisphere();
        let pats = vec![BeamPattern::isotropic(grid, 0)];
        let out = compute_beam_snr(&[unit_path(0.0)], &pats, 1.0).unwrap();
        assert_eq!(out.snr.values(), &[1.0]);
        assert_eq!(out.clamped_lookups, 0);
    }

    #[test]
    fn beam_snr_doubles_with_power() {
        let grid = AzimuthGrid::front_hemisphere();
        let tx: Vec<f64> = (0..grid.len).map(|i| 1.0 + (i % 7) as f64).collect();
        let pats = vec![BeamPattern::new(grid, tx.clone(), tx, 0).unwrap()];
        let paths = vec![
            Path::new(0.7, 0.0, 0.0, 0.3, -0.2).unwrap(),
            Path::new(0.2, 0.0, 0.0, -0.9, 0.4).unwrap(),
        ];
        let doubled: Vec<Path> = paths.iter().map(|p| p.scaled_power(2.0).unwrap()).collect();
        let a = compute_beam_snr(&paths, &pats, 0.5).unwrap();
        let b = compute_beam_snr(&doubled, &pats, 0.5).unwrap();
        for (x, y) in a.snr.values().iter().zip(b.snr.values()) {
            assert!((2.0 * x - y).abs() < 1e-12 * y.abs());
        }
    }

    #[test]
    fn beam_snr_counts_clamped_lookups() {
        let grid = AzimuthGrid::front_hemisphere();
        let pats = vec![BeamPattern::isotropic(grid, 0)];
        let behind = Path::new(1.0, 0.0, 0.0, 3.0, 0.0).unwrap();
        let out = compute_beam_snr(&[behind], &pats, 1.0).unwrap();
        assert_eq!(out.clamped_lookups, 1);
        assert_eq!(out.snr.values(), &[1.0]);
    }

    #[test]
    fn beam_snr_argument_errors() {
        assert!(compute_beam_snr(&[unit_path(0.0)], &[], 1.0).is_err());
        let pats = vec![BeamPattern::isotropic(AzimuthGrid::front_hemisphere(), 0)];
        assert!(compute_beam_snr(&[unit_path(0.0)], &pats, 0.0).is_err());
    }
}
