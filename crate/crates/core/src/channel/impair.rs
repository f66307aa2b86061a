//! Receiver hardware impairments.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::types::{BeamSnrVector, CsiFrame, ImpairmentConfig, SnrScale};
use crate::{seed, Result};

/// Quantization step of reported beam SNRs, dB.
pub const BSNR_STEP_DB: f64 = 0.25;

/// Rounds a dB value to the nearest multiple of 0.25 dB, floored at 0 dB.
pub fn quantize_db(value_db: f64) -> f64 {
    let q = (value_db / BSNR_STEP_DB).round() * BSNR_STEP_DB;
    if q > 0.0 {
        q
    } else {
        0.0
    }
}

/// Applies AGC gain error, SFO slope, PBD offset, CFO drift and RF-chain
/// offsets to a CSI frame; scales the beam SNR by one per-frame factor and
/// optionally quantizes it in dB.
///
/// All random quantities are drawn from `rng_seed`; the CFO phase is the drawn
/// drift rate times `frame_index` (the frame's position within its session).
/// Impairments with zero magnitude leave the data bit-identical.
pub fn apply_impairments(
    frame: &CsiFrame,
    bsnr: &BeamSnrVector,
    cfg: &ImpairmentConfig,
    rng_seed: u64,
    frame_index: u64,
) -> Result<(CsiFrame, BeamSnrVector)> {
    cfg.validate()?;
    let mut rng = seed::rng(rng_seed);
    let mut draw = |std: f64| {
        let z: f64 = StandardNormal.sample(&mut rng);
        if std > 0.0 {
            std * z
        } else {
            0.0
        }
    };
    let agc_db = draw(cfg.agc_gain_db_std);
    let sfo_slope = draw(cfg.sfo_slope_rad_per_subcarrier_std);
    let pbd = draw(cfg.pbd_offset_rad_std);
    let cfo_rate = draw(cfg.cfo_drift_rad_per_frame_std);
    let [lo, hi] = cfg.bsnr_scale_range;
    let bsnr_factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };

    let gain = 10f64.powf(agc_db / 20.0);
    let common = pbd + cfo_rate * frame_index as f64;

    let mut out = frame.clone();
    for s in 0..frame.n_streams() {
        let rf = cfg
            .rf_chain_phase_offsets_rad
            .get(s)
            .copied()
            .unwrap_or(0.0);
        for (k, v) in out.stream_mut(s).iter_mut().enumerate() {
            let phase = sfo_slope * k as f64 + common + rf;
            if phase != 0.0 || gain != 1.0 {
                *v *= Complex64::from_polar(gain, phase);
            }
        }
    }

    let bsnr_out = if cfg.bsnr_quantize {
        let db = bsnr.values().iter().map(|&v| match bsnr.scale() {
            SnrScale::Linear => 10.0 * v.log10(),
            SnrScale::Db => v,
        });
        let scaled = db.map(|v| quantize_db(v * bsnr_factor)).collect();
        BeamSnrVector::new(scaled, SnrScale::Db, true)?
    } else if bsnr_factor != 1.0 {
        let scaled = bsnr.values().iter().map(|v| v * bsnr_factor).collect();
        BeamSnrVector::new(scaled, bsnr.scale(), false)?
    } else {
        bsnr.clone()
    };
    Ok((out, bsnr_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> CsiFrame {
        let freqs: Vec<f64> = (0..12).map(|k| 5.0e9 + 312.5e3 * k as f64).collect();
        let values = (0..24)
            .map(|i| Complex64::new(1.0 + 0.1 * i as f64, -0.3 + 0.05 * i as f64))
            .collect();
        CsiFrame::new(2, values, freqs, vec![false; 12]).unwrap()
    }

    #[test]
    fn identity_config_is_bit_identical() {
        let f = frame();
        let b = BeamSnrVector::new(vec![3.0, 0.5, 7.25], SnrScale::Linear, false).unwrap();
        let cfg = ImpairmentConfig::identity(2, 1.0);
        let (f2, b2) = apply_impairments(&f, &b, &cfg, 99, 17).unwrap();
        for (x, y) in f.values().iter().zip(f2.values()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
        assert_eq!(b, b2);
    }

    #[test]
    fn quantization_rounds_to_quarter_db() {
        assert_eq!(quantize_db(1.37), 1.25);
        assert_eq!(quantize_db(1.38), 1.5);
        assert_eq!(quantize_db(-3.0), 0.0);
        let b = BeamSnrVector::new(vec![1.37], SnrScale::Db, false).unwrap();
        let mut cfg = ImpairmentConfig::identity(2, 1.0);
        cfg.bsnr_quantize = true;
        let (_, q) = apply_impairments(&frame(), &b, &cfg, 0, 0).unwrap();
        assert_eq!(q.values(), &[1.25]);
        assert!(q.quantized());
    }

    #[test]
    fn impairments_keep_magnitudes_up_to_common_gain() {
        let f = frame();
        let b = BeamSnrVector::new(vec![1.0], SnrScale::Linear, false).unwrap();
        let cfg = ImpairmentConfig {
            rf_chain_phase_offsets_rad: vec![0.3, -1.0],
            ..ImpairmentConfig::default()
        };
        let (f2, _) = apply_impairments(&f, &b, &cfg, 5, 3).unwrap();
        let ratio = f2.values()[0].norm() / f.values()[0].norm();
        for (x, y) in f.values().iter().zip(f2.values()) {
            assert!((y.norm() / x.norm() - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let f = frame();
        let b = BeamSnrVector::new(vec![10.0, 2.0], SnrScale::Linear, false).unwrap();
        let cfg = ImpairmentConfig::default();
        let a = apply_impairments(&f, &b, &cfg, 42, 1).unwrap();
        let c = apply_impairments(&f, &b, &cfg, 42, 1).unwrap();
        assert_eq!(a, c);
        let d = apply_impairments(&f, &b, &cfg, 43, 1).unwrap();
        assert_ne!(a.0, d.0);
    }

    #[test]
    fn bsnr_scale_is_one_factor_within_range() {
        let b = BeamSnrVector::new(vec![10.0, 2.0, 4.5], SnrScale::Db, false).unwrap();
        let mut cfg = ImpairmentConfig::identity(2, 1.0);
        cfg.bsnr_scale_range = [0.9, 1.2];
        let mut seen = Vec::new();
        for seed in 0..200 {
            let (_, out) = apply_impairments(&frame(), &b, &cfg, seed, 0).unwrap();
            let r = out.values()[0] / b.values()[0];
            assert!((0.9..=1.2).contains(&r));
            for (x, y) in b.values().iter().zip(out.values()) {
                assert!((y / x - r).abs() < 1e-12);
            }
            seen.push(r);
        }
        assert!(seen.iter().any(|&r| r < 0.95) && seen.iter().any(|&r| r > 1.15));
        cfg.bsnr_scale_range = [1.1, 1.0];
        assert!(apply_impairments(&frame(), &b, &cfg, 0, 0).is_err());
    }
}
