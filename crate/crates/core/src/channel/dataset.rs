//! Fingerprinting datasets: generation and on-disk format.
//!
//! A dataset directory holds `manifest.json` plus flat little-endian arrays:
//! `csi_real.bin` / `csi_imag.bin` (`f32`, shape `[n, streams, subcarriers]`),
//! `bsnr.bin` (`f32`, `[n, beams]`) and `labels.bin` (`i32`, `-1` for
//! unlabeled), all sample-major.

use std::fs;
use std::path::Path as FsPath;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::impair::apply_impairments;
use super::propagation::{compute_beam_snr, sample_cfr};
use super::types::{
    BeamPattern, BeamSnrVector, CsiFrame, ImpairmentConfig, Path, Scene, SnrScale,
};
use crate::{seed, Error, Result};

pub const DATASET_FORMAT: &str = "mbsense-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Everything fixed per experiment: class scenes, beampatterns, the OFDM grid
/// and the impairment model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub scenes: Vec<Scene>,
    pub patterns: Vec<BeamPattern>,
    pub subcarrier_freqs_hz: Vec<f64>,
    pub guard_mask: Vec<bool>,
    pub n_streams: usize,
    pub impairments: ImpairmentConfig,
    /// Snapshots per measurement session; the CFO phase restarts each session.
    pub session_length: usize,
}

impl SimSetup {
    fn validate(&self) -> Result<()> {
        if self.scenes.is_empty() {
            return Err(Error::invalid("at least one scene is required"));
        }
        let n_classes = self.scenes.len();
        if let Some(s) = self.scenes.iter().find(|s| s.class_label() >= n_classes) {
            return Err(Error::invalid(format!(
                "scene class label {} out of range for {n_classes} classes",
                s.class_label()
            )));
        }
        if self.guard_mask.len() != self.subcarrier_freqs_hz.len() {
            return Err(Error::invalid("guard mask and subcarrier grid differ in length"));
        }
        if self.n_streams == 0 || self.session_length == 0 {
            return Err(Error::invalid("n_streams and session_length must be >= 1"));
        }
        self.impairments.validate()
    }
}

/// Index-aligned CSI / beam-SNR pairs with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub csi: Vec<CsiFrame>,
    pub bsnr: Vec<BeamSnrVector>,
    pub labels: Vec<Option<usize>>,
    pub n_classes: usize,
    pub split: Split,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        csi: Vec<CsiFrame>,
        bsnr: Vec<BeamSnrVector>,
        labels: Vec<Option<usize>>,
        n_classes: usize,
        split: Split,
        seed: u64,
    ) -> Result<Self> {
        if csi.len() != bsnr.len() || csi.len() != labels.len() {
            return Err(Error::invalid(format!(
                "misaligned dataset: {} CSI, {} beam SNR, {} labels",
                csi.len(),
                bsnr.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().flatten().find(|l| **l >= n_classes) {
            return Err(Error::invalid(format!(
                "label {l} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            csi,
            bsnr,
            labels,
            n_classes,
            split,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.csi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.csi.is_empty()
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.iter().flatten().count()
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            csi: indices.iter().map(|&i| self.csi[i].clone()).collect(),
            bsnr: indices.iter().map(|&i| self.bsnr[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            split: self.split,
            seed: self.seed,
        }
    }

    /// Concatenates datasets (possibly from different tasks) into one
    /// label-free pool.
    pub fn pool_unlabeled(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to pool"))?;
        let mut out = Dataset {
            csi: vec![],
            bsnr: vec![],
            labels: vec![],
            n_classes: parts.iter().map(|d| d.n_classes).max().unwrap_or(0),
            split: first.split,
            seed: first.seed,
        };
        for d in parts {
            out.csi.extend(d.csi.iter().cloned());
            out.bsnr.extend(d.bsnr.iter().cloned());
            out.labels.extend(std::iter::repeat(None).take(d.len()));
        }
        Ok(out)
    }
}

fn jitter_paths(scene: &Scene, rng: &mut impl rand::Rng) -> Result<Vec<Path>> {
    let j = scene.jitter();
    let mut n = |std: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    };
    scene
        .paths()
        .iter()
        .map(|p| {
            let amp = p.amplitude() * (1.0 + n(j.amplitude_rel)).max(0.0);
            let phase = p.phase_rad() + n(j.phase_rad);
            let delay = (p.delay_s() + n(j.delay_s)).max(0.0);
            let az_tx = p.azimuth_tx_rad() + n(j.azimuth_rad);
            let az_rx = p.azimuth_rx_rad() + n(j.azimuth_rad);
            Path::new(amp, phase, delay, az_tx, az_rx)
        })
        .collect()
}

/// Produces one impaired (CSI, beam SNR) snapshot of `scene`.
fn snapshot(setup: &SimSetup, scene: &Scene, snap_seed: u64, frame_index: u64) -> Result<(CsiFrame, BeamSnrVector)> {
    let mut rng = seed::rng(seed::derive(snap_seed, 0));
    let paths = jitter_paths(scene, &mut rng)?;
    let m = setup.subcarrier_freqs_hz.len();
    let mut values = Vec::with_capacity(setup.n_streams * m);
    for s in 0..setup.n_streams {
        let mut h = sample_cfr(&paths, &setup.subcarrier_freqs_hz, s)?;
        for (v, &guard) in h.iter_mut().zip(&setup.guard_mask) {
            if guard {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        values.extend(h);
    }
    let frame = CsiFrame::new(
        setup.n_streams,
        values,
        setup.subcarrier_freqs_hz.clone(),
        setup.guard_mask.clone(),
    )?;
    let bsnr = compute_beam_snr(&paths, &setup.patterns, setup.impairments.noise_var)?.snr;
    apply_impairments(
        &frame,
        &bsnr,
        &setup.impairments,
        seed::derive(snap_seed, 1),
        frame_index,
    )
}

/// Generates `snapshots_per_class` jittered, impaired snapshots of every
/// scene. Samples are class-major; within each class the first
/// `⌈labeled_fraction·count⌉` carry their label. The result depends only on
/// the arguments.
pub fn generate_dataset(
    setup: &SimSetup,
    snapshots_per_class: usize,
    labeled_fraction: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    setup.validate()?;
    if snapshots_per_class == 0 {
        return Err(Error::invalid("snapshots_per_class must be >= 1"));
    }
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "labeled fraction must lie in (0, 1], got {labeled_fraction}"
        )));
    }
    let n_labeled = ((labeled_fraction * snapshots_per_class as f64).ceil() as usize)
        .min(snapshots_per_class);

    let jobs: Vec<(usize, usize)> = (0..setup.scenes.len())
        .flat_map(|c| (0..snapshots_per_class).map(move |t| (c, t)))
        .collect();
    let samples: Vec<(CsiFrame, BeamSnrVector, Option<usize>)> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let scene = &setup.scenes[c];
            let snap_seed = seed::derive(seed::derive(seed, c as u64), t as u64);
            let frame_index = (t % setup.session_length) as u64;
            let (csi, bsnr) = snapshot(setup, scene, snap_seed, frame_index)?;
            let label = (t < n_labeled).then_some(scene.class_label());
            Ok((csi, bsnr, label))
        })
        .collect::<Result<_>>()?;

    let mut csi = Vec::with_capacity(samples.len());
    let mut bsnr = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for (c, b, l) in samples {
        csi.push(c);
        bsnr.push(b);
        labels.push(l);
    }
    Dataset::new(csi, bsnr, labels, setup.scenes.len(), split, seed)
}

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub n_samples: usize,
    pub n_streams: usize,
    pub n_subcarriers: usize,
    pub n_beams: usize,
    pub n_classes: usize,
    pub csi_shape: [usize; 3],
    pub bsnr_shape: [usize; 2],
    pub dtype: String,
    pub label_dtype: String,
    /// Distinct labels present, ascending.
    pub label_list: Vec<usize>,
    pub n_labeled: usize,
    pub split: Split,
    pub seed: u64,
    pub subcarrier_freqs_hz: Vec<f64>,
    pub guard_mask: Vec<bool>,
    pub bsnr_scale: SnrScale,
    pub bsnr_quantized: bool,
    /// Echo of the configuration that produced the dataset.
    pub config: serde_json::Value,
}

fn write_f32(path: &FsPath, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &FsPath, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::invalid(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

/// Writes `dataset` into `dir` (created if needed).
pub fn save_dataset(dir: &FsPath, dataset: &Dataset, config: &serde_json::Value) -> Result<DatasetManifest> {
    let first_csi = dataset
        .csi
        .first()
        .ok_or_else(|| Error::invalid("cannot save an empty dataset"))?;
    let (ns, ms) = (first_csi.n_streams(), first_csi.n_subcarriers());
    let first_b = &dataset.bsnr[0];
    let nb = first_b.len();
    for (c, b) in dataset.csi.iter().zip(&dataset.bsnr) {
        if c.n_streams() != ns
            || c.n_subcarriers() != ms
            || c.subcarrier_freqs_hz() != first_csi.subcarrier_freqs_hz()
            || c.guard_mask() != first_csi.guard_mask()
        {
            return Err(Error::invalid("CSI frames differ in shape or subcarrier grid"));
        }
        if b.len() != nb || b.scale() != first_b.scale() || b.quantized() != first_b.quantized() {
            return Err(Error::invalid("beam SNR vectors differ in length or units"));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let n = dataset.len();
    let mut label_list: Vec<usize> = dataset.labels.iter().flatten().copied().collect();
    label_list.sort_unstable();
    label_list.dedup();
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.to_string(),
        n_samples: n,
        n_streams: ns,
        n_subcarriers: ms,
        n_beams: nb,
        n_classes: dataset.n_classes,
        csi_shape: [n, ns, ms],
        bsnr_shape: [n, nb],
        dtype: "float32-le".into(),
        label_dtype: "int32-le".into(),
        label_list,
        n_labeled: dataset.n_labeled(),
        split: dataset.split,
        seed: dataset.seed,
        subcarrier_freqs_hz: first_csi.subcarrier_freqs_hz().to_vec(),
        guard_mask: first_csi.guard_mask().to_vec(),
        bsnr_scale: first_b.scale(),
        bsnr_quantized: first_b.quantized(),
        config: config.clone(),
    };

    write_f32(
        &dir.join("csi_real.bin"),
        dataset.csi.iter().flat_map(|c| c.values().iter().map(|v| v.re)),
    )?;
    write_f32(
        &dir.join("csi_imag.bin"),
        dataset.csi.iter().flat_map(|c| c.values().iter().map(|v| v.im)),
    )?;
    write_f32(
        &dir.join("bsnr.bin"),
        dataset.bsnr.iter().flat_map(|b| b.values().iter().copied()),
    )?;
    let labels: Vec<u8> = dataset
        .labels
        .iter()
        .flat_map(|l| l.map_or(-1, |v| v as i32).to_le_bytes())
        .collect();
    let lpath = dir.join("labels.bin");
    fs::write(&lpath, labels).map_err(|e| Error::io(&lpath, e))?;

    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&mpath, e))?;
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &FsPath) -> Result<DatasetManifest> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&mpath, e))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::invalid(format!(
            "{}: unsupported dataset format {:?}",
            mpath.display(),
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Reads a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &FsPath) -> Result<(Dataset, DatasetManifest)> {
    let m = load_manifest(dir)?;
    let n = m.n_samples;
    let per_frame = m.n_streams * m.n_subcarriers;
    let re = read_f32(&dir.join("csi_real.bin"), n * per_frame)?;
    let im = read_f32(&dir.join("csi_imag.bin"), n * per_frame)?;
    let bs = read_f32(&dir.join("bsnr.bin"), n * m.n_beams)?;
    let lpath = dir.join("labels.bin");
    let lbytes = fs::read(&lpath).map_err(|e| Error::io(&lpath, e))?;
    if lbytes.len() != n * 4 {
        return Err(Error::invalid(format!(
            "{} holds {} bytes, expected {}",
            lpath.display(),
            lbytes.len(),
            n * 4
        )));
    }

    let mut csi = Vec::with_capacity(n);
    let mut bsnr = Vec::with_capacity(n);
    for i in 0..n {
        let span = i * per_frame..(i + 1) * per_frame;
        let values = re[span.clone()]
            .iter()
            .zip(&im[span])
            .map(|(&r, &j)| Complex64::new(r, j))
            .collect();
        csi.push(CsiFrame::new(
            m.n_streams,
            values,
            m.subcarrier_freqs_hz.clone(),
            m.guard_mask.clone(),
        )?);
        bsnr.push(BeamSnrVector::new(
            bs[i * m.n_beams..(i + 1) * m.n_beams].to_vec(),
            m.bsnr_scale,
            m.bsnr_quantized,
        )?);
    }
    let labels = lbytes
        .chunks_exact(4)
        .map(|c| {
            let v = i32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            (v >= 0).then_some(v as usize)
        })
        .collect();
    let ds = Dataset::new(csi, bsnr, labels, m.n_classes, m.split, m.seed)?;
    Ok((ds, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::scene::{build_scenes, subcarrier_grid, synthesize_beam_patterns, SceneGeometry};

    fn setup(n_classes: usize) -> SimSetup {
        let (freqs, mask) = subcarrier_grid(5.21e9, 312.5e3, 32, 2).unwrap();
        SimSetup {
            scenes: build_scenes(&SceneGeometry::default(), n_classes, 1).unwrap(),
            patterns: synthesize_beam_patterns(8, 1).unwrap(),
            subcarrier_freqs_hz: freqs,
            guard_mask: mask,
            n_streams: 3,
            impairments: ImpairmentConfig::default(),
            session_length: 10,
        }
    }

    #[test]
    fn counts_and_labels() {
        let ds = generate_dataset(&setup(8), 100, 1.0, 5, Split::Train).unwrap();
        assert_eq!(ds.len(), 800);
        assert_eq!(ds.n_labeled(), 800);

        let ds = generate_dataset(&setup(8), 100, 0.1, 5, Split::Train).unwrap();
        for c in 0..8 {
            let labeled = ds.labels[c * 100..(c + 1) * 100].iter().flatten().count();
            assert_eq!(labeled, 10);
            assert!(ds.labels[c * 100..c * 100 + 10].iter().all(|l| *l == Some(c)));
        }
    }

    #[test]
    fn invalid_arguments() {
        let s = setup(2);
        assert!(generate_dataset(&s, 10, 0.0, 0, Split::Train).is_err());
        assert!(generate_dataset(&s, 10, 1.5, 0, Split::Train).is_err());
        assert!(generate_dataset(&s, 0, 1.0, 0, Split::Train).is_err());
    }

    #[test]
    fn guards_are_zero_and_bsnr_quantized() {
        let ds = generate_dataset(&setup(2), 3, 1.0, 9, Split::Test).unwrap();
        for (c, b) in ds.csi.iter().zip(&ds.bsnr) {
            for s in 0..c.n_streams() {
                for (v, g) in c.stream(s).iter().zip(c.guard_mask()) {
                    assert_eq!(*g, v.norm() == 0.0);
                }
            }
            assert!(b.quantized());
            assert!(b.values().iter().all(|v| (v * 4.0).fract() == 0.0 && *v >= 0.0));
        }
    }

    #[test]
    fn save_load_and_byte_identical_reruns() {
        let s = setup(3);
        let a = generate_dataset(&s, 4, 0.5, 77, Split::Train).unwrap();
        let b = generate_dataset(&s, 4, 0.5, 77, Split::Train).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let (da, db) = (tmp.path().join("a"), tmp.path().join("b"));
        let echo = serde_json::json!({"note": "test"});
        save_dataset(&da, &a, &echo).unwrap();
        save_dataset(&db, &b, &echo).unwrap();
        for f in ["manifest.json", "csi_real.bin", "csi_imag.bin", "bsnr.bin", "labels.bin"] {
            assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
        }
        let (loaded, manifest) = load_dataset(&da).unwrap();
        assert_eq!(manifest.csi_shape, [12, 3, 32]);
        assert_eq!(loaded.labels, a.labels);
        assert_eq!(loaded.bsnr, a.bsnr);
        for (x, y) in loaded.csi.iter().zip(&a.csi) {
            for (p, q) in x.values().iter().zip(y.values()) {
                assert_eq!(p.re, f64::from(q.re as f32));
                assert_eq!(p.im, f64::from(q.im as f32));
            }
        }
        let labels = fs::read(da.join("labels.bin")).unwrap();
        assert_eq!(i32::from_le_bytes(labels[4 * 3..4 * 4].try_into().unwrap()), -1);
    }

    #[test]
    fn different_seed_different_data() {
        let s = setup(2);
        let a = generate_dataset(&s, 2, 1.0, 1, Split::Train).unwrap();
        let b = generate_dataset(&s, 2, 1.0, 2, Split::Train).unwrap();
        assert_ne!(a.csi, b.csi);
    }

    #[test]
    fn missing_directory_reports_path() {
        let err = load_dataset(FsPath::new("/nonexistent/dataset")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dataset"));
    }
}
