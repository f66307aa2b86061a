use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CsiOnly,
    BsnrOnly,
    /// Beam SNR upsampled onto the subcarrier axis and stacked as an extra
    /// CSI channel.
    InputFusion,
    /// Fusion of the two final encoder outputs only (one pair).
    FeatureFusion,
    /// All pairs of selected CSI and beam-SNR layers.
    GranularityMatching,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::CsiOnly,
        Variant::BsnrOnly,
        Variant::InputFusion,
        Variant::FeatureFusion,
        Variant::GranularityMatching,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CsiOnly => "csi_only",
            Variant::BsnrOnly => "bsnr_only",
            Variant::InputFusion => "input_fusion",
            Variant::FeatureFusion => "feature_fusion",
            Variant::GranularityMatching => "granularity_matching",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant '{s}'")))
    }
}

/// Sensing task; fixes the number of classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pose,
    Occupancy,
    Localization,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Pose, Task::Occupancy, Task::Localization];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pose => "pose",
            Task::Occupancy => "occupancy",
            Task::Localization => "localization",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Task::Pose | Task::Occupancy => 8,
            Task::Localization => 16,
        }
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose" => Ok(Task::Pose),
            "occupancy" => Ok(Task::Occupancy),
            "localization" => Ok(Task::Localization),
            _ => Err(Error::invalid(format!("unknown task '{s}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSpec {
    /// Convolution + batchnorm + ReLU.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Non-overlapping max pooling.
    Pool { window: usize },
}

/// Network sizes. Layer indices in the tap sets are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// CSI channels: amplitude and phase per spatial stream.
    pub csi_channels: usize,
    /// Active subcarriers.
    pub csi_width: usize,
    /// Beam count.
    pub bsnr_width: usize,
    /// Channels of the first conv block.
    pub base_channels: usize,
    /// Channels of every later conv block.
    pub channels: usize,
    pub csi_taps: Vec<usize>,
    pub bsnr_taps: Vec<usize>,
    /// Width every tap is projected to before pairing.
    pub tap_width: usize,
    pub latent_dim: usize,
    pub head_layers: usize,
    pub head_hidden: usize,
    pub n_classes: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            csi_channels: 6,
            csi_width: 234,
            bsnr_width: 36,
            base_channels: 8,
            channels: 16,
            csi_taps: vec![1, 3, 5, 6],
            bsnr_taps: vec![1, 4, 5],
            tap_width: 64,
            latent_dim: 24,
            head_layers: 2,
            head_hidden: 64,
            n_classes: 8,
        }
    }
}

impl ModelDims {
    /// CSI encoder: two strided convolutions, a pooling layer and three
    /// width-preserving convolutions (234 subcarriers end as 16 x 28).
    pub fn csi_stages(&self) -> Vec<StageSpec> {
        let mut v = vec![
            conv(self.base_channels, 3, 2, 0),
            conv(self.channels, 3, 2, 0),
            StageSpec::Pool { window: 2 },
        ];
        v.extend([conv(self.channels, 3, 1, 1); 3]);
        v
    }

    /// Beam-SNR encoder: two valid convolutions and three width-preserving
    /// ones (36 beams end as 16 x 28).
    pub fn bsnr_stages(&self) -> Vec<StageSpec> {
        let mut v = vec![conv(self.base_channels, 5, 1, 0), conv(self.channels, 5, 1, 0)];
        v.extend([conv(self.channels, 3, 1, 1); 3]);
        v
    }

    pub fn with_classes(mut self, n: usize) -> Self {
        self.n_classes = n;
        self
    }

    /// Small sizes for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            csi_channels: 2,
            csi_width: 20,
            bsnr_width: 12,
            base_channels: 3,
            channels: 3,
            csi_taps: vec![1, 3, 5, 6],
            bsnr_taps: vec![1, 4, 5],
            tap_width: 4,
            latent_dim: 3,
            head_layers: 2,
            head_hidden: 4,
            n_classes: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("csi_channels", self.csi_channels),
            ("csi_width", self.csi_width),
            ("bsnr_width", self.bsnr_width),
            ("base_channels", self.base_channels),
            ("channels", self.channels),
            ("tap_width", self.tap_width),
            ("latent_dim", self.latent_dim),
            ("head_layers", self.head_layers),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.head_layers > 1 && self.head_hidden == 0 {
            return Err(Error::invalid("head_hidden must be positive"));
        }
        check_taps("csi_taps", &self.csi_taps, self.csi_stages().len())?;
        check_taps("bsnr_taps", &self.bsnr_taps, self.bsnr_stages().len())?;
        Ok(())
    }
}

fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> StageSpec {
    StageSpec::Conv {
        out_channels,
        kernel,
        stride,
        padding,
    }
}

pub(crate) fn check_taps(name: &str, taps: &[usize], layers: usize) -> Result<()> {
    if taps.is_empty() {
        return Err(Error::invalid(format!("{name} is empty")));
    }
    if taps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("{name} {taps:?} is not strictly increasing")));
    }
    if taps[0] == 0 || *taps.last().unwrap() > layers {
        return Err(Error::invalid(format!(
            "{name} {taps:?} must lie within [1, {layers}]"
        )));
    }
    Ok(())
}

/// Everything needed to rebuild a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub dims: ModelDims,
    /// Whether the model carries reconstruction decoders.
    pub decoders: bool,
}

impl ModelSpec {
    pub fn new(variant: Variant, dims: ModelDims) -> Self {
        Self {
            variant,
            dims,
            decoders: false,
        }
    }

    pub fn with_decoders(mut self, on: bool) -> Self {
        self.decoders = on;
        self
    }

    /// Taps used per branch for this variant.
    pub fn branch_taps(&self) -> Vec<Vec<usize>> {
        let d = &self.dims;
        let last_c = d.csi_stages().len();
        let last_h = d.bsnr_stages().len();
        match self.variant {
            Variant::CsiOnly | Variant::InputFusion => vec![vec![last_c]],
            Variant::BsnrOnly => vec![vec![last_h]],
            Variant::FeatureFusion => vec![vec![last_c], vec![last_h]],
            Variant::GranularityMatching => vec![d.csi_taps.clone(), d.bsnr_taps.clone()],
        }
    }

    pub fn pair_count(&self) -> usize {
        self.branch_taps().iter().map(Vec::len).product()
    }

    /// JSON stored in checkpoint manifests.
    pub fn architecture(&self) -> serde_json::Value {
        serde_json::json!({
            "variant": self.variant,
            "dims": self.dims,
            "decoders": self.decoders,
            "csi_taps": self.dims.csi_taps,
            "bsnr_taps": self.dims.bsnr_taps,
            "latent_dim": self.dims.latent_dim,
            "pair_count": self.pair_count(),
        })
    }

    pub fn from_architecture(v: &serde_json::Value) -> Result<Self> {
        let variant: Variant = serde_json::from_value(v["variant"].clone())
            .map_err(|e| Error::ArchitectureMismatch(format!("bad variant: {e}")))?;
        let dims: ModelDims = serde_json::from_value(v["dims"].clone())
            .map_err(|e| Error::ArchitectureMismatch(format!("bad dims: {e}")))?;
        let decoders = v["decoders"].as_bool().unwrap_or(false);
        Ok(Self {
            variant,
            dims,
            decoders,
        })
    }
}
