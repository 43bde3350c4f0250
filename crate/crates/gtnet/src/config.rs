//! Model and ablation configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GtError, Result};

/// Encoder strides of the five pyramid levels, fixed for every profile.
pub const STRIDES: [usize; 5] = [2, 4, 8, 16, 32];

/// Scale profile. `Toy` is the CPU test scale, `Full` mirrors ResNet50 stage
/// widths (random init; pretrained weights are out of scope).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Toy,
    Full,
}

impl Profile {
    /// Channel width shared by the three refined decoder levels.
    pub fn decoder_width(self) -> usize {
        match self {
            Profile::Toy => 16,
            Profile::Full => 32,
        }
    }
}

/// Which branches take part in the forward pass. `M` and `A` are the
/// single-branch variants of the comparison table; `MA` is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    M,
    A,
    #[serde(rename = "MA")]
    Ma,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::M => write!(f, "M"),
            Mode::A => write!(f, "A"),
            Mode::Ma => write!(f, "MA"),
        }
    }
}

/// Spatial-attention pooled descriptor. The default stacks channel-wise max
/// and mean into a two-channel map; `MaxOnly` keeps just the max channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SaPool {
    #[default]
    MaxMean,
    MaxOnly,
}

impl SaPool {
    pub fn channels(self) -> usize {
        match self {
            SaPool::MaxMean => 2,
            SaPool::MaxOnly => 1,
        }
    }
}

/// Ablation switchboard. Rows #1..#6 of the ablation tables and the +M/+A/+MA
/// comparison variants are all expressible as flag combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSpec {
    pub dual_branch: bool,
    /// Channel attention inside the temporal modulator.
    pub ca: bool,
    /// Spatial attention inside the temporal modulator.
    pub sa: bool,
    /// Teacher partial decoder; when off, the motion mask comes from a 1x1
    /// head on the refined level-5 feature.
    pub t_pd: bool,
    /// Student partial decoder; when off, a naive upsample-add-conv
    /// aggregator replaces it.
    pub s_pd: bool,
    /// Motion-guided mask propagation into the student features.
    pub teaching: bool,
    pub mode: Mode,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            dual_branch: true,
            ca: true,
            sa: true,
            t_pd: true,
            s_pd: true,
            teaching: true,
            mode: Mode::Ma,
        }
    }
}

impl AblationSpec {
    /// Table row by id: `1`..`6`, `M`, `A`, `MA`/`OUR`.
    pub fn variant(id: &str) -> Result<Self> {
        let full = AblationSpec::default();
        let spec = match id {
            "1" => AblationSpec { ca: false, sa: false, ..full },
            "2" => AblationSpec { ca: true, sa: false, ..full },
            "3" => AblationSpec { ca: false, sa: true, ..full },
            "4" => AblationSpec { t_pd: false, ..full },
            "5" => AblationSpec { s_pd: false, ..full },
            "6" => AblationSpec { teaching: false, ..full },
            "M" | "m" => AblationSpec { mode: Mode::M, dual_branch: false, ..full },
            "A" | "a" => AblationSpec { mode: Mode::A, dual_branch: false, ..full },
            "MA" | "ma" | "OUR" | "our" => full,
            other => {
                return Err(GtError::Config(format!("unknown ablation variant id '{other}'")))
            }
        };
        Ok(spec)
    }

    /// Flags actually in effect for the forward graph: single-branch modes
    /// make the cross-branch machinery inert rather than erroring.
    pub fn effective(&self) -> AblationSpec {
        let mut e = *self;
        match self.mode {
            Mode::A => {
                e.dual_branch = false;
                e.ca = false;
                e.sa = false;
                e.t_pd = false;
                e.teaching = false;
            }
            Mode::M => {
                e.dual_branch = false;
                e.ca = false;
                e.sa = false;
                e.s_pd = false;
                e.teaching = false;
            }
            Mode::Ma => {}
        }
        e
    }

    /// Whether the effective graph fuses motion into the student encoder.
    pub fn fuses(&self) -> bool {
        self.mode == Mode::Ma && self.dual_branch
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Ma && !self.dual_branch {
            return Err(GtError::Config(
                "mode MA requires dual_branch = true".into(),
            ));
        }
        Ok(())
    }
}

/// Model configuration: scale profile, per-level widths, attention
/// hyperparameters, ablation flags and the parameter-init seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub profile: Profile,
    /// Square input resolution; must be divisible by 32.
    pub input_size: usize,
    /// Channels of the five pyramid levels.
    pub widths: [usize; 5],
    /// Fixed to (2, 4, 8, 16, 32); kept in the document for self-description.
    pub strides: [usize; 5],
    /// Squeeze ratio of the channel-attention FC pair.
    pub ca_reduction: usize,
    #[serde(default)]
    pub sa_pool: SaPool,
    #[serde(default)]
    pub ablation: AblationSpec,
    pub seed: u64,
}

impl ModelConfig {
    /// 64x64 inputs, narrow widths; the scale every test runs at.
    pub fn toy() -> Self {
        ModelConfig {
            profile: Profile::Toy,
            input_size: 64,
            widths: [8, 16, 32, 64, 128],
            strides: STRIDES,
            ca_reduction: 4,
            sa_pool: SaPool::default(),
            ablation: AblationSpec::default(),
            seed: 0,
        }
    }

    /// 352x352 inputs with ResNet50 stage widths.
    pub fn full() -> Self {
        ModelConfig {
            profile: Profile::Full,
            input_size: 352,
            widths: [64, 256, 512, 1024, 2048],
            strides: STRIDES,
            ca_reduction: 16,
            sa_pool: SaPool::default(),
            ablation: AblationSpec::default(),
            seed: 0,
        }
    }

    pub fn decoder_width(&self) -> usize {
        self.profile.decoder_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides != STRIDES {
            return Err(GtError::Config(format!(
                "strides fixed to {STRIDES:?}, got {:?}",
                self.strides
            )));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(GtError::Config(format!(
                "input_size must be a positive multiple of 32, got {}",
                self.input_size
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(GtError::Config(format!(
                "widths must be strictly positive, got {:?}",
                self.widths
            )));
        }
        if self.ca_reduction == 0 {
            return Err(GtError::Config("ca_reduction must be positive".into()));
        }
        for &w in &self.widths {
            if w % self.ca_reduction != 0 {
                return Err(GtError::Config(format!(
                    "ca_reduction {} must divide every width, but {} is not divisible",
                    self.ca_reduction, w
                )));
            }
        }
        self.ablation.validate()
    }

    /// Spatial size of pyramid level `k` (1-based).
    pub fn level_size(&self, k: usize) -> usize {
        assert!((1..=5).contains(&k), "pyramid level must be in 1..=5");
        self.input_size / STRIDES[k - 1]
    }

    /// Expected `(channels, height, width)` of every pyramid level, a pure
    /// function of (input_size, widths, strides).
    pub fn pyramid_shapes(&self) -> [(usize, usize, usize); 5] {
        let mut out = [(0, 0, 0); 5];
        for k in 1..=5 {
            let s = self.level_size(k);
            out[k - 1] = (self.widths[k - 1], s, s);
        }
        out
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Stable hash of the serialized config; checkpoints embed it and loading
    /// verifies it.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            write!(hex, "{byte:02x}").unwrap();
        }
        hex
    }
}
