//! Model components: encoders, temporal modulator, partial decoders and the
//! full dual-branch assembly.

pub mod backbone;
pub mod decoder;
pub mod modulator;
pub mod net;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{GtError, Result};

pub use backbone::Encoder;
pub use decoder::{NaiveAggregator, PartialDecoder, RfBlock};
pub use modulator::TemporalModulator;
pub use net::{explicit_teach, ForwardVars, GtNet};

/// Which encoder a pyramid came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Appearance,
    Motion,
}

/// Ordered five-level feature stack from one branch.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Array3<f64>>,
    pub branch: Branch,
}

impl FeaturePyramid {
    /// Check level count, channel widths and the stride ladder against a config.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.levels.len() != 5 {
            return Err(GtError::Config(format!(
                "pyramid must have exactly 5 levels, got {}",
                self.levels.len()
            )));
        }
        for (i, level) in self.levels.iter().enumerate() {
            let expect = config.pyramid_shapes()[i];
            if level.dim() != expect {
                return Err(GtError::Config(format!(
                    "pyramid level {} has shape {:?}, expected {:?}",
                    i + 1,
                    level.dim(),
                    expect
                )));
            }
        }
        Ok(())
    }
}

/// Value domain of a saliency map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapDomain {
    Probability,
    Logit,
}

/// Single-channel map aligned to the input resolution.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub data: Array2<f64>,
    pub domain: MapDomain,
}

impl SaliencyMap {
    pub fn probability(data: Array2<f64>) -> Self {
        SaliencyMap { data, domain: MapDomain::Probability }
    }

    /// Quantize a probability map to 8-bit grayscale.
    pub fn to_gray8(&self) -> Result<Vec<u8>> {
        if self.domain != MapDomain::Probability {
            return Err(GtError::Domain(
                "only probability maps can be written as grayscale".into(),
            ));
        }
        Ok(self
            .data
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect())
    }
}

/// Final maps of one forward pass. Probabilities are sigmoid-activated at the
/// input resolution; the raw logits are retained for losses.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub z_a: Option<SaliencyMap>,
    pub z_m: Option<SaliencyMap>,
    pub z_a_logits: Option<Array2<f64>>,
    pub z_m_logits: Option<Array2<f64>>,
}

impl ModelOutput {
    /// The map this variant reports as its prediction (`Z^M` in mode M,
    /// otherwise `Z^A`).
    pub fn prediction(&self) -> &SaliencyMap {
        self.z_a.as_ref().or(self.z_m.as_ref()).expect("forward produced no map")
    }
}
