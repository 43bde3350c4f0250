//! Dual-branch video salient object detection.
//!
//! The model pairs a motion (teacher) encoder reading optical-flow images with
//! an appearance (student) encoder reading RGB frames. Motion features are
//! passed through a temporal modulator (channel attention followed by spatial
//! attention) and added into the student branch at every pyramid level; the
//! teacher's partial decoder produces a motion-guided mask that explicitly
//! teaches the student's partial decoder before the final prediction.
//!
//! Everything runs on a small f64 reverse-mode tape ([`nn`]) so that every
//! building block can be verified against scalar oracles and central finite
//! differences. Two scale profiles exist: `toy` (64x64, narrow widths, CPU
//! test scale) and `full` (352x352, ResNet50-like widths).
//!
//! See the crate `examples/` directory for one runnable program per
//! capability (dataset synthesis, staged training, prediction, evaluation,
//! ablation sweeps, gradient checking, visualization, benchmarking).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;
pub mod viz;
pub mod walkthrough;

pub use config::{AblationSpec, Mode, ModelConfig, Profile};
pub use error::{GtError, Result};
pub use model::{FeaturePyramid, GtNet, MapDomain, ModelOutput, SaliencyMap};
