//! Dataset layout, ingestion and the synthetic generator.
//!
//! A dataset root holds one directory per sequence:
//!
//! ```text
//! root/<sequence>/frames/0001.png ... 000T.png
//! root/<sequence>/gt/0001.png    ... 000T.png
//! root/<sequence>/flow/0002.png  ... 000T.png   (flow starts at 0002)
//! ```
//!
//! The first frame of every sequence is discarded because it has no flow, so
//! a T-frame sequence yields exactly T-1 samples with t = 2..=T.

pub mod flow;
pub mod io;
pub mod synth;

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{GtError, Result};

pub use synth::{render_dataset, synth_generate, SynthManifest, SynthSpec};

/// One time step of one sequence. `frame` and `flow` are 3-channel [0,1]
/// arrays at the same resolution; `gt` is the binary mask of frame `t`.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub frame: Array3<f64>,
    pub flow: Array3<f64>,
    pub gt: Array2<bool>,
    pub t: usize,
    pub sequence_id: String,
}

fn list_indexed_pngs(dir: &Path) -> Result<Vec<usize>> {
    let mut indices = Vec::new();
    if !dir.is_dir() {
        return Err(GtError::Ingestion {
            path: dir.to_path_buf(),
            reason: "missing directory".into(),
        });
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let idx: usize = stem.parse().map_err(|_| GtError::Ingestion {
            path: path.clone(),
            reason: "file name is not a zero-padded frame index".into(),
        })?;
        indices.push(idx);
    }
    indices.sort_unstable();
    Ok(indices)
}

/// Load one sequence directory into T-1 samples (t = 2..=T).
pub fn load_sequence(dir: &Path) -> Result<Vec<VideoSample>> {
    let sequence_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "sequence".to_string());

    let frame_indices = list_indexed_pngs(&dir.join("frames"))?;
    let t_max = *frame_indices.last().unwrap_or(&0);
    if frame_indices.len() < 2 {
        return Err(GtError::Ingestion {
            path: dir.to_path_buf(),
            reason: format!(
                "empty sequence: {} frame(s); at least 2 are required",
                frame_indices.len()
            ),
        });
    }
    if frame_indices != (1..=t_max).collect::<Vec<_>>() {
        return Err(GtError::Ingestion {
            path: dir.join("frames"),
            reason: "frame indices must be contiguous starting at 0001".into(),
        });
    }

    let mut samples = Vec::with_capacity(t_max - 1);
    for t in 2..=t_max {
        let frame_path = dir.join("frames").join(format!("{t:04}.png"));
        let gt_path = dir.join("gt").join(format!("{t:04}.png"));
        let flow_path = dir.join("flow").join(format!("{t:04}.png"));
        if !flow_path.is_file() {
            return Err(GtError::Ingestion {
                path: flow_path,
                reason: format!("missing optical flow image for t={t}"),
            });
        }
        if !gt_path.is_file() {
            return Err(GtError::Ingestion {
                path: gt_path,
                reason: format!("missing ground-truth mask for t={t}"),
            });
        }
        let frame = io::load_rgb(&frame_path)?;
        let flow = io::load_rgb(&flow_path)?;
        let gt = io::load_mask(&gt_path)?;
        let (h, w) = (frame.dim().1, frame.dim().2);
        if flow.dim() != (3, h, w) || gt.dim() != (h, w) {
            return Err(GtError::Ingestion {
                path: dir.to_path_buf(),
                reason: format!("frame/flow/gt resolutions disagree at t={t}"),
            });
        }
        samples.push(VideoSample { frame, flow, gt, t, sequence_id: sequence_id.clone() });
    }
    Ok(samples)
}

/// Load every sequence under a dataset root, sorted by sequence id.
pub fn load_dataset(root: &Path) -> Result<Vec<(String, Vec<VideoSample>)>> {
    if !root.is_dir() {
        return Err(GtError::Ingestion {
            path: root.to_path_buf(),
            reason: "dataset root is not a directory".into(),
        });
    }
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(GtError::Ingestion {
            path: root.to_path_buf(),
            reason: "dataset root contains no sequence directories".into(),
        });
    }
    let mut out = Vec::new();
    for dir in dirs {
        let samples = load_sequence(&dir)?;
        let id = samples[0].sequence_id.clone();
        out.push((id, samples));
    }
    Ok(out)
}

/// Flattened sample count: sum of (T_s - 1) over sequences.
pub fn total_samples(dataset: &[(String, Vec<VideoSample>)]) -> usize {
    dataset.iter().map(|(_, s)| s.len()).sum()
}
