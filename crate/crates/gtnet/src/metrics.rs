//! Saliency evaluation: MAE, F-beta and S-measure, plus dataset-level
//! aggregation in the comparison-table layout.
//!
//! The conventions (documented in every report header):
//! - F-beta sweeps the 255 uniform thresholds i/256 and reports the maximum
//!   by default (beta^2 = 0.3); mean-F and adaptive-F are available behind a
//!   flag.
//! - S-measure uses alpha = 0.5, population variances, the rounded
//!   ground-truth centroid for the quadrant split, and the degenerate rules
//!   S = 1 - mean(pred) for empty gt and S = mean(pred) for full gt.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::io::{load_gray_f64, load_mask};
use crate::error::{GtError, Result};

/// Threshold count of the F-beta sweep.
const SWEEP: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FProtocol {
    #[default]
    Max,
    Mean,
    Adaptive,
}

fn check_pair(pred: &Array2<f64>, gt: &Array2<bool>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(GtError::Input(format!(
            "prediction {:?} and ground truth {:?} disagree in shape",
            pred.dim(),
            gt.dim()
        )));
    }
    if pred.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(GtError::Domain("prediction values must lie in [0,1]".into()));
    }
    Ok(())
}

/// Mean absolute error between a probability map and a binary mask.
pub fn mae(pred: &Array2<f64>, gt: &Array2<bool>) -> Result<f64> {
    check_pair(pred, gt)?;
    let sum: f64 = pred
        .iter()
        .zip(gt.iter())
        .map(|(&p, &g)| (p - f64::from(g)).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Precision/recall combination with the chosen threshold protocol.
/// Empty ground truth or a sweep with no positive predictions scores 0.
pub fn f_beta(pred: &Array2<f64>, gt: &Array2<bool>, beta2: f64, protocol: FProtocol) -> Result<f64> {
    check_pair(pred, gt)?;
    let n_pos: usize = gt.iter().filter(|&&g| g).count();
    if n_pos == 0 {
        return Ok(0.0);
    }
    let f_at = |tp: usize, pred_pos: usize| -> f64 {
        if pred_pos == 0 {
            return 0.0;
        }
        let p = tp as f64 / pred_pos as f64;
        let r = tp as f64 / n_pos as f64;
        if beta2 * p + r == 0.0 {
            0.0
        } else {
            (1.0 + beta2) * p * r / (beta2 * p + r)
        }
    };

    if protocol == FProtocol::Adaptive {
        let thr = (2.0 * pred.sum() / pred.len() as f64).min(1.0);
        let mut tp = 0;
        let mut pred_pos = 0;
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            if p >= thr {
                pred_pos += 1;
                if g {
                    tp += 1;
                }
            }
        }
        return Ok(f_at(tp, pred_pos));
    }

    // Bucket the predictions once; `p >= i/256` is exactly `floor(256p) >= i`
    // because scaling by 256 is exact in binary floating point.
    let mut hist_pos = [0usize; 257];
    let mut hist_all = [0usize; 257];
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let b = ((p * 256.0).floor() as usize).min(256);
        hist_all[b] += 1;
        if g {
            hist_pos[b] += 1;
        }
    }
    let mut tp = 0usize;
    let mut pred_pos = 0usize;
    let mut scores = [0.0f64; SWEEP];
    for i in (1..=SWEEP).rev() {
        // buckets >= i; bucket 256 (p == 1.0) folds into the top threshold
        if i == SWEEP {
            tp += hist_pos[256] + hist_pos[255];
            pred_pos += hist_all[256] + hist_all[255];
        } else {
            tp += hist_pos[i];
            pred_pos += hist_all[i];
        }
        scores[i - 1] = f_at(tp, pred_pos);
    }
    Ok(match protocol {
        FProtocol::Max => scores.iter().copied().fold(0.0, f64::max),
        FProtocol::Mean => scores.iter().sum::<f64>() / SWEEP as f64,
        FProtocol::Adaptive => unreachable!(),
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for v in values {
        sum += v;
        n += 1;
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

/// `2*mean / (mean^2 + 1 + std)` over the pixels selected by `region`.
fn object_score(values: &Array2<f64>, region: &Array2<bool>) -> f64 {
    let (m, n) = mean_of(
        values
            .iter()
            .zip(region.iter())
            .filter_map(|(&v, &r)| r.then_some(v)),
    );
    if n == 0 {
        return 0.0;
    }
    let var = values
        .iter()
        .zip(region.iter())
        .filter_map(|(&v, &r)| r.then_some((v - m) * (v - m)))
        .sum::<f64>()
        / n as f64;
    2.0 * m / (m * m + 1.0 + var.sqrt())
}

/// SSIM-style similarity of one quadrant pair (population statistics).
fn quadrant_score(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x: f64 = pred.iter().sum::<f64>() / n;
    let y: f64 = gt.iter().sum::<f64>() / n;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        sx += (p - x) * (p - x);
        sy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    sx /= n;
    sy /= n;
    sxy /= n;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if beta == 0.0 {
        // beta = 0 forces alpha = 0: both maps are constant (possibly with
        // zero means); treat them as structurally identical.
        1.0
    } else {
        alpha / beta
    }
}

/// Structure measure `alpha*S_object + (1-alpha)*S_region`, clamped to [0,1].
pub fn s_measure(pred: &Array2<f64>, gt: &Array2<bool>, alpha: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let (h, w) = gt.dim();
    let n = (h * w) as f64;
    let area: usize = gt.iter().filter(|&&g| g).count();
    let mean_pred = pred.sum() / n;
    if area == 0 {
        return Ok(1.0 - mean_pred);
    }
    if area == h * w {
        return Ok(mean_pred);
    }
    let u = area as f64 / n;

    // Object term: foreground on pred, background on its complement.
    let inv_pred = pred.mapv(|p| 1.0 - p);
    let not_gt = gt.mapv(|g| !g);
    let s_object = u * object_score(pred, gt) + (1.0 - u) * object_score(&inv_pred, &not_gt);

    // Region term: 4-quadrant split about the rounded gt centroid.
    let mut cy = 0.0;
    let mut cx = 0.0;
    for ((y, x), &g) in gt.indexed_iter() {
        if g {
            cy += y as f64;
            cx += x as f64;
        }
    }
    let cy = ((cy / area as f64).round() as usize).min(h - 1);
    let cx = ((cx / area as f64).round() as usize).min(w - 1);

    let mut s_region = 0.0;
    let quads: [(usize, usize, usize, usize); 4] = [
        (0, cy + 1, 0, cx + 1),
        (0, cy + 1, cx + 1, w),
        (cy + 1, h, 0, cx + 1),
        (cy + 1, h, cx + 1, w),
    ];
    for (y0, y1, x0, x1) in quads {
        if y0 >= y1 || x0 >= x1 {
            continue;
        }
        let count = (y1 - y0) * (x1 - x0);
        let mut pv = Vec::with_capacity(count);
        let mut gv = Vec::with_capacity(count);
        for y in y0..y1 {
            for x in x0..x1 {
                pv.push(pred[(y, x)]);
                gv.push(f64::from(gt[(y, x)]));
            }
        }
        s_region += count as f64 / n * quadrant_score(&pv, &gv);
    }

    Ok((alpha * s_object + (1.0 - alpha) * s_region).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricValues {
    pub mae: f64,
    pub f_beta: f64,
    pub s_measure: f64,
}

/// All three measures under the default conventions.
pub fn metric_values(pred: &Array2<f64>, gt: &Array2<bool>, protocol: FProtocol) -> Result<MetricValues> {
    Ok(MetricValues {
        mae: mae(pred, gt)?,
        f_beta: f_beta(pred, gt, 0.3, protocol)?,
        s_measure: s_measure(pred, gt, 0.5)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub sequence: String,
    pub frames: usize,
    pub mae: f64,
    pub f_beta: f64,
    pub s_measure: f64,
}

/// Per-sequence rows plus the frame-weighted aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub conventions: String,
    pub sequences: Vec<SequenceMetrics>,
    pub aggregate: SequenceMetrics,
}

pub fn conventions_line(protocol: FProtocol) -> String {
    format!(
        "f_beta: {:?} over 255 uniform thresholds, beta^2=0.3; s_measure: alpha=0.5, \
         population variance, rounded-centroid quadrants, empty-gt S=1-mean(pred), \
         full-gt S=mean(pred)",
        protocol
    )
}

impl MetricReport {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "# {}", self.conventions)?;
        let mut csv = csv::Writer::from_writer(&mut w);
        csv.write_record(["dataset", "sequence", "frames", "mae", "f_beta", "s_measure"])?;
        for row in self.sequences.iter().chain(std::iter::once(&self.aggregate)) {
            csv.write_record([
                self.dataset.clone(),
                row.sequence.clone(),
                row.frames.to_string(),
                format!("{:.6}", row.mae),
                format!("{:.6}", row.f_beta),
                format!("{:.6}", row.s_measure),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Evaluate a directory of predicted maps against ground truth.
///
/// `pred_root/<sequence>/<index>.png` is matched against
/// `gt_root/<sequence>/gt/<index>.png` (dataset layout) or
/// `gt_root/<sequence>/<index>.png` (plain mirror). Every prediction needs a
/// ground-truth partner and every ground truth from t=2 on needs a
/// prediction; all mismatches are listed before aborting.
pub fn evaluate_dataset(
    pred_root: &Path,
    gt_root: &Path,
    dataset_id: &str,
    protocol: FProtocol,
) -> Result<MetricReport> {
    let mut seq_dirs: Vec<_> = fs::read_dir(pred_root)
        .map_err(|e| GtError::Ingestion {
            path: pred_root.to_path_buf(),
            reason: format!("cannot list prediction root: {e}"),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    seq_dirs.sort();
    if seq_dirs.is_empty() {
        return Err(GtError::Ingestion {
            path: pred_root.to_path_buf(),
            reason: "prediction root contains no sequence directories".into(),
        });
    }

    let mut mismatches = Vec::new();
    let mut work: Vec<(String, Vec<(std::path::PathBuf, std::path::PathBuf)>)> = Vec::new();
    for seq_dir in &seq_dirs {
        let seq = seq_dir.file_name().unwrap().to_string_lossy().to_string();
        let gt_dir_nested = gt_root.join(&seq).join("gt");
        let gt_dir = if gt_dir_nested.is_dir() { gt_dir_nested } else { gt_root.join(&seq) };

        let index_of = |p: &Path| -> Option<usize> {
            p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok())
        };
        let mut preds = BTreeMap::new();
        for entry in fs::read_dir(seq_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("png") {
                if let Some(i) = index_of(&path) {
                    preds.insert(i, path);
                }
            }
        }
        let mut gts = BTreeMap::new();
        if gt_dir.is_dir() {
            for entry in fs::read_dir(&gt_dir)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) == Some("png") {
                    if let Some(i) = index_of(&path) {
                        gts.insert(i, path);
                    }
                }
            }
        }

        let mut pairs = Vec::new();
        for (&i, pred_path) in &preds {
            match gts.get(&i) {
                Some(gt_path) => pairs.push((pred_path.clone(), gt_path.clone())),
                None => mismatches.push(format!("{seq}/{i:04}: prediction has no ground truth")),
            }
        }
        for &i in gts.keys() {
            if i >= 2 && !preds.contains_key(&i) {
                mismatches.push(format!("{seq}/{i:04}: ground truth has no prediction"));
            }
        }
        work.push((seq, pairs));
    }
    if !mismatches.is_empty() {
        return Err(GtError::Ingestion {
            path: pred_root.to_path_buf(),
            reason: format!("unmatched filenames:\n  {}", mismatches.join("\n  ")),
        });
    }

    let mut rows = Vec::new();
    let mut total = (0.0, 0.0, 0.0, 0usize);
    for (seq, pairs) in work {
        let mut acc = (0.0, 0.0, 0.0);
        let frames = pairs.len();
        for (pred_path, gt_path) in pairs {
            let pred = load_gray_f64(&pred_path)?;
            let gt = load_mask(&gt_path)?;
            let m = metric_values(&pred, &gt, protocol)?;
            acc.0 += m.mae;
            acc.1 += m.f_beta;
            acc.2 += m.s_measure;
        }
        total.0 += acc.0;
        total.1 += acc.1;
        total.2 += acc.2;
        total.3 += frames;
        let n = frames.max(1) as f64;
        rows.push(SequenceMetrics {
            sequence: seq,
            frames,
            mae: acc.0 / n,
            f_beta: acc.1 / n,
            s_measure: acc.2 / n,
        });
    }
    let n = total.3.max(1) as f64;
    Ok(MetricReport {
        dataset: dataset_id.to_string(),
        conventions: conventions_line(protocol),
        sequences: rows,
        aggregate: SequenceMetrics {
            sequence: "ALL".into(),
            frames: total.3,
            mae: total.0 / n,
            f_beta: total.1 / n,
            s_measure: total.2 / n,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binary(gt: &Array2<bool>) -> Array2<f64> {
        gt.mapv(f64::from)
    }

    /// Exhaustive per-threshold rescan, written directly from the definition.
    fn f_beta_oracle(pred: &Array2<f64>, gt: &Array2<bool>, beta2: f64) -> f64 {
        let n_pos = gt.iter().filter(|&&g| g).count();
        if n_pos == 0 {
            return 0.0;
        }
        let mut best = 0.0f64;
        for i in 1..=255usize {
            let t = i as f64 / 256.0;
            let mut tp = 0usize;
            let mut fp = 0usize;
            for (&p, &g) in pred.iter().zip(gt.iter()) {
                if p >= t {
                    if g {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            if tp + fp == 0 {
                continue;
            }
            let prec = tp as f64 / (tp + fp) as f64;
            let rec = tp as f64 / n_pos as f64;
            if beta2 * prec + rec > 0.0 {
                best = best.max((1.0 + beta2) * prec * rec / (beta2 * prec + rec));
            }
        }
        best
    }

    /// Scalar-loop S-measure written independently from the same conventions.
    fn s_measure_oracle(pred: &Array2<f64>, gt: &Array2<bool>, alpha: f64) -> f64 {
        let (h, w) = gt.dim();
        let n = (h * w) as f64;
        let area = gt.iter().filter(|&&g| g).count();
        let mut mean_pred = 0.0;
        for &p in pred.iter() {
            mean_pred += p;
        }
        mean_pred /= n;
        if area == 0 {
            return 1.0 - mean_pred;
        }
        if area == h * w {
            return mean_pred;
        }
        let u = area as f64 / n;

        let score = |m: f64, var: f64| 2.0 * m / (m * m + 1.0 + var.sqrt());
        let stats = |sel: &dyn Fn(usize, usize) -> bool, val: &dyn Fn(usize, usize) -> f64| {
            let mut m = 0.0;
            let mut cnt = 0usize;
            for y in 0..h {
                for x in 0..w {
                    if sel(y, x) {
                        m += val(y, x);
                        cnt += 1;
                    }
                }
            }
            m /= cnt as f64;
            let mut var = 0.0;
            for y in 0..h {
                for x in 0..w {
                    if sel(y, x) {
                        let d = val(y, x) - m;
                        var += d * d;
                    }
                }
            }
            (m, var / cnt as f64)
        };
        let (fm, fv) = stats(&|y, x| gt[(y, x)], &|y, x| pred[(y, x)]);
        let (bm, bv) = stats(&|y, x| !gt[(y, x)], &|y, x| 1.0 - pred[(y, x)]);
        let s_obj = u * score(fm, fv) + (1.0 - u) * score(bm, bv);

        let mut cy = 0.0;
        let mut cx = 0.0;
        for y in 0..h {
            for x in 0..w {
                if gt[(y, x)] {
                    cy += y as f64;
                    cx += x as f64;
                }
            }
        }
        let cy = ((cy / area as f64).round() as usize).min(h - 1);
        let cx = ((cx / area as f64).round() as usize).min(w - 1);

        let mut s_reg = 0.0;
        let quads: [(usize, usize, usize, usize); 4] = [
            (0, cy + 1, 0, cx + 1),
            (0, cy + 1, cx + 1, w),
            (cy + 1, h, 0, cx + 1),
            (cy + 1, h, cx + 1, w),
        ];
        for (y0, y1, x0, x1) in quads {
            if y0 >= y1 || x0 >= x1 {
                continue;
            }
            let cnt = (y1 - y0) * (x1 - x0);
            let mut px = 0.0;
            let mut gy = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    px += pred[(y, x)];
                    gy += f64::from(gt[(y, x)]);
                }
            }
            px /= cnt as f64;
            gy /= cnt as f64;
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxy = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let dp = pred[(y, x)] - px;
                    let dg = f64::from(gt[(y, x)]) - gy;
                    sx += dp * dp;
                    sy += dg * dg;
                    sxy += dp * dg;
                }
            }
            sx /= cnt as f64;
            sy /= cnt as f64;
            sxy /= cnt as f64;
            let a = 4.0 * px * gy * sxy;
            let b = (px * px + gy * gy) * (sx + sy);
            let q = if b == 0.0 { 1.0 } else { a / b };
            s_reg += cnt as f64 / n * q;
        }
        (alpha * s_obj + (1.0 - alpha) * s_reg).clamp(0.0, 1.0)
    }

    #[test]
    fn mae_anchors() {
        let gt = Array2::from_shape_fn((4, 4), |(y, _)| y < 2);
        assert_eq!(mae(&binary(&gt), &gt).unwrap(), 0.0);
        let inverted = gt.mapv(|g| f64::from(!g));
        assert_eq!(mae(&inverted, &gt).unwrap(), 1.0);

        // 2x2 (0.5, 0, 1, 1) vs (1, 0, 1, 0): direct per-definition sum 0.375.
        let pred = ndarray::arr2(&[[0.5, 0.0], [1.0, 1.0]]);
        let gt = ndarray::arr2(&[[true, false], [true, false]]);
        assert_eq!(mae(&pred, &gt).unwrap(), 0.375);
    }

    #[test]
    fn f_beta_anchors() {
        let gt = Array2::from_shape_fn((6, 6), |(y, x)| y >= 2 && x < 3);
        assert_eq!(f_beta(&binary(&gt), &gt, 0.3, FProtocol::Max).unwrap(), 1.0);
        let zeros = Array2::<f64>::zeros((6, 6));
        assert_eq!(f_beta(&zeros, &gt, 0.3, FProtocol::Max).unwrap(), 0.0);
        let empty = Array2::from_elem((6, 6), false);
        assert_eq!(f_beta(&binary(&gt), &empty, 0.3, FProtocol::Max).unwrap(), 0.0);
    }

    #[test]
    fn f_beta_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let h = rng.gen_range(1..=8);
            let w = rng.gen_range(1..=8);
            let gt = Array2::from_shape_fn((h, w), |_| rng.gen_bool(0.4));
            // Mix of grid-aligned and arbitrary prediction values.
            let pred = if rng.gen_bool(0.5) {
                Array2::from_shape_fn((h, w), |_| f64::from(rng.gen_range(0..=255u16)) / 255.0)
            } else {
                Array2::from_shape_fn((h, w), |_| rng.gen_range(0.0..=1.0))
            };
            let got = f_beta(&pred, &gt, 0.3, FProtocol::Max).unwrap();
            let want = f_beta_oracle(&pred, &gt, 0.3);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    /// Max-F depends only on the ranking of prediction values: any strictly
    /// increasing remap of the occurring 8-bit levels (zero stays zero, so
    /// the never-swept all-pixels binarization stays unswept) leaves it
    /// unchanged across the 255-threshold sweep.
    #[test]
    fn f_beta_invariant_under_monotone_level_rescale() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let gt = Array2::from_shape_fn((6, 6), |_| rng.gen_bool(0.5));
            if gt.iter().all(|&g| !g) {
                continue;
            }
            let levels = Array2::from_shape_fn((6, 6), |_| rng.gen_range(0..=255u8));
            let pred = levels.mapv(|l| f64::from(l) / 255.0);

            let mut distinct: Vec<u8> = levels.iter().copied().collect();
            distinct.sort_unstable();
            distinct.dedup();
            let needs_zero = distinct[0] == 0;
            let count = distinct.len() - usize::from(needs_zero);
            let mut pool: Vec<u8> = (1..=255u16).map(|v| v as u8).collect();
            pool.shuffle(&mut rng);
            let mut images: Vec<u8> = pool.into_iter().take(count).collect();
            images.sort_unstable();
            let mut remap = std::collections::BTreeMap::new();
            let mut it = images.into_iter();
            for &d in &distinct {
                if d == 0 {
                    remap.insert(0u8, 0u8);
                } else {
                    remap.insert(d, it.next().unwrap());
                }
            }
            let rescaled = levels.mapv(|l| f64::from(remap[&l]) / 255.0);

            let a = f_beta(&pred, &gt, 0.3, FProtocol::Max).unwrap();
            let b = f_beta(&rescaled, &gt, 0.3, FProtocol::Max).unwrap();
            assert!((a - b).abs() < 1e-12, "monotone rescale changed max-F: {a} vs {b}");
        }
    }

    #[test]
    fn s_measure_anchors() {
        let gt = Array2::from_shape_fn((8, 8), |(y, x)| (2..6).contains(&y) && (3..7).contains(&x));
        let s = s_measure(&binary(&gt), &gt, 0.5).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "perfect match scored {s}");

        let empty = Array2::from_elem((8, 8), false);
        let zeros = Array2::<f64>::zeros((8, 8));
        assert_eq!(s_measure(&zeros, &empty, 0.5).unwrap(), 1.0);
        let full = Array2::from_elem((8, 8), true);
        let p = Array2::from_elem((8, 8), 0.25);
        assert!((s_measure(&p, &full, 0.5).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn s_measure_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let h = rng.gen_range(2..=8);
            let w = rng.gen_range(2..=8);
            let gt = Array2::from_shape_fn((h, w), |_| rng.gen_bool(0.5));
            let pred = Array2::from_shape_fn((h, w), |_| rng.gen_range(0.0..=1.0));
            let got = s_measure(&pred, &gt, 0.5).unwrap();
            let want = s_measure_oracle(&pred, &gt, 0.5);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn ranges_and_complement(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = rng.gen_range(1..=7);
            let w = rng.gen_range(1..=7);
            let gt = Array2::from_shape_fn((h, w), |_| rng.gen_bool(0.5));
            let pred = Array2::from_shape_fn((h, w), |_| rng.gen_range(0.0..=1.0f64));

            let m = mae(&pred, &gt).unwrap();
            let f = f_beta(&pred, &gt, 0.3, FProtocol::Max).unwrap();
            let s = s_measure(&pred, &gt, 0.5).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!((0.0..=1.0).contains(&s));

            // mae(p, g) == mae(1-p, !g)
            let inv_pred = pred.mapv(|p| 1.0 - p);
            let inv_gt = gt.mapv(|g| !g);
            let m2 = mae(&inv_pred, &inv_gt).unwrap();
            prop_assert!((m - m2).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_and_domain_errors() {
        let gt = Array2::from_elem((4, 4), true);
        let pred = Array2::<f64>::zeros((4, 5));
        assert!(matches!(mae(&pred, &gt), Err(GtError::Input(_))));
        let bad = Array2::from_elem((4, 4), 1.5);
        assert!(matches!(mae(&bad, &gt), Err(GtError::Domain(_))));
    }

    #[test]
    fn dataset_evaluation_aggregates_by_frames() {
        use crate::data::io::{save_gray, save_gray_f64};
        let dir = tempfile::tempdir().unwrap();
        let pred_root = dir.path().join("pred");
        let gt_root = dir.path().join("data");

        // One sequence, two frames with exact per-frame MAE 0.2 and 0.4.
        let gt = Array2::from_shape_fn((8, 8), |(y, _)| y < 4);
        fs::create_dir_all(pred_root.join("s0")).unwrap();
        fs::create_dir_all(gt_root.join("s0").join("gt")).unwrap();
        for (t, err) in [(2usize, 0.2f64), (3, 0.4)] {
            let pred = gt.mapv(|g| if g { 1.0 - err } else { err });
            save_gray_f64(&pred_root.join("s0").join(format!("{t:04}.png")), &pred).unwrap();
            save_gray(&gt_root.join("s0").join("gt").join(format!("{t:04}.png")), &gt).unwrap();
        }
        let report = evaluate_dataset(&pred_root, &gt_root, "synthetic", FProtocol::Max).unwrap();
        assert_eq!(report.aggregate.frames, 2);
        assert!((report.aggregate.mae - 0.3).abs() < 2.0 / 255.0, "got {}", report.aggregate.mae);

        // A perfect frame reports (0, 1, 1).
        let dir2 = tempfile::tempdir().unwrap();
        let (p2, g2) = (dir2.path().join("pred"), dir2.path().join("data"));
        fs::create_dir_all(p2.join("s0")).unwrap();
        fs::create_dir_all(g2.join("s0").join("gt")).unwrap();
        save_gray_f64(&p2.join("s0").join("0002.png"), &gt.mapv(f64::from)).unwrap();
        save_gray(&g2.join("s0").join("gt").join("0002.png"), &gt).unwrap();
        let report = evaluate_dataset(&p2, &g2, "one", FProtocol::Max).unwrap();
        assert_eq!(report.aggregate.mae, 0.0);
        assert_eq!(report.aggregate.f_beta, 1.0);
        assert!((report.aggregate.s_measure - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_run_matches_per_frame_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let spec = crate::data::SynthSpec {
            num_sequences: 1,
            frames_per_sequence: 11,
            ..crate::data::SynthSpec::default()
        };
        crate::data::synth_generate(&spec, dir.path().join("data").as_path()).unwrap();

        // Fabricate predictions: the gt blurred towards 0.5 a little.
        let pred_root = dir.path().join("pred");
        fs::create_dir_all(pred_root.join("seq_000")).unwrap();
        let mut expect = (0.0, 0.0, 0.0);
        let mut frames = 0;
        for t in 2..=11 {
            let gt = load_mask(
                &dir.path().join("data/seq_000/gt").join(format!("{t:04}.png")),
            )
            .unwrap();
            let pred = gt.mapv(|g| if g { 0.9 } else { 0.1 });
            crate::data::io::save_gray_f64(
                &pred_root.join("seq_000").join(format!("{t:04}.png")),
                &pred,
            )
            .unwrap();
            // Recompute through the quantized on-disk representation.
            let pred_q = load_gray_f64(&pred_root.join("seq_000").join(format!("{t:04}.png"))).unwrap();
            let m = metric_values(&pred_q, &gt, FProtocol::Max).unwrap();
            expect.0 += m.mae;
            expect.1 += m.f_beta;
            expect.2 += m.s_measure;
            frames += 1;
        }
        let report =
            evaluate_dataset(&pred_root, &dir.path().join("data"), "synthetic", FProtocol::Max)
                .unwrap();
        let n = frames as f64;
        assert!((report.aggregate.mae - expect.0 / n).abs() < 1e-12);
        assert!((report.aggregate.f_beta - expect.1 / n).abs() < 1e-12);
        assert!((report.aggregate.s_measure - expect.2 / n).abs() < 1e-12);
    }

    #[test]
    fn unmatched_files_listed_and_aborted() {
        use crate::data::io::{save_gray, save_gray_f64};
        let dir = tempfile::tempdir().unwrap();
        let pred_root = dir.path().join("pred");
        let gt_root = dir.path().join("data");
        let gt = Array2::from_elem((4, 4), true);
        fs::create_dir_all(pred_root.join("s0")).unwrap();
        fs::create_dir_all(gt_root.join("s0").join("gt")).unwrap();
        save_gray_f64(&pred_root.join("s0").join("0002.png"), &gt.mapv(f64::from)).unwrap();
        save_gray(&gt_root.join("s0").join("gt").join("0002.png"), &gt).unwrap();
        save_gray(&gt_root.join("s0").join("gt").join("0003.png"), &gt).unwrap();
        match evaluate_dataset(&pred_root, &gt_root, "x", FProtocol::Max) {
            Err(GtError::Ingestion { reason, .. }) => {
                assert!(reason.contains("s0/0003"), "{reason}");
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }
}
