//! Mask selection at inference and the evaluation metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::head::cosine_sim;
use crate::model::Model;
use crate::pack::{FeaturePack, MaskBitmap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub chosen_index: Option<usize>,
    /// Top similarity; -1 when no candidate survived.
    pub similarity: f64,
    pub visible_pred: bool,
    /// `(candidate index, similarity)`, best first.
    pub ranked: Vec<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Sorts descending by similarity; equal similarities keep the lower index
/// first.
pub fn rank(indices: &[usize], sims: &[f64]) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = indices.iter().copied().zip(sims.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Applies the visibility threshold to a ranking.
pub fn decide(ranked: Vec<(usize, f64)>, threshold: f64) -> MatchResult {
    match ranked.first().copied() {
        None => MatchResult {
            chosen_index: None,
            similarity: -1.0,
            visible_pred: false,
            ranked,
            diagnostic: Some("no non-empty candidates".into()),
        },
        Some((index, sim)) => {
            let visible = sim >= threshold;
            MatchResult {
                chosen_index: visible.then_some(index),
                similarity: sim,
                visible_pred: visible,
                ranked,
                diagnostic: None,
            }
        }
    }
}

/// Ranks candidates by cosine similarity of their latent embeddings to the
/// source embedding.
pub fn match_embeddings(
    indices: &[usize],
    candidates: &[Vec<f64>],
    source: &[f64],
    threshold: f64,
) -> MatchResult {
    let sims: Vec<f64> = candidates.iter().map(|c| cosine_sim(c, source)).collect();
    decide(rank(indices, &sims), threshold)
}

/// Full forward pass and selection for one pack.
pub fn match_pack(model: &Model, pack: &FeaturePack, threshold: f64) -> Result<MatchResult> {
    let scores = model.score(pack)?;
    Ok(decide(rank(&scores.kept, &scores.sims), threshold))
}

fn same_grid(a: &MaskBitmap, b: &MaskBitmap) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Parameter(format!(
            "masks on different grids: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Intersection over union; two empty masks score 1.
pub fn iou(a: &MaskBitmap, b: &MaskBitmap) -> Result<f64> {
    same_grid(a, b)?;
    let (ga, gb) = (a.decode()?, b.decode()?);
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in ga.iter().zip(&gb) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Distance between pixel centers of opposite corners.
pub fn grid_diagonal(width: usize, height: usize) -> f64 {
    let w = width.saturating_sub(1) as f64;
    let h = height.saturating_sub(1) as f64;
    (w * w + h * h).sqrt()
}

/// Centroid distance over the grid diagonal, or `None` when either mask is
/// empty.
pub fn location_error(pred: &MaskBitmap, gt: &MaskBitmap) -> Result<Option<f64>> {
    same_grid(pred, gt)?;
    if pred.is_empty() || gt.is_empty() {
        return Ok(None);
    }
    let (px, py) = crate::mining::mask_centroid(pred)?;
    let (gx, gy) = crate::mining::mask_centroid(gt)?;
    let diag = grid_diagonal(pred.width(), pred.height());
    if diag == 0.0 {
        return Ok(Some(0.0));
    }
    Ok(Some(((px - gx).powi(2) + (py - gy).powi(2)).sqrt() / diag))
}

/// Foreground pixels with a background 4-neighbour or on the image edge.
pub fn boundary_pixels(mask: &MaskBitmap) -> Result<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let grid = mask.decode()?;
    let fg = |y: usize, x: usize| grid[y * w + x];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !fg(y, x) {
                continue;
            }
            let edge = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            if edge || !fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1) {
                out.push((y, x));
            }
        }
    }
    Ok(out)
}

fn matched_fraction(from: &[(usize, usize)], to: &[(usize, usize)], radius: f64) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let r2 = radius * radius;
    let hits = from
        .iter()
        .filter(|&&(y, x)| {
            to.iter().any(|&(v, u)| {
                let dy = y as f64 - v as f64;
                let dx = x as f64 - u as f64;
                dy * dy + dx * dx <= r2
            })
        })
        .count();
    hits as f64 / from.len() as f64
}

/// Boundary F-measure with match radius `tol_frac * diagonal` pixels.
pub fn contour_accuracy(pred: &MaskBitmap, gt: &MaskBitmap, tol_frac: f64) -> Result<f64> {
    same_grid(pred, gt)?;
    let bp = boundary_pixels(pred)?;
    let bg = boundary_pixels(gt)?;
    if bp.is_empty() && bg.is_empty() {
        return Ok(1.0);
    }
    if bp.is_empty() || bg.is_empty() {
        return Ok(0.0);
    }
    let radius = tol_frac * grid_diagonal(pred.width(), pred.height());
    let precision = matched_fraction(&bp, &bg, radius);
    let recall = matched_fraction(&bg, &bp, radius);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: String,
    pub visible_gt: bool,
    pub visible_pred: bool,
    pub gt_index: Option<usize>,
    pub chosen_index: Option<usize>,
    /// Top-ranked candidate regardless of the threshold.
    pub top_index: Option<usize>,
    pub similarity: f64,
    pub iou: f64,
    pub loc_error: Option<f64>,
    pub contour: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    pub errors: usize,
    /// Mean IoU over evaluated samples.
    pub iou: f64,
    #[serde(rename = "vis_acc")]
    pub vis_acc: f64,
    /// Mean over true-positive samples; `None` when there are none.
    pub loc_error: Option<f64>,
    pub contour: Option<f64>,
    /// Samples without a location error (not a true positive).
    pub loc_excluded: usize,
    /// Fraction of visible-gt samples whose top-ranked candidate is the gt.
    pub top1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub vis_acc: f64,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub sample: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub contour_tolerance: f64,
    pub aggregates: Aggregates,
    pub records: Vec<SampleRecord>,
    pub errors: Vec<SampleError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<crate::ablation::AblationReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores one sample given its match.
pub fn score_sample(
    name: String,
    pack: &FeaturePack,
    result: &MatchResult,
    contour_tol: f64,
) -> Result<SampleRecord> {
    let w = pack.dest_features.width();
    let h = pack.dest_features.height();
    let empty = MaskBitmap::empty(w, h);
    let gt_mask = match (pack.visible, &pack.gt_mask) {
        (true, Some(m)) => m,
        (true, None) => {
            return Err(Error::Validation("visible pack carries no ground-truth mask".into()))
        }
        (false, _) => &empty,
    };
    let pred_mask = match result.chosen_index {
        Some(i) => &pack.candidates[i],
        None => &empty,
    };
    let true_positive = pack.visible && result.visible_pred;
    let (loc_error, contour) = if true_positive {
        (
            location_error(pred_mask, gt_mask)?,
            Some(contour_accuracy(pred_mask, gt_mask, contour_tol)?),
        )
    } else {
        (None, None)
    };
    Ok(SampleRecord {
        sample: name,
        visible_gt: pack.visible,
        visible_pred: result.visible_pred,
        gt_index: pack.gt_index,
        chosen_index: result.chosen_index,
        top_index: result.ranked.first().map(|r| r.0),
        similarity: result.similarity,
        iou: iou(pred_mask, gt_mask)?,
        loc_error,
        contour,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Means over the records, in record order.
pub fn aggregate(records: &[SampleRecord], errors: usize) -> Aggregates {
    let visible: Vec<&SampleRecord> = records.iter().filter(|r| r.visible_gt).collect();
    Aggregates {
        samples: records.len(),
        errors,
        iou: mean(records.iter().map(|r| r.iou)).unwrap_or(0.0),
        vis_acc: mean(records.iter().map(|r| (r.visible_gt == r.visible_pred) as u8 as f64))
            .unwrap_or(0.0),
        loc_error: mean(records.iter().filter_map(|r| r.loc_error)),
        contour: mean(records.iter().filter_map(|r| r.contour)),
        loc_excluded: records.iter().filter(|r| r.loc_error.is_none()).count(),
        top1: mean(
            visible
                .iter()
                .map(|r| (r.top_index.is_some() && r.top_index == r.gt_index) as u8 as f64),
        ),
    }
}

/// Per-sample matches for a whole dataset, in dataset order. Samples are
/// processed in parallel.
pub fn match_dataset(
    model: &Model,
    data: &dyn Dataset,
) -> Vec<(String, Result<(FeaturePack, Vec<(usize, f64)>)>)> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let out = data.load(i).and_then(|pack| {
                let scores = model.score(&pack)?;
                let ranked = rank(&scores.kept, &scores.sims);
                Ok((pack, ranked))
            });
            (data.name(i), out)
        })
        .collect()
}

/// Builds a report from rankings at `threshold`.
pub fn report_from_rankings(
    ranked: &[(String, Result<(FeaturePack, Vec<(usize, f64)>)>)],
    threshold: f64,
    contour_tol: f64,
) -> EvalReport {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (name, item) in ranked {
        let scored = item.as_ref().map_err(|e| e.to_string()).and_then(|(pack, r)| {
            let result = decide(r.clone(), threshold);
            score_sample(name.clone(), pack, &result, contour_tol).map_err(|e| e.to_string())
        });
        match scored {
            Ok(rec) => records.push(rec),
            Err(error) => {
                log::warn!("{name}: {error}");
                errors.push(SampleError {
                    sample: name.clone(),
                    error,
                });
            }
        }
    }
    EvalReport {
        threshold,
        contour_tolerance: contour_tol,
        aggregates: aggregate(&records, errors.len()),
        records,
        errors,
        sweep: None,
        ablation: None,
    }
}

pub fn evaluate(model: &Model, data: &dyn Dataset, threshold: f64, contour_tol: f64) -> EvalReport {
    report_from_rankings(&match_dataset(model, data), threshold, contour_tol)
}

/// Thresholds `-1.0, -0.95, ..., 1.0`.
pub fn sweep_grid() -> Vec<f64> {
    (0..=40).map(|i| -1.0 + i as f64 * 0.05).collect()
}

/// Vis.A and IoU at each threshold of `grid`.
pub fn threshold_sweep(
    ranked: &[(String, Result<(FeaturePack, Vec<(usize, f64)>)>)],
    grid: &[f64],
    contour_tol: f64,
) -> Vec<SweepPoint> {
    grid.iter()
        .map(|&t| {
            let agg = report_from_rankings(ranked, t, contour_tol).aggregates;
            SweepPoint {
                threshold: t,
                vis_acc: agg.vis_acc,
                iou: agg.iou,
            }
        })
        .collect()
}

/// One-line block sparkline of `values`.
pub fn sparkline(values: &[f64]) -> String {
    const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return String::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                ' '
            } else if hi == lo {
                BARS[3]
            } else {
                let k = ((v - lo) / (hi - lo) * 7.0).round() as usize;
                BARS[k.min(7)]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> MaskBitmap {
        MaskBitmap::from_fn(w, h, |y, x| x >= x0 && x <= x1 && y >= y0 && y <= y1)
    }

    #[test]
    fn selection_rules() {
        let r = decide(rank(&[0], &[0.9]), 0.5);
        assert_eq!(r.chosen_index, Some(0));
        assert!(r.visible_pred);
        let r = decide(rank(&[0, 1], &[0.3, 0.1]), 0.5);
        assert!(!r.visible_pred);
        assert_eq!(r.chosen_index, None);
        let r = decide(rank(&[0, 1, 2], &[0.7, 0.7, 0.2]), 0.5);
        assert_eq!(r.chosen_index, Some(0));
        let r = decide(rank(&[4, 2, 7], &[0.1, 0.8, 0.8]), 0.5);
        assert_eq!(r.ranked, vec![(2, 0.8), (7, 0.8), (4, 0.1)]);
        let r = decide(Vec::new(), 0.5);
        assert!(!r.visible_pred && r.diagnostic.is_some());
    }

    #[test]
    fn iou_cases() {
        let a = rect(8, 8, 0, 0, 3, 1);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &rect(8, 8, 0, 5, 3, 6)).unwrap(), 0.0);
        assert_eq!(iou(&a, &rect(8, 8, 2, 0, 5, 1)).unwrap(), 1.0 / 3.0);
        let e = MaskBitmap::empty(8, 8);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert!(matches!(
            iou(&a, &MaskBitmap::empty(4, 4)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn location_error_cases() {
        let a = rect(10, 6, 2, 2, 4, 3);
        assert_eq!(location_error(&a, &a).unwrap(), Some(0.0));
        let tl = rect(10, 6, 0, 0, 0, 0);
        let br = rect(10, 6, 9, 5, 9, 5);
        assert_eq!(location_error(&tl, &br).unwrap(), Some(1.0));
        assert_eq!(location_error(&tl, &MaskBitmap::empty(10, 6)).unwrap(), None);
    }

    #[test]
    fn contour_cases() {
        let a = rect(40, 40, 10, 10, 13, 13);
        assert_eq!(contour_accuracy(&a, &a, 0.0075).unwrap(), 1.0);
        let far = rect(40, 40, 30, 30, 33, 33);
        assert_eq!(contour_accuracy(&a, &far, 0.0075).unwrap(), 0.0);
        let e = MaskBitmap::empty(40, 40);
        assert_eq!(contour_accuracy(&e, &e, 0.0075).unwrap(), 1.0);
    }

    #[test]
    fn sparkline_spans_range() {
        assert_eq!(sparkline(&[0.0, 1.0]), "▁█");
        assert_eq!(sparkline(&[2.0, 2.0]), "▄▄");
        assert_eq!(sparkline(&[]), "");
    }
}
