use serde::Serialize;

use super::{DetectionRecord, GroundTruthRecord};
use crate::error::{Error, Result};
use crate::scene::BoundingBox;

/// IoU thresholds 0.50, 0.55, ..., 0.95 averaged into the headline AP.
pub const AP_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let ih = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedDetection {
    pub confidence: f64,
    /// IoU with the matched subject, `None` if unmatched.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneMatch {
    pub scene_id: String,
    /// Matched IoU per ground-truth subject, 0 when unmatched.
    pub gt_iou: Vec<f64>,
    /// Detection index matched to each subject.
    pub gt_detection: Vec<Option<usize>>,
    pub detections: Vec<MatchedDetection>,
}

/// Greedy one-to-one matching between same-category subjects and detections,
/// highest IoU first (ties: higher confidence, then lower subject index, then
/// lower detection index).
pub fn match_scene(gt: &GroundTruthRecord, det: &DetectionRecord) -> Result<SceneMatch> {
    if gt.scene_id != det.scene_id {
        return Err(Error::SceneIdMismatch { expected: gt.scene_id.clone(), found: det.scene_id.clone() });
    }
    let mut candidates = Vec::new();
    for (g, s) in gt.subjects.iter().enumerate() {
        for (d, dt) in det.detections.iter().enumerate() {
            if s.category == dt.category {
                candidates.push((g, d, iou(&s.bbox, &dt.bbox)));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| det.detections[b.1].confidence.total_cmp(&det.detections[a.1].confidence))
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cmp(&b.1))
    });

    let mut gt_iou = vec![0.0; gt.subjects.len()];
    let mut gt_detection = vec![None; gt.subjects.len()];
    let mut det_iou = vec![None; det.detections.len()];
    for (g, d, v) in candidates {
        if gt_detection[g].is_none() && det_iou[d].is_none() {
            gt_detection[g] = Some(d);
            gt_iou[g] = v;
            det_iou[d] = Some(v);
        }
    }

    Ok(SceneMatch {
        scene_id: gt.scene_id.clone(),
        gt_iou,
        gt_detection,
        detections: det
            .detections
            .iter()
            .zip(det_iou)
            .map(|(d, iou)| MatchedDetection { confidence: d.confidence, iou })
            .collect(),
    })
}

/// Mean matched IoU over every ground-truth subject of every scene.
pub fn compute_miou(matches: &[SceneMatch]) -> Result<f64> {
    let (sum, n) = matches.iter().flat_map(|m| &m.gt_iou).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / n as f64)
}

/// All-point interpolated average precision at one IoU threshold.
///
/// Detections from all scenes are ranked by confidence (ties: scene id, then
/// detection index). A detection is a true positive iff it is matched with
/// IoU at least `threshold`; recall is relative to all subjects.
pub fn ap_at(matches: &[SceneMatch], threshold: f64) -> Result<f64> {
    let total_gt: usize = matches.iter().map(|m| m.gt_iou.len()).sum();
    if total_gt == 0 {
        return Err(Error::EmptyDataset);
    }

    let mut ranked: Vec<(&str, usize, f64, bool)> = matches
        .iter()
        .flat_map(|m| {
            m.detections
                .iter()
                .enumerate()
                .map(move |(i, d)| (m.scene_id.as_str(), i, d.confidence, d.iou.is_some_and(|v| v >= threshold)))
        })
        .collect();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(b.0)).then_with(|| a.1.cmp(&b.1)));

    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, &(_, _, _, hit)) in ranked.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    // Precision envelope: best precision at this or any later rank.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }

    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApSummary {
    pub ap: f64,
    pub ap50: f64,
    pub ap70: f64,
}

pub fn compute_ap(matches: &[SceneMatch]) -> Result<ApSummary> {
    let per_threshold = AP_THRESHOLDS.iter().map(|&t| ap_at(matches, t)).collect::<Result<Vec<_>>>()?;
    Ok(ApSummary {
        ap: per_threshold.iter().sum::<f64>() / per_threshold.len() as f64,
        ap50: ap_at(matches, 0.5)?,
        ap70: ap_at(matches, 0.7)?,
    })
}
