use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{compute_ap, compute_miou, match_scene, SceneMatch};
use super::{DetectionRecord, GroundTruthRecord};
use crate::error::{Error, Result};

/// Metrics over one subset of scenes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub scenes: usize,
    pub subjects: usize,
    /// Mean matched IoU over the subset's subjects.
    pub iou: f64,
    pub ap: f64,
    pub ap50: f64,
    pub ap70: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneRow {
    pub scene_id: String,
    pub subjects: usize,
    pub detections: usize,
    pub matched: usize,
    pub mean_iou: f64,
    /// The detection file had no entry for this scene.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    /// Mean IoU over single-subject scenes.
    pub iou_mean: Option<f64>,
    /// Mean IoU over multi-subject scenes.
    pub miou: Option<f64>,
    pub ap: f64,
    pub ap50: f64,
    pub ap70: f64,
    pub single: Option<SplitMetrics>,
    pub multi: Option<SplitMetrics>,
    pub missing_detections: Vec<String>,
    pub scenes: Vec<SceneRow>,
}

fn split_metrics(matches: &[SceneMatch]) -> Result<Option<SplitMetrics>> {
    if matches.is_empty() {
        return Ok(None);
    }
    let ap = compute_ap(matches)?;
    Ok(Some(SplitMetrics {
        scenes: matches.len(),
        subjects: matches.iter().map(|m| m.gt_iou.len()).sum(),
        iou: compute_miou(matches)?,
        ap: ap.ap,
        ap50: ap.ap50,
        ap70: ap.ap70,
    }))
}

/// Scores detections against ground truth.
///
/// Scenes absent from the detection file score zero and are listed in
/// `missing_detections`; detection scenes absent from the ground truth are
/// an error.
pub fn evaluate(gt: &[GroundTruthRecord], det: &[DetectionRecord]) -> Result<BenchReport> {
    if gt.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut gt_ids = HashSet::with_capacity(gt.len());
    for g in gt {
        g.validate()?;
        if !gt_ids.insert(g.scene_id.as_str()) {
            return Err(Error::InvalidRecord(format!("duplicate ground-truth scene {:?}", g.scene_id)));
        }
    }
    let mut by_scene: HashMap<&str, &DetectionRecord> = HashMap::with_capacity(det.len());
    for d in det {
        d.validate()?;
        if !gt_ids.contains(d.scene_id.as_str()) {
            return Err(Error::SceneIdMismatch { expected: "<none>".into(), found: d.scene_id.clone() });
        }
        if by_scene.insert(d.scene_id.as_str(), d).is_some() {
            return Err(Error::InvalidRecord(format!("duplicate detection scene {:?}", d.scene_id)));
        }
    }

    let mut single = Vec::new();
    let mut multi = Vec::new();
    let mut rows = Vec::with_capacity(gt.len());
    let mut missing = Vec::new();
    for g in gt {
        let empty;
        let d = match by_scene.get(g.scene_id.as_str()) {
            Some(d) => *d,
            None => {
                missing.push(g.scene_id.clone());
                empty = DetectionRecord::empty(g.scene_id.clone());
                &empty
            }
        };
        let m = match_scene(g, d)?;
        rows.push(SceneRow {
            scene_id: g.scene_id.clone(),
            subjects: g.subjects.len(),
            detections: d.detections.len(),
            matched: m.gt_detection.iter().filter(|x| x.is_some()).count(),
            mean_iou: m.gt_iou.iter().sum::<f64>() / m.gt_iou.len() as f64,
            missing: !by_scene.contains_key(g.scene_id.as_str()),
        });
        if g.subjects.len() == 1 {
            single.push(m);
        } else {
            multi.push(m);
        }
    }

    let all: Vec<SceneMatch> = single.iter().chain(&multi).cloned().collect();
    let overall = compute_ap(&all)?;
    let single = split_metrics(&single)?;
    let multi = split_metrics(&multi)?;
    Ok(BenchReport {
        iou_mean: single.as_ref().map(|s| s.iou),
        miou: multi.as_ref().map(|s| s.iou),
        ap: overall.ap,
        ap50: overall.ap50,
        ap70: overall.ap70,
        single,
        multi,
        missing_detections: missing,
        scenes: rows,
    })
}

/// Plain-text table with single-subject IoU and AP triple next to
/// multi-subject mIoU and AP triple.
pub fn render_table(report: &BenchReport, method: &str) -> String {
    let triple = |s: &Option<SplitMetrics>| match s {
        Some(s) => (format!("{:.3}", s.iou), format!("{:.3} / {:.3} / {:.3}", s.ap, s.ap50, s.ap70)),
        None => ("-".into(), "- / - / -".into()),
    };
    let (s_iou, s_ap) = triple(&report.single);
    let (m_iou, m_ap) = triple(&report.multi);
    let rows = [
        ["Method".to_string(), "IoU".into(), "AP / AP50 / AP70".into(), "mIoU".into(), "AP / AP50 / AP70".into()],
        [method.to_string(), s_iou, s_ap, m_iou, m_ap],
    ];
    let widths: Vec<usize> = (0..5).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();

    let mut out = String::new();
    let single_w = widths[1] + widths[2] + 3;
    let multi_w = widths[3] + widths[4] + 3;
    let _ = writeln!(
        out,
        "| {:w0$} | {:^single_w$} | {:^multi_w$} |",
        "",
        "Single-Subject",
        "Multi-Subject",
        w0 = widths[0]
    );
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:w$}")).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        }
    }
    let _ = writeln!(
        out,
        "overall: AP {:.3} / AP50 {:.3} / AP70 {:.3}; scenes without detections: {}",
        report.ap,
        report.ap50,
        report.ap70,
        report.missing_detections.len()
    );
    out
}
