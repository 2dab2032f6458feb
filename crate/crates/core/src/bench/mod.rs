//! Layout-control benchmark metrics.
//!
//! Ground truth lists category-labeled target boxes per scene; detections
//! list what a detector found in the generated image. Detections are matched
//! greedily to ground truth of the same category, then scored as IoU / mIoU
//! and as average precision over IoU thresholds.

mod generate;
mod metrics;
mod report;

pub use generate::{generate_bench, is_challenging, validate_bench, BenchConstraints, CATEGORIES};
pub use metrics::{ap_at, compute_ap, compute_miou, iou, match_scene, ApSummary, SceneMatch, AP_THRESHOLDS};
pub use report::{evaluate, render_table, BenchReport, SceneRow, SplitMetrics};

use serde::{Deserialize, Serialize};

use crate::scene::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub scene_id: String,
    pub subjects: Vec<Subject>,
}

fn default_confidence() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scene_id: String,
    /// Also read from `subjects`, so a ground-truth file doubles as perfect
    /// detections.
    #[serde(alias = "subjects")]
    pub detections: Vec<Detection>,
}

impl GroundTruthRecord {
    pub fn validate(&self) -> crate::Result<()> {
        if self.subjects.is_empty() {
            return Err(crate::Error::InvalidRecord(format!("scene {:?} has no subjects", self.scene_id)));
        }
        Ok(())
    }
}

impl DetectionRecord {
    pub fn empty(scene_id: impl Into<String>) -> Self {
        Self { scene_id: scene_id.into(), detections: Vec::new() }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if let Some(d) = self.detections.iter().find(|d| !(0.0..=1.0).contains(&d.confidence)) {
            return Err(crate::Error::InvalidRecord(format!(
                "confidence {} in scene {:?} is outside [0, 1]",
                d.confidence, self.scene_id
            )));
        }
        Ok(())
    }
}

impl From<&GroundTruthRecord> for DetectionRecord {
    /// Perfect detections: every subject found exactly, confidence 1.
    fn from(gt: &GroundTruthRecord) -> Self {
        Self {
            scene_id: gt.scene_id.clone(),
            detections: gt
                .subjects
                .iter()
                .map(|s| Detection { category: s.category.clone(), bbox: s.bbox, confidence: 1.0 })
                .collect(),
        }
    }
}
