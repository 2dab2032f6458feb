//! Seeded generator of layout benchmarks with box-shape constraints.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::iou;
use super::{GroundTruthRecord, Subject};
use crate::error::{Error, Result};
use crate::scene::BoundingBox;

pub const CATEGORIES: &[&str] = &[
    "backpack",
    "bowl",
    "candle",
    "cat",
    "clock",
    "dog",
    "duck toy",
    "glasses",
    "guitar",
    "handbag",
    "lamp",
    "mug",
    "plush bear",
    "robot toy",
    "sneaker",
    "teapot",
    "toy car",
    "vase",
    "watch",
    "wolf plushie",
];

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConstraints {
    pub min_area: f64,
    pub max_area: f64,
    /// Width over height, in canvas units.
    pub min_aspect: f64,
    pub max_aspect: f64,
    /// Minimum share of multi-subject scenes with a challenging box pair.
    pub challenging_fraction: f64,
    /// Overlapping pairs with IoU in `(0, max_overlap_iou]` are challenging.
    pub max_overlap_iou: f64,
    /// Disjoint pairs closer than this are challenging.
    pub max_gap: f64,
}

impl Default for BenchConstraints {
    fn default() -> Self {
        Self {
            min_area: 0.04,
            max_area: 0.60,
            min_aspect: 1.0 / 3.0,
            max_aspect: 3.0,
            challenging_fraction: 0.3,
            max_overlap_iou: 0.3,
            max_gap: 0.02,
        }
    }
}

impl BenchConstraints {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConstraints(m));
        let finite = [
            self.min_area,
            self.max_area,
            self.min_aspect,
            self.max_aspect,
            self.challenging_fraction,
            self.max_overlap_iou,
            self.max_gap,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("constraints must be finite".into());
        }
        if !(0.0 < self.min_area && self.min_area <= self.max_area && self.max_area <= 1.0) {
            return bad(format!("area range [{}, {}] must lie in (0, 1]", self.min_area, self.max_area));
        }
        if !(0.0 < self.min_aspect && self.min_aspect <= self.max_aspect) {
            return bad(format!("aspect range [{}, {}] is empty", self.min_aspect, self.max_aspect));
        }
        // A box of area a fits the canvas only with aspect in [a, 1/a].
        if self.min_aspect > 1.0 / self.min_area || self.max_aspect < self.min_area {
            return bad("no aspect ratio in range lets a box of minimum area fit the canvas".into());
        }
        if !(0.0..=1.0).contains(&self.challenging_fraction) {
            return bad(format!("challenging fraction {} outside [0, 1]", self.challenging_fraction));
        }
        if !(self.max_overlap_iou > 0.0 && self.max_gap > 0.0) {
            return bad("max_overlap_iou and max_gap must be positive".into());
        }
        Ok(())
    }

    pub fn box_ok(&self, b: &BoundingBox) -> bool {
        let aspect = b.width() / b.height();
        (self.min_area..=self.max_area).contains(&b.area()) && (self.min_aspect..=self.max_aspect).contains(&aspect)
    }
}

/// Euclidean distance between two boxes, 0 when they touch or overlap.
fn box_gap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let dx = (a.x_min() - b.x_max()).max(b.x_min() - a.x_max()).max(0.0);
    let dy = (a.y_min() - b.y_max()).max(b.y_min() - a.y_max()).max(0.0);
    dx.hypot(dy)
}

fn challenging_pair(a: &BoundingBox, b: &BoundingBox, c: &BenchConstraints) -> bool {
    let v = iou(a, b);
    (v > 0.0 && v <= c.max_overlap_iou) || (v == 0.0 && box_gap(a, b) < c.max_gap)
}

/// Whether some pair of subjects overlaps slightly or nearly touches.
pub fn is_challenging(record: &GroundTruthRecord, c: &BenchConstraints) -> bool {
    let s = &record.subjects;
    (0..s.len()).any(|i| (i + 1..s.len()).any(|j| challenging_pair(&s[i].bbox, &s[j].bbox, c)))
}

fn sample_size(rng: &mut ChaCha8Rng, c: &BenchConstraints) -> Option<(f64, f64)> {
    for _ in 0..MAX_ATTEMPTS {
        let area = rng.random_range(c.min_area..=c.max_area);
        let aspect = rng.random_range(c.min_aspect.ln()..=c.max_aspect.ln()).exp();
        let (w, h) = ((area * aspect).sqrt(), (area / aspect).sqrt());
        if w <= 1.0 && h <= 1.0 {
            return Some((w, h));
        }
    }
    None
}

fn place(x: f64, y: f64, w: f64, h: f64, c: &BenchConstraints) -> Option<BoundingBox> {
    let b = BoundingBox::new(x, y, x + w, y + h).ok()?;
    c.box_ok(&b).then_some(b)
}

fn sample_box(rng: &mut ChaCha8Rng, c: &BenchConstraints) -> Result<BoundingBox> {
    for _ in 0..MAX_ATTEMPTS {
        let Some((w, h)) = sample_size(rng, c) else { break };
        let x = rng.random_range(0.0..=1.0 - w);
        let y = rng.random_range(0.0..=1.0 - h);
        if let Some(b) = place(x, y, w, h, c) {
            return Ok(b);
        }
    }
    Err(Error::BadConstraints("could not sample a box satisfying the constraints".into()))
}

/// A second box forming a challenging pair with `a`: either a light overlap
/// or a near-touching neighbour.
fn sample_partner(rng: &mut ChaCha8Rng, a: &BoundingBox, c: &BenchConstraints) -> Result<BoundingBox> {
    for _ in 0..MAX_ATTEMPTS {
        let Some((w, h)) = sample_size(rng, c) else { break };
        let candidate = if rng.random_bool(0.5) {
            let x_lo = (a.x_min() - w).max(0.0);
            let x_hi = a.x_max().min(1.0 - w);
            let y_lo = (a.y_min() - h).max(0.0);
            let y_hi = a.y_max().min(1.0 - h);
            if x_lo > x_hi || y_lo > y_hi {
                continue;
            }
            place(rng.random_range(x_lo..=x_hi), rng.random_range(y_lo..=y_hi), w, h, c)
        } else {
            let gap = rng.random_range(0.0..c.max_gap);
            let (x, y) = match rng.random_range(0..4) {
                0 => (a.x_max() + gap, rng.random_range(0.0..=1.0 - h)),
                1 => (a.x_min() - gap - w, rng.random_range(0.0..=1.0 - h)),
                2 => (rng.random_range(0.0..=1.0 - w), a.y_max() + gap),
                _ => (rng.random_range(0.0..=1.0 - w), a.y_min() - gap - h),
            };
            place(x, y, w, h, c)
        };
        if let Some(b) = candidate.filter(|b| challenging_pair(a, b, c)) {
            return Ok(b);
        }
    }
    Err(Error::BadConstraints("could not place a challenging box pair".into()))
}

fn categories(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    CATEGORIES.choose_multiple(rng, n).map(|s| s.to_string()).collect()
}

/// Emits `count_single` one-subject scenes followed by `count_multi` scenes
/// with two or three subjects.
pub fn generate_bench(
    count_single: usize,
    count_multi: usize,
    seed: u64,
    constraints: &BenchConstraints,
) -> Result<Vec<GroundTruthRecord>> {
    constraints.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count_single + count_multi);

    for i in 0..count_single {
        let cat = categories(&mut rng, 1).remove(0);
        let bbox = sample_box(&mut rng, constraints)?;
        out.push(GroundTruthRecord {
            scene_id: format!("single_{i:04}"),
            subjects: vec![Subject { category: cat, bbox }],
        });
    }

    let forced_count = (constraints.challenging_fraction * count_multi as f64).ceil() as usize;
    let forced: HashSet<usize> = sample(&mut rng, count_multi, forced_count.min(count_multi)).into_iter().collect();
    for i in 0..count_multi {
        let n = rng.random_range(2..=3);
        let cats = categories(&mut rng, n);
        let first = sample_box(&mut rng, constraints)?;
        let second = if forced.contains(&i) {
            sample_partner(&mut rng, &first, constraints)?
        } else {
            sample_box(&mut rng, constraints)?
        };
        let mut boxes = vec![first, second];
        if n == 3 {
            boxes.push(sample_box(&mut rng, constraints)?);
        }
        out.push(GroundTruthRecord {
            scene_id: format!("multi_{i:04}"),
            subjects: cats.into_iter().zip(boxes).map(|(category, bbox)| Subject { category, bbox }).collect(),
        });
    }
    Ok(out)
}

/// Every constraint violation found in a benchmark, empty when valid.
pub fn validate_bench(records: &[GroundTruthRecord], c: &BenchConstraints) -> Vec<String> {
    let mut problems = Vec::new();
    let mut ids = HashSet::new();
    let mut multi = 0usize;
    let mut challenging = 0usize;
    for r in records {
        if !ids.insert(r.scene_id.as_str()) {
            problems.push(format!("{}: duplicate scene id", r.scene_id));
        }
        if !(1..=3).contains(&r.subjects.len()) {
            problems.push(format!("{}: {} subjects, expected 1 to 3", r.scene_id, r.subjects.len()));
        }
        for (k, s) in r.subjects.iter().enumerate() {
            if !c.box_ok(&s.bbox) {
                problems.push(format!(
                    "{}: subject {k} box {:?} violates area/aspect limits",
                    r.scene_id,
                    s.bbox.to_array()
                ));
            }
            if !CATEGORIES.contains(&s.category.as_str()) {
                problems.push(format!("{}: unknown category {:?}", r.scene_id, s.category));
            }
        }
        if r.subjects.len() > 1 {
            multi += 1;
            challenging += is_challenging(r, c) as usize;
        }
    }
    if (challenging as f64) < c.challenging_fraction * multi as f64 {
        problems.push(format!("only {challenging} of {multi} multi-subject scenes are challenging"));
    }
    problems
}
