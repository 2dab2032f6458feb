//! Brute-force reference implementations shared by the integration tests
//! and the acceptance runner. Nothing here calls into the code under test
//! beyond plain data types.

#![allow(dead_code)]

use attention_horizon::bench::{Detection, DetectionRecord, GroundTruthRecord, Subject};
use attention_horizon::filter::ScoreRecord;
use attention_horizon::tensor::Matrix;
use attention_horizon::{BoundingBox, ReferenceSpec, SceneSpec};
use rand::Rng;

pub const CATS: [&str; 4] = ["dog", "cat", "vase", "mug"];

/// Random box; half the time snapped to eighths so edges land on patch
/// boundaries.
pub fn random_box(rng: &mut impl Rng) -> BoundingBox {
    loop {
        let (mut a, mut b, mut c, mut d): (f64, f64, f64, f64) =
            (rng.random(), rng.random(), rng.random(), rng.random());
        if rng.random_bool(0.5) {
            for v in [&mut a, &mut b, &mut c, &mut d] {
                *v = (*v * 8.0).round() / 8.0;
            }
        }
        if let Ok(bx) = BoundingBox::new(a.min(c), b.min(d), a.max(c), b.max(d)) {
            return bx;
        }
    }
}

pub fn random_scene(
    rng: &mut impl Rng,
    max_noise: usize,
    max_refs: usize,
    max_text: usize,
    max_grid: usize,
) -> SceneSpec {
    let refs = (0..rng.random_range(0..=max_refs))
        .map(|i| {
            ReferenceSpec::new(
                rng.random_range(1..=max_grid),
                rng.random_range(1..=max_grid),
                CATS[i % CATS.len()],
                random_box(rng),
            )
        })
        .collect();
    SceneSpec::new(
        rng.random_range(0..=max_text),
        rng.random_range(1..=max_noise),
        rng.random_range(1..=max_noise),
        refs,
    )
    .with_seed(rng.random())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Text,
    Noise(usize),
    Ref(usize),
}

/// Token kind by walking the segment sizes directly.
pub fn naive_kind(spec: &SceneSpec, t: usize) -> Kind {
    if t < spec.text_len {
        return Kind::Text;
    }
    let mut t = t - spec.text_len;
    let p = spec.noise_h * spec.noise_w;
    if t < p {
        return Kind::Noise(t);
    }
    t -= p;
    for (i, r) in spec.refs.iter().enumerate() {
        if t < r.grid_h * r.grid_w {
            return Kind::Ref(i);
        }
        t -= r.grid_h * r.grid_w;
    }
    panic!("token out of range")
}

fn naive_patch_hits(spec: &SceneSpec, n: usize, b: &BoundingBox) -> bool {
    let (row, col) = (n / spec.noise_w, n % spec.noise_w);
    let (w, h) = (spec.noise_w as f64, spec.noise_h as f64);
    let ox = (b.x_max().min((col + 1) as f64 / w) - b.x_min().max(col as f64 / w)).max(0.0);
    let oy = (b.y_max().min((row + 1) as f64 / h) - b.y_min().max(row as f64 / h)).max(0.0);
    ox * oy > 0.0
}

/// Per-pair horizon rule evaluated from the scene alone.
pub fn naive_visible(spec: &SceneSpec, q: usize, k: usize) -> bool {
    match (naive_kind(spec, q), naive_kind(spec, k)) {
        (Kind::Ref(i), Kind::Ref(j)) => i == j,
        (Kind::Ref(i), Kind::Noise(n)) | (Kind::Noise(n), Kind::Ref(i)) => {
            naive_patch_hits(spec, n, &spec.refs[i].bbox)
        }
        _ => true,
    }
}

/// Textbook masked attention: masked logits get -1e30 added before a
/// max-shifted softmax.
pub fn naive_attention(q: &Matrix, k: &Matrix, v: &Matrix, visible: impl Fn(usize, usize) -> bool) -> Matrix {
    let len = q.rows();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut out = Matrix::zeros(len, v.cols());
    for i in 0..len {
        let logits: Vec<f64> = (0..len)
            .map(|j| {
                let s: f64 = (0..q.cols()).map(|d| q.get(i, d) * k.get(j, d)).sum::<f64>() * scale;
                if visible(i, j) {
                    s
                } else {
                    s - 1e30
                }
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for d in 0..v.cols() {
            let acc: f64 = (0..len).map(|j| e[j] / z * v.get(j, d)).sum();
            out.set(i, d, acc);
        }
    }
    out
}

/// Descending fractional rank by counting: 1 + #greater + (#equal - 1) / 2.
pub fn counting_rank(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let greater = values.iter().filter(|&&u| u > v).count() as f64;
            let equal = values.iter().filter(|&&u| u == v).count() as f64;
            1.0 + greater + (equal - 1.0) / 2.0
        })
        .collect()
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|&v| if hi == lo { 0.5 } else { (v - lo) / (hi - lo) }).collect()
}

/// `(pair_id, rank)` in final order, from counting ranks and a full sort.
pub fn oracle_aggregate(records: &[ScoreRecord]) -> Vec<(String, f64)> {
    let clip = min_max(&records.iter().map(|r| r.clip_i).collect::<Vec<_>>());
    let dino = min_max(&records.iter().map(|r| r.dino).collect::<Vec<_>>());
    let s_v: Vec<f64> = clip.iter().zip(&dino).map(|(c, d)| (c + d) / 2.0).collect();
    let r_v = counting_rank(&s_v);
    let r_vlm = counting_rank(&records.iter().map(|r| r.s_vlm).collect::<Vec<_>>());
    let r_ds = counting_rank(&records.iter().map(|r| r.s_ds).collect::<Vec<_>>());
    let mut out: Vec<(String, f64)> =
        records.iter().enumerate().map(|(i, r)| (r.pair_id.clone(), (r_v[i] + r_vlm[i] + r_ds[i]) / 3.0)).collect();
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

/// Score records on a coarse grid so ties are common.
pub fn random_scores(rng: &mut impl Rng, n: usize) -> Vec<ScoreRecord> {
    (0..n)
        .map(|i| ScoreRecord {
            pair_id: format!("p{:05}", rng.random_range(0..1_000_000) * 100_000 + i),
            clip_i: (rng.random_range(-20..=20) as f64) / 20.0,
            dino: (rng.random_range(-20..=20) as f64) / 20.0,
            s_vlm: rng.random_range(0..=10) as f64,
            s_ds: rng.random_range(0..=50) as f64 / 5.0,
        })
        .collect()
}

pub fn oracle_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let iy = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        0.0
    } else {
        inter / (a.width() * a.height() + b.width() * b.height() - inter)
    }
}

/// Matched IoU per detection of one scene, by repeatedly taking the best
/// remaining same-category pair.
pub fn oracle_match(gt: &GroundTruthRecord, det: &DetectionRecord) -> (Vec<f64>, Vec<Option<f64>>) {
    let mut gt_iou = vec![0.0; gt.subjects.len()];
    let mut det_iou = vec![None; det.detections.len()];
    let mut gt_used = vec![false; gt.subjects.len()];
    loop {
        let mut best: Option<(f64, f64, usize, usize)> = None;
        for (g, s) in gt.subjects.iter().enumerate() {
            for (d, x) in det.detections.iter().enumerate() {
                if gt_used[g] || det_iou[d].is_some() || s.category != x.category {
                    continue;
                }
                let cand = (oracle_iou(&s.bbox, &x.bbox), x.confidence, g, d);
                let better = match best {
                    None => true,
                    Some(b) => {
                        cand.0 > b.0
                            || (cand.0 == b.0 && cand.1 > b.1)
                            || (cand.0 == b.0 && cand.1 == b.1 && (cand.2, cand.3) < (b.2, b.3))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let Some((v, _, g, d)) = best else { break };
        gt_used[g] = true;
        gt_iou[g] = v;
        det_iou[d] = Some(v);
    }
    (gt_iou, det_iou)
}

/// AP by prefix enumeration: for each recall level reached, the best
/// precision over every prefix reaching at least that recall.
pub fn oracle_ap(gt: &[GroundTruthRecord], det: &[DetectionRecord], threshold: f64) -> f64 {
    let total: usize = gt.iter().map(|g| g.subjects.len()).sum();
    let mut ranked: Vec<(f64, String, usize, bool)> = Vec::new();
    for (g, d) in gt.iter().zip(det) {
        let (_, det_iou) = oracle_match(g, d);
        for (i, x) in d.detections.iter().enumerate() {
            ranked.push((x.confidence, g.scene_id.clone(), i, det_iou[i].is_some_and(|v| v >= threshold)));
        }
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));

    let prefixes: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = ranked[..k].iter().filter(|r| r.3).count() as f64;
            (tp / k as f64, tp / total as f64)
        })
        .collect();
    let mut levels: Vec<f64> = prefixes.iter().map(|p| p.1).filter(|&r| r > 0.0).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let best = prefixes.iter().filter(|p| p.1 >= r).map(|p| p.0).fold(0.0, f64::max);
        ap += (r - prev) * best;
        prev = r;
    }
    ap
}

/// Small dataset with jittered detections, false positives and misses.
pub fn random_bench(rng: &mut impl Rng, max_dets: usize) -> (Vec<GroundTruthRecord>, Vec<DetectionRecord>) {
    let scenes = rng.random_range(1..=4);
    let mut gt = Vec::new();
    let mut det = Vec::new();
    let mut budget = max_dets;
    for s in 0..scenes {
        let subjects: Vec<Subject> = (0..rng.random_range(1..=3))
            .map(|_| Subject { category: CATS[rng.random_range(0..3)].into(), bbox: random_box(rng) })
            .collect();
        let mut detections = Vec::new();
        for sub in &subjects {
            if budget == 0 || rng.random_bool(0.2) {
                continue;
            }
            budget -= 1;
            let j = |v: f64, rng: &mut dyn rand::RngCore| (v + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0);
            let a = sub.bbox.to_array();
            let bbox = BoundingBox::new(j(a[0], rng), j(a[1], rng), j(a[2], rng), j(a[3], rng))
                .unwrap_or_else(|_| random_box(rng));
            let confidence = (rng.random_range(0..=10) as f64) / 10.0;
            detections.push(Detection { category: sub.category.clone(), bbox, confidence });
        }
        while budget > 0 && rng.random_bool(0.4) {
            budget -= 1;
            let confidence = (rng.random_range(0..=10) as f64) / 10.0;
            detections.push(Detection {
                category: CATS[rng.random_range(0..3)].into(),
                bbox: random_box(rng),
                confidence,
            });
        }
        gt.push(GroundTruthRecord { scene_id: format!("s{s}"), subjects });
        det.push(DetectionRecord { scene_id: format!("s{s}"), detections });
    }
    (gt, det)
}
