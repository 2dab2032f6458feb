//! Wall-time comparison of the dense and block-sparse kernels.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{masked_attention_block_sparse, masked_attention_dense_materialized};
use super::AttentionConfig;
use crate::error::Result;
use crate::horizon::{build_horizon_mask, HorizonMask};
use crate::scene::{build_layout, BoundingBox, ReferenceSpec, SceneSpec};
use crate::tensor::Matrix;

/// One JSONL line of the perf report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRecord {
    pub path: String,
    #[serde(rename = "L")]
    pub len: usize,
    pub ones_fraction: f64,
    pub wall_ns: u64,
}

/// Scene of exactly `len` tokens with two references bound to opposite
/// quarter boxes: an even noise grid holding roughly 56% of the tokens, two
/// square reference grids, and text filling the remainder.
pub fn perf_scene(len: usize) -> SceneSpec {
    let mut side = (((len as f64) * 0.5625).sqrt() / 2.0).round() as usize * 2;
    side = side.max(2);
    while side * side > len && side > 1 {
        side -= 1;
    }
    let rest = len - side * side;
    let ref_side = ((rest as f64) * 0.45).sqrt().floor() as usize;
    let text_len = rest - 2 * ref_side * ref_side;
    let refs = if ref_side == 0 {
        Vec::new()
    } else {
        vec![
            ReferenceSpec::new(ref_side, ref_side, "subject_a", BoundingBox::new(0.0, 0.0, 0.5, 0.5).expect("valid")),
            ReferenceSpec::new(ref_side, ref_side, "subject_b", BoundingBox::new(0.5, 0.5, 1.0, 1.0).expect("valid")),
        ]
    };
    SceneSpec::new(text_len, side, side, refs)
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub struct PerfInputs {
    pub mask: HorizonMask,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

pub fn perf_inputs(spec: &SceneSpec, cfg: &AttentionConfig, seed: u64) -> Result<PerfInputs> {
    let layout = build_layout(spec)?;
    let mask = build_horizon_mask(&layout, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = layout.total_len();
    Ok(PerfInputs {
        q: random(len, cfg.head_dim, &mut rng),
        k: random(len, cfg.head_dim, &mut rng),
        v: random(len, cfg.head_dim, &mut rng),
        mask,
    })
}

/// Best-of-`repeats` wall time of both kernels for one head. The dense mask
/// is materialized before timing starts so both paths time the kernel only.
pub fn time_paths(
    inputs: &PerfInputs,
    cfg: &AttentionConfig,
    repeats: usize,
    dense_limit: usize,
) -> Result<Vec<PerfRecord>> {
    let PerfInputs { mask, q, k, v } = inputs;
    let ones_fraction = mask.visibility_stats().ones_fraction;
    let dense = mask.materialize_dense(dense_limit)?;
    let repeats = repeats.max(1);

    let mut best_dense = u64::MAX;
    let mut best_sparse = u64::MAX;
    for _ in 0..repeats {
        let t = Instant::now();
        let out = masked_attention_dense_materialized(q, k, v, &dense, cfg)?;
        best_dense = best_dense.min(t.elapsed().as_nanos() as u64);
        std::hint::black_box(out);

        let t = Instant::now();
        let out = masked_attention_block_sparse(q, k, v, mask, cfg)?;
        best_sparse = best_sparse.min(t.elapsed().as_nanos() as u64);
        std::hint::black_box(out);
    }

    Ok(vec![
        PerfRecord { path: "dense".into(), len: mask.len(), ones_fraction, wall_ns: best_dense },
        PerfRecord { path: "sparse".into(), len: mask.len(), ones_fraction, wall_ns: best_sparse },
    ])
}
