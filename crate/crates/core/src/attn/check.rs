//! Property checks behind `horizon attn-check`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::block::{forward_with_params, synth_tokens, BlockParams, TokenTensor};
use super::kernel::{attention_weights_dense, multi_head_attention, KernelPath};
use super::AttentionConfig;
use crate::error::Result;
use crate::horizon::{build_horizon_mask, HorizonMask};
use crate::rope::{apply_rotary_heads, assign_position_ids};
use crate::scene::{build_layout, SceneSpec};

pub const LEAKAGE_TOL: f64 = 1e-12;
pub const ROW_SUM_TOL: f64 = 1e-6;
pub const DENSE_SPARSE_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub trials: usize,
    pub seed: u64,
    /// Runs the kernels on a mask that lets every reference see the whole
    /// noise grid, while checks still expect the true horizon.
    pub break_mask: bool,
    pub cfg: AttentionConfig,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { trials: 4, seed: 0, break_mask: false, cfg: AttentionConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub trial: usize,
    pub check: String,
    pub detail: String,
    pub scene: SceneSpec,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub trials: usize,
    pub seed: u64,
    pub break_mask: bool,
    pub max_leakage_dev: f64,
    pub max_masked_weight: f64,
    pub max_row_sum_dev: f64,
    pub max_dense_sparse_rel: f64,
    pub pass: bool,
    pub counterexample: Option<Counterexample>,
}

fn perturb_rows(tokens: &TokenTensor, rows: std::ops::Range<usize>, seed: u64) -> Result<TokenTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = tokens.data().clone();
    for r in rows {
        for v in data.row_mut(r) {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    TokenTensor::new(data, tokens.layout().clone())
}

/// Rows that see no token of reference `i` under `mask`.
fn rows_blocking(mask: &HorizonMask, i: usize) -> Vec<usize> {
    let first = mask.layout().reference(i).start;
    (0..mask.len()).filter(|&r| !mask.visible(r, first)).collect()
}

pub fn run_attention_checks(spec: &SceneSpec, opts: &CheckOptions) -> Result<CheckReport> {
    let cfg = &opts.cfg;
    let mut report = CheckReport {
        trials: opts.trials,
        seed: opts.seed,
        break_mask: opts.break_mask,
        max_leakage_dev: 0.0,
        max_masked_weight: 0.0,
        max_row_sum_dev: 0.0,
        max_dense_sparse_rel: 0.0,
        pass: true,
        counterexample: None,
    };
    let fail = |report: &mut CheckReport, trial: usize, check: &str, detail: String, scene: &SceneSpec| {
        report.pass = false;
        if report.counterexample.is_none() {
            report.counterexample = Some(Counterexample { trial, check: check.into(), detail, scene: scene.clone() });
        }
    };

    for trial in 0..opts.trials {
        let trial_seed = opts.seed.wrapping_add(trial as u64);
        let scene = spec.clone().with_seed(trial_seed);
        let layout = build_layout(&scene)?;
        let truth = build_horizon_mask(&layout, &scene)?;
        let kernel_mask = if opts.break_mask { HorizonMask::full(&layout) } else { truth.clone() };
        let ids = assign_position_ids(&layout);
        let params = BlockParams::seeded(cfg, trial_seed ^ 0x9e37_79b9_7f4a_7c15);
        let tokens = synth_tokens(&scene, cfg.width())?;

        // Leakage: perturb each reference and compare rows that block it.
        let base = forward_with_params(&tokens, &kernel_mask, &ids, &params, cfg, KernelPath::BlockSparse)?;
        for i in 0..layout.ref_count() {
            let perturbed = perturb_rows(&tokens, layout.reference(i).range(), trial_seed.wrapping_mul(31) + i as u64)?;
            let out = forward_with_params(&perturbed, &kernel_mask, &ids, &params, cfg, KernelPath::BlockSparse)?;
            for r in rows_blocking(&truth, i) {
                let dev =
                    base.data().row(r).iter().zip(out.data().row(r)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                report.max_leakage_dev = report.max_leakage_dev.max(dev);
                if dev.is_nan() || dev > LEAKAGE_TOL {
                    fail(
                        &mut report,
                        trial,
                        "leakage",
                        format!("row {r} moved by {dev:e} when reference {i} changed"),
                        &scene,
                    );
                }
            }
        }

        // Softmax contract on the first head.
        let x = tokens.data();
        let q = apply_rotary_heads(&x.matmul(&params.wq)?, cfg.num_heads, &ids, cfg.rope_base)?;
        let k = apply_rotary_heads(&x.matmul(&params.wk)?, cfg.num_heads, &ids, cfg.rope_base)?;
        let v = x.matmul(&params.wv)?;
        let w = attention_weights_dense(&q.columns(0, cfg.head_dim), &k.columns(0, cfg.head_dim), &kernel_mask, cfg)?;
        for r in 0..w.rows() {
            let mut sum = 0.0;
            for c in 0..w.cols() {
                let wv = w.get(r, c);
                if !wv.is_finite() {
                    fail(&mut report, trial, "softmax", format!("weight ({r},{c}) is {wv}"), &scene);
                }
                if truth.visible(r, c) {
                    sum += wv;
                } else {
                    report.max_masked_weight = report.max_masked_weight.max(wv.abs());
                    if wv != 0.0 {
                        fail(
                            &mut report,
                            trial,
                            "masked_weight",
                            format!("weight ({r},{c}) = {wv:e} is masked"),
                            &scene,
                        );
                    }
                }
            }
            let dev = (sum - 1.0).abs();
            report.max_row_sum_dev = report.max_row_sum_dev.max(dev);
            if dev.is_nan() || dev > ROW_SUM_TOL {
                fail(&mut report, trial, "row_sum", format!("visible weights of row {r} sum to {sum}"), &scene);
            }
        }

        // Kernel equivalence.
        let dense = multi_head_attention(&q, &k, &v, &kernel_mask, cfg, KernelPath::Dense)?;
        let sparse = multi_head_attention(&q, &k, &v, &kernel_mask, cfg, KernelPath::BlockSparse)?;
        let rel = sparse.max_rel_diff(&dense);
        report.max_dense_sparse_rel = report.max_dense_sparse_rel.max(rel);
        if rel.is_nan() || rel > DENSE_SPARSE_REL_TOL {
            fail(&mut report, trial, "dense_sparse", format!("max relative error {rel:e}"), &scene);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BoundingBox, ReferenceSpec};

    fn scene() -> SceneSpec {
        SceneSpec::new(
            4,
            6,
            6,
            vec![
                ReferenceSpec::new(2, 2, "a", BoundingBox::new(0.0, 0.0, 0.5, 0.5).unwrap()),
                ReferenceSpec::new(2, 3, "b", BoundingBox::new(0.5, 0.5, 1.0, 1.0).unwrap()),
            ],
        )
    }

    #[test]
    fn honest_mask_passes() {
        let report = run_attention_checks(&scene(), &CheckOptions::default()).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.max_leakage_dev <= LEAKAGE_TOL);
        assert_eq!(report.max_masked_weight, 0.0);
    }

    #[test]
    fn broken_mask_is_caught() {
        let opts = CheckOptions { break_mask: true, ..Default::default() };
        let report = run_attention_checks(&scene(), &opts).unwrap();
        assert!(!report.pass);
        assert!(report.counterexample.is_some());
    }
}
