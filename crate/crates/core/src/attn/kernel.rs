use std::ops::Range;

use super::AttentionConfig;
use crate::error::{Error, Result};
use crate::horizon::{dense_limit_from_env, DenseMask, HorizonMask};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelPath {
    Dense,
    BlockSparse,
}

impl KernelPath {
    pub fn name(&self) -> &'static str {
        match self {
            KernelPath::Dense => "dense",
            KernelPath::BlockSparse => "sparse",
        }
    }
}

/// Softmax over the visible entries of one row; masked entries get exactly 0.
///
/// Masked logits are excluded rather than shifted by a large negative
/// constant, so they never take part in the max or the normalizer.
pub fn masked_softmax(logits: &[f64], visible: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != visible.len() {
        return Err(Error::ShapeMismatch(format!("{} logits with {} mask entries", logits.len(), visible.len())));
    }
    let max = logits.iter().zip(visible).filter(|(_, &v)| v).map(|(&l, _)| l).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMaskedRow(0));
    }
    let mut weights: Vec<f64> =
        logits.iter().zip(visible).map(|(&l, &v)| if v { (l - max).exp() } else { 0.0 }).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(weights)
}

fn check_shapes(q: &Matrix, k: &Matrix, v: &Matrix, len: usize, cfg: &AttentionConfig) -> Result<()> {
    for (name, m) in [("Q", q), ("K", k), ("V", v)] {
        if m.shape() != (len, cfg.head_dim) {
            return Err(Error::ShapeMismatch(format!("{name} is {:?}, expected ({len}, {})", m.shape(), cfg.head_dim)));
        }
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full `L x L` attention weights through the dense path.
pub fn attention_weights_dense(q: &Matrix, k: &Matrix, mask: &HorizonMask, cfg: &AttentionConfig) -> Result<Matrix> {
    let len = mask.len();
    check_shapes(q, k, k, len, cfg)?;
    let dense = mask.materialize_dense(dense_limit_from_env())?;
    let mut out = Matrix::zeros(len, len);
    let mut logits = vec![0.0; len];
    let mut visible = vec![false; len];
    for i in 0..len {
        dense_row_weights(q, k, &dense, i, cfg.scale(), &mut logits, &mut visible)?;
        out.row_mut(i).copy_from_slice(&logits);
    }
    Ok(out)
}

// Leaves the softmax weights of query `i` in `logits`.
fn dense_row_weights(
    q: &Matrix,
    k: &Matrix,
    dense: &DenseMask,
    i: usize,
    scale: f64,
    logits: &mut [f64],
    visible: &mut [bool],
) -> Result<()> {
    let qi = q.row(i);
    for (j, (l, v)) in logits.iter_mut().zip(visible.iter_mut()).enumerate() {
        *l = dot(qi, k.row(j)) * scale;
        *v = dense.get(i, j);
    }
    let w = masked_softmax(logits, visible).map_err(|e| match e {
        Error::AllMaskedRow(_) => Error::AllMaskedRow(i),
        e => e,
    })?;
    logits.copy_from_slice(&w);
    Ok(())
}

/// Dense reference kernel: materializes the mask and scores every pair.
pub fn masked_attention_dense(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &HorizonMask,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    let dense = mask.materialize_dense(dense_limit_from_env())?;
    masked_attention_dense_materialized(q, k, v, &dense, cfg)
}

pub fn masked_attention_dense_materialized(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    dense: &DenseMask,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    let len = dense.len();
    check_shapes(q, k, v, len, cfg)?;
    let mut out = Matrix::zeros(len, cfg.head_dim);
    let mut weights = vec![0.0; len];
    let mut visible = vec![false; len];
    for i in 0..len {
        dense_row_weights(q, k, dense, i, cfg.scale(), &mut weights, &mut visible)?;
        let dst = out.row_mut(i);
        for (j, &w) in weights.iter().enumerate() {
            for (d, &x) in dst.iter_mut().zip(v.row(j)) {
                *d += w * x;
            }
        }
    }
    Ok(out)
}

/// Block-sparse kernel: only visible key ranges are scored and summed.
///
/// Keys are visited in ascending index order, the same order the dense
/// kernel sums in.
pub fn masked_attention_block_sparse(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &HorizonMask,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    let len = mask.len();
    check_shapes(q, k, v, len, cfg)?;
    let scale = cfg.scale();
    let mut out = Matrix::zeros(len, cfg.head_dim);
    let mut logits = Vec::with_capacity(len);
    for i in 0..len {
        let ranges: Vec<Range<usize>> = mask.visible_key_ranges(i);
        let qi = q.row(i);
        logits.clear();
        let mut max = f64::NEG_INFINITY;
        for j in ranges.iter().cloned().flatten() {
            let l = dot(qi, k.row(j)) * scale;
            max = max.max(l);
            logits.push(l);
        }
        if logits.is_empty() {
            return Err(Error::AllMaskedRow(i));
        }
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        let dst = out.row_mut(i);
        for (j, &e) in ranges.iter().cloned().flatten().zip(&logits) {
            let w = e / sum;
            for (d, &x) in dst.iter_mut().zip(v.row(j)) {
                *d += w * x;
            }
        }
    }
    Ok(out)
}

pub fn masked_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &HorizonMask,
    cfg: &AttentionConfig,
    path: KernelPath,
) -> Result<Matrix> {
    match path {
        KernelPath::Dense => masked_attention_dense(q, k, v, mask, cfg),
        KernelPath::BlockSparse => masked_attention_block_sparse(q, k, v, mask, cfg),
    }
}

/// Runs every head of `L x width` projections and concatenates the results.
pub fn multi_head_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &HorizonMask,
    cfg: &AttentionConfig,
    path: KernelPath,
) -> Result<Matrix> {
    let width = cfg.width();
    for (name, m) in [("Q", q), ("K", k), ("V", v)] {
        if m.shape() != (mask.len(), width) {
            return Err(Error::ShapeMismatch(format!("{name} is {:?}, expected ({}, {width})", m.shape(), mask.len())));
        }
    }
    let dense = match path {
        KernelPath::Dense => Some(mask.materialize_dense(dense_limit_from_env())?),
        KernelPath::BlockSparse => None,
    };
    let mut out = Matrix::zeros(mask.len(), width);
    for h in 0..cfg.num_heads {
        let start = h * cfg.head_dim;
        let (qh, kh, vh) =
            (q.columns(start, cfg.head_dim), k.columns(start, cfg.head_dim), v.columns(start, cfg.head_dim));
        let oh = match &dense {
            Some(d) => masked_attention_dense_materialized(&qh, &kh, &vh, d, cfg)?,
            None => masked_attention_block_sparse(&qh, &kh, &vh, mask, cfg)?,
        };
        out.set_columns(start, &oh);
    }
    Ok(out)
}
