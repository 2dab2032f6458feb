//! 2-D position ids and axial rotary embedding.
//!
//! Noise patch `(r, c)` keeps id `(r, c)`. Reference grids are shifted
//! diagonally past the noise grid and past each other, so no two image
//! tokens from different grids share an id. Text tokens sit at `(0, 0)`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scene::TokenLayout;
use crate::tensor::Matrix;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PositionId {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionIds {
    ids: Vec<PositionId>,
}

impl PositionIds {
    /// Every token at `(0, 0)`, which turns rotary embedding into the identity.
    pub fn zeros(len: usize) -> Self {
        Self { ids: vec![PositionId { row: 0, col: 0 }; len] }
    }

    pub fn from_vec(ids: Vec<PositionId>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, token: usize) -> PositionId {
        self.ids[token]
    }

    pub fn as_slice(&self) -> &[PositionId] {
        &self.ids
    }

    /// `token_index,row_id,col_id` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("token_index,row_id,col_id\n");
        for (i, id) in self.ids.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{}", id.row, id.col);
        }
        out
    }
}

/// Assigns ids with cumulative diagonal offsets for reference grids.
pub fn assign_position_ids(layout: &TokenLayout) -> PositionIds {
    let mut ids = vec![PositionId { row: 0, col: 0 }; layout.total_len()];
    let (nh, nw) = (layout.noise_h(), layout.noise_w());

    let noise = layout.noise();
    for n in 0..noise.len {
        ids[noise.start + n] = PositionId { row: n / nw, col: n % nw };
    }

    let (mut off_h, mut off_w) = (nh, nw);
    for i in 0..layout.ref_count() {
        let (gh, gw) = layout.ref_grid(i);
        let seg = layout.reference(i);
        for p in 0..seg.len {
            ids[seg.start + p] = PositionId { row: off_h + p / gw, col: off_w + p % gw };
        }
        off_h += gh;
        off_w += gw;
    }
    PositionIds { ids }
}

fn check_head_dim(head_dim: usize) -> Result<()> {
    if head_dim == 0 || !head_dim.is_multiple_of(4) {
        return Err(Error::BadDimension(format!("rotary head_dim must be a positive multiple of 4, got {head_dim}")));
    }
    Ok(())
}

/// Rotates one head vector in place: the first half by row id, the second by
/// column id, each as adjacent pairs.
fn rotate(v: &mut [f64], id: PositionId, base: f64) {
    let half = v.len() / 2;
    for (axis, pos) in [(0, id.row), (1, id.col)] {
        let chunk = &mut v[axis * half..(axis + 1) * half];
        for k in 0..half / 2 {
            let freq = base.powf(-((2 * k) as f64) / half as f64);
            let (sin, cos) = (pos as f64 * freq).sin_cos();
            let (a, b) = (chunk[2 * k], chunk[2 * k + 1]);
            chunk[2 * k] = a * cos - b * sin;
            chunk[2 * k + 1] = a * sin + b * cos;
        }
    }
}

/// Applies axial rotary embedding to per-token vectors (one row per token).
pub fn apply_rotary(x: &Matrix, ids: &PositionIds, base: f64) -> Result<Matrix> {
    apply_rotary_heads(x, 1, ids, base)
}

/// Multi-head variant: the row is split into `num_heads` equal head vectors
/// that are rotated independently.
pub fn apply_rotary_heads(x: &Matrix, num_heads: usize, ids: &PositionIds, base: f64) -> Result<Matrix> {
    if num_heads == 0 || !x.cols().is_multiple_of(num_heads) {
        return Err(Error::BadDimension(format!("width {} does not split into {num_heads} heads", x.cols())));
    }
    let head_dim = x.cols() / num_heads;
    check_head_dim(head_dim)?;
    if ids.len() != x.rows() {
        return Err(Error::ShapeMismatch(format!("{} ids for {} tokens", ids.len(), x.rows())));
    }
    let mut out = x.clone();
    for t in 0..x.rows() {
        for head in out.row_mut(t).chunks_mut(head_dim) {
            rotate(head, ids.get(t), base);
        }
    }
    Ok(out)
}
