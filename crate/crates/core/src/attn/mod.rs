//! Masked scaled-dot-product attention over horizon masks.
//!
//! Two kernels compute the same result. The dense kernel scores every
//! (query, key) pair and zeroes masked weights through a materialized mask;
//! it is the reference. The block-sparse kernel walks only the visible key
//! ranges of each query and never builds an `L x L` structure.

mod block;
mod check;
mod kernel;
pub mod perf;

pub use block::{double_stream_forward, forward_with_params, synth_tokens, BlockParams, TokenTensor};
pub use check::{run_attention_checks, CheckOptions, CheckReport};
pub use kernel::{
    attention_weights_dense, masked_attention, masked_attention_block_sparse, masked_attention_dense,
    masked_attention_dense_materialized, masked_softmax, multi_head_attention, KernelPath,
};

use crate::error::{Error, Result};
use crate::rope::DEFAULT_ROPE_BASE;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub head_dim: usize,
    pub num_heads: usize,
    pub rope_base: f64,
}

impl AttentionConfig {
    pub fn new(head_dim: usize, num_heads: usize) -> Result<Self> {
        if head_dim < 4 || !head_dim.is_multiple_of(2) {
            return Err(Error::BadDimension(format!("head_dim must be even and >= 4, got {head_dim}")));
        }
        if num_heads == 0 {
            return Err(Error::BadDimension("num_heads must be positive".into()));
        }
        Ok(Self { head_dim, num_heads, rope_base: DEFAULT_ROPE_BASE })
    }

    pub fn width(&self) -> usize {
        self.head_dim * self.num_heads
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim as f64).sqrt()
    }
}

impl Default for AttentionConfig {
    /// Width 64 split into 4 heads of 16.
    fn default() -> Self {
        Self::new(16, 4).expect("valid default")
    }
}
