//! A toy joint-attention transformer block and seeded token synthesis.
//!
//! The block keeps what matters for the horizon mask: shared Q/K/V
//! projections over the whole sequence, rotary positions, masked multi-head
//! attention and per-token feed-forward layers. Modulation and separate
//! per-stream weights are left out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernel::{multi_head_attention, KernelPath};
use super::AttentionConfig;
use crate::error::{Error, Result};
use crate::horizon::HorizonMask;
use crate::rope::{apply_rotary_heads, PositionIds};
use crate::scene::{build_layout, SceneSpec, TokenLayout};
use crate::tensor::Matrix;

/// Feed-forward hidden width as a multiple of the model width.
const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor {
    data: Matrix,
    layout: TokenLayout,
}

impl TokenTensor {
    pub fn new(data: Matrix, layout: TokenLayout) -> Result<Self> {
        if data.rows() != layout.total_len() {
            return Err(Error::ShapeMismatch(format!(
                "{} token rows for a layout of {}",
                data.rows(),
                layout.total_len()
            )));
        }
        if !data.is_finite() {
            return Err(Error::ShapeMismatch("token tensor contains non-finite values".into()));
        }
        Ok(Self { data, layout })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn width(&self) -> usize {
        self.data.cols()
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Seeded unit-variance stand-in for text embeddings and encoded latents.
pub fn synth_tokens(spec: &SceneSpec, width: usize) -> Result<TokenTensor> {
    let layout = build_layout(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = normal_matrix(layout.total_len(), width, 1.0, &mut rng);
    TokenTensor::new(data, layout)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
}

impl BlockParams {
    /// Gaussian weights scaled by `1/sqrt(fan_in)`, reproducible from `seed`.
    pub fn seeded(cfg: &AttentionConfig, seed: u64) -> Self {
        let width = cfg.width();
        let hidden = width * MLP_RATIO;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s_in = 1.0 / (width as f64).sqrt();
        let s_hidden = 1.0 / (hidden as f64).sqrt();
        Self {
            wq: normal_matrix(width, width, s_in, &mut rng),
            wk: normal_matrix(width, width, s_in, &mut rng),
            wv: normal_matrix(width, width, s_in, &mut rng),
            wo: normal_matrix(width, width, s_in, &mut rng),
            w1: normal_matrix(width, hidden, s_in, &mut rng),
            w2: normal_matrix(hidden, width, s_hidden, &mut rng),
        }
    }

    pub fn zeros(cfg: &AttentionConfig) -> Self {
        let width = cfg.width();
        let hidden = width * MLP_RATIO;
        Self {
            wq: Matrix::zeros(width, width),
            wk: Matrix::zeros(width, width),
            wv: Matrix::zeros(width, width),
            wo: Matrix::zeros(width, width),
            w1: Matrix::zeros(width, hidden),
            w2: Matrix::zeros(hidden, width),
        }
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// One block with seeded weights on the block-sparse kernel.
pub fn double_stream_forward(
    tokens: &TokenTensor,
    mask: &HorizonMask,
    ids: &PositionIds,
    params_seed: u64,
    cfg: &AttentionConfig,
) -> Result<TokenTensor> {
    let params = BlockParams::seeded(cfg, params_seed);
    forward_with_params(tokens, mask, ids, &params, cfg, KernelPath::BlockSparse)
}

/// `x + attn(x)` followed by `h + mlp(h)`, all without biases.
pub fn forward_with_params(
    tokens: &TokenTensor,
    mask: &HorizonMask,
    ids: &PositionIds,
    params: &BlockParams,
    cfg: &AttentionConfig,
    path: KernelPath,
) -> Result<TokenTensor> {
    if tokens.layout() != mask.layout() {
        return Err(Error::ShapeMismatch("token layout differs from mask layout".into()));
    }
    if tokens.width() != cfg.width() {
        return Err(Error::ShapeMismatch(format!(
            "token width {} differs from model width {}",
            tokens.width(),
            cfg.width()
        )));
    }
    let x = tokens.data();
    let q = apply_rotary_heads(&x.matmul(&params.wq)?, cfg.num_heads, ids, cfg.rope_base)?;
    let k = apply_rotary_heads(&x.matmul(&params.wk)?, cfg.num_heads, ids, cfg.rope_base)?;
    let v = x.matmul(&params.wv)?;

    let attn = multi_head_attention(&q, &k, &v, mask, cfg, path)?;
    let h = x.add(&attn.matmul(&params.wo)?)?;
    let mlp = h.matmul(&params.w1)?.map(gelu).matmul(&params.w2)?;
    let out = h.add(&mlp)?;
    TokenTensor::new(out, tokens.layout().clone())
}
