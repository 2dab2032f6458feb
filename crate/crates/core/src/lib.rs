//! Regional attention horizons for reference-conditioned diffusion transformers.
//!
//! A scene concatenates text tokens, a noise-latent grid and N reference
//! grids into one sequence. Each reference is bound to a bounding box on the
//! noise canvas: it may only exchange attention with noise patches inside
//! its box, and never with other references. This crate builds that mask in
//! block form, runs masked attention through a dense reference kernel and a
//! block-sparse kernel, assigns diagonal 2-D rotary positions to reference
//! grids, and ships the surrounding tooling: a rank-aggregation data filter
//! and a layout-control benchmark (IoU, mIoU, AP).

pub mod attn;
pub mod bench;
pub mod cli;
pub mod error;
pub mod filter;
pub mod horizon;
pub mod rope;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
pub use horizon::HorizonMask;
pub use scene::{BoundingBox, ReferenceSpec, SceneSpec, SegmentKind, TokenLayout};
