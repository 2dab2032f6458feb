//! Attention horizon masks.
//!
//! The mask is a symmetric binary relation over token pairs. Reference `i`
//! and reference `j != i` never see each other, and reference `i` sees a
//! noise patch only when that patch overlaps its box. Every other pair is
//! visible. The relation is stored as one bitmap over noise patches per
//! reference; everything else follows from segment membership.

use std::fmt::Write as _;
use std::ops::Range;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{patch_cell, BoundingBox, Cell, SceneSpec, SegmentKind, TokenLayout};

/// Default cap on the sequence length of a materialized dense mask.
pub const DEFAULT_DENSE_LIMIT: usize = 8192;

/// Environment variable overriding [`DEFAULT_DENSE_LIMIT`].
pub const DENSE_LIMIT_ENV: &str = "HORIZON_DENSE_LIMIT";

pub fn dense_limit_from_env() -> usize {
    std::env::var(DENSE_LIMIT_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(DEFAULT_DENSE_LIMIT)
}

/// True iff the cell and the box overlap with positive area.
pub fn patch_in_box(cell: &Cell, bbox: &BoundingBox) -> bool {
    let dx = cell.x1.min(bbox.x_max()) - cell.x0.max(bbox.x_min());
    let dy = cell.y1.min(bbox.y_max()) - cell.y0.max(bbox.y_min());
    dx > 0.0 && dy > 0.0
}

/// Packed bit set over noise patches, least significant bit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseBitmap {
    len: usize,
    bytes: Vec<u8>,
}

impl NoiseBitmap {
    pub fn zeros(len: usize) -> Self {
        Self { len, bytes: vec![0; len.div_ceil(8)] }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = Self::zeros(len);
        (0..len).for_each(|n| b.set(n, true));
        b
    }

    pub fn from_bytes(len: usize, bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::InvalidSpec(format!(
                "bitmap of {len} bits needs {} bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        if !len.is_multiple_of(8) && bytes.last().is_some_and(|b| b >> (len % 8) != 0) {
            return Err(Error::InvalidSpec("bitmap has bits set past its length".into()));
        }
        Ok(Self { len, bytes })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, n: usize) -> bool {
        debug_assert!(n < self.len);
        self.bytes[n / 8] >> (n % 8) & 1 == 1
    }

    pub fn set(&mut self, n: usize, value: bool) {
        debug_assert!(n < self.len);
        if value {
            self.bytes[n / 8] |= 1 << (n % 8);
        } else {
            self.bytes[n / 8] &= !(1 << (n % 8));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&n| self.get(n))
    }

    /// Maximal runs of set bits as half-open ranges.
    pub fn runs(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = None;
        for n in 0..self.len {
            match (self.get(n), start) {
                (true, None) => start = Some(n),
                (false, Some(s)) => {
                    out.push(s..n);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(s..self.len);
        }
        out
    }
}

/// Rule governing one (query segment, key segment) block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRule {
    Ones,
    Zeros,
    /// Visible where the reference's noise bitmap is set.
    Bitmap,
}

pub fn block_rule(query: SegmentKind, key: SegmentKind) -> BlockRule {
    use SegmentKind::*;
    match (query, key) {
        (Ref(i), Ref(j)) if i != j => BlockRule::Zeros,
        (Ref(_), Noise) | (Noise, Ref(_)) => BlockRule::Bitmap,
        _ => BlockRule::Ones,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonMask {
    layout: TokenLayout,
    ref_visibility: Vec<NoiseBitmap>,
    // Noise-local runs of each bitmap, cached for the sparse kernel.
    ref_runs: Vec<Vec<Range<usize>>>,
}

/// Builds the horizon mask of a scene over its layout.
pub fn build_horizon_mask(layout: &TokenLayout, spec: &SceneSpec) -> Result<HorizonMask> {
    spec.validate()?;
    let grids: Vec<_> = spec.refs.iter().map(|r| (r.grid_h, r.grid_w)).collect();
    let matches = layout.text().len == spec.text_len
        && layout.noise_h() == spec.noise_h
        && layout.noise_w() == spec.noise_w
        && (0..layout.ref_count()).map(|i| layout.ref_grid(i)).eq(grids.iter().copied());
    if !matches {
        return Err(Error::InvalidSpec("layout was not derived from this scene".into()));
    }

    let cells: Vec<Cell> = (0..layout.noise_len()).map(|n| patch_cell(layout, n)).collect::<Result<_>>()?;
    let visibility = spec
        .refs
        .iter()
        .map(|r| {
            let mut bits = NoiseBitmap::zeros(cells.len());
            for (n, cell) in cells.iter().enumerate() {
                bits.set(n, patch_in_box(cell, &r.bbox));
            }
            bits
        })
        .collect();
    HorizonMask::from_parts(layout.clone(), visibility)
}

impl HorizonMask {
    pub fn from_parts(layout: TokenLayout, ref_visibility: Vec<NoiseBitmap>) -> Result<Self> {
        if ref_visibility.len() != layout.ref_count() {
            return Err(Error::InvalidSpec(format!(
                "{} visibility bitmaps for {} references",
                ref_visibility.len(),
                layout.ref_count()
            )));
        }
        if let Some(b) = ref_visibility.iter().find(|b| b.len() != layout.noise_len()) {
            return Err(Error::InvalidSpec(format!(
                "bitmap length {} does not match {} noise patches",
                b.len(),
                layout.noise_len()
            )));
        }
        let ref_runs = ref_visibility.iter().map(NoiseBitmap::runs).collect();
        Ok(Self { layout, ref_visibility, ref_runs })
    }

    /// Mask in which every reference sees the whole noise grid.
    pub fn full(layout: &TokenLayout) -> Self {
        Self::from_parts(
            layout.clone(),
            (0..layout.ref_count()).map(|_| NoiseBitmap::ones(layout.noise_len())).collect(),
        )
        .expect("consistent by construction")
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.layout.total_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ref_visibility(&self, i: usize) -> &NoiseBitmap {
        &self.ref_visibility[i]
    }

    pub fn ref_visibilities(&self) -> &[NoiseBitmap] {
        &self.ref_visibility
    }

    /// Whether query token `q` may attend to key token `k`.
    pub fn visible(&self, q: usize, k: usize) -> bool {
        let (qk, qo) = self.layout.locate(q).expect("query in range");
        let (kk, ko) = self.layout.locate(k).expect("key in range");
        match (qk, kk) {
            (SegmentKind::Ref(i), SegmentKind::Noise) => self.ref_visibility[i].get(ko),
            (SegmentKind::Noise, SegmentKind::Ref(i)) => self.ref_visibility[i].get(qo),
            _ => block_rule(qk, kk) == BlockRule::Ones,
        }
    }

    /// Visible keys of query `q` as ascending, disjoint index ranges.
    pub fn visible_key_ranges(&self, q: usize) -> Vec<Range<usize>> {
        let (kind, offset) = self.layout.locate(q).expect("query in range");
        let text = self.layout.text();
        let noise = self.layout.noise();
        let mut ranges: Vec<Range<usize>> = Vec::with_capacity(2 + self.layout.ref_count());
        let mut push = |r: Range<usize>| {
            if r.is_empty() {
                return;
            }
            match ranges.last_mut() {
                Some(last) if last.end == r.start => last.end = r.end,
                _ => ranges.push(r),
            }
        };
        match kind {
            SegmentKind::Text => push(0..self.len()),
            SegmentKind::Noise => {
                push(text.start..noise.end());
                for i in 0..self.layout.ref_count() {
                    if self.ref_visibility[i].get(offset) {
                        push(self.layout.reference(i).range());
                    }
                }
            }
            SegmentKind::Ref(i) => {
                push(text.range());
                for run in &self.ref_runs[i] {
                    push(noise.start + run.start..noise.start + run.end);
                }
                push(self.layout.reference(i).range());
            }
        }
        ranges
    }

    pub fn materialize_dense(&self, limit: usize) -> Result<DenseMask> {
        let len = self.len();
        if len > limit {
            return Err(Error::DenseTooLarge { len, limit });
        }
        let mut data = vec![0u8; len * len];
        for q in 0..len {
            for r in self.visible_key_ranges(q) {
                data[q * len + r.start..q * len + r.end].fill(1);
            }
        }
        Ok(DenseMask { len, data })
    }

    /// Visible-pair statistics computed from the block structure alone.
    pub fn visibility_stats(&self) -> VisibilityStats {
        let len = self.len() as u128;
        let noise = self.layout.noise_len() as u128;
        let sizes: Vec<u128> = (0..self.layout.ref_count()).map(|i| self.layout.reference(i).len as u128).collect();
        let counts: Vec<usize> = self.ref_visibility.iter().map(NoiseBitmap::count_ones).collect();

        let ref_total: u128 = sizes.iter().sum();
        let cross_ref: u128 = sizes.iter().map(|s| s * (ref_total - s)).sum();
        let hidden_noise: u128 = sizes.iter().zip(&counts).map(|(s, &c)| 2 * s * (noise - c as u128)).sum();
        let ones = len * len - cross_ref - hidden_noise;

        VisibilityStats {
            total_len: self.len(),
            ones: ones as u64,
            ones_fraction: ones as f64 / (len * len) as f64,
            per_ref_patch_counts: counts,
        }
    }

    /// Block-structure dump for inspection and round-trips.
    pub fn to_block_json(&self) -> BlockDump {
        let segments: Vec<SegmentDump> = self
            .layout
            .segments()
            .iter()
            .map(|s| {
                let (kind, index, grid) = match s.kind {
                    SegmentKind::Text => ("text", None, None),
                    SegmentKind::Noise => ("noise", None, Some([self.layout.noise_h(), self.layout.noise_w()])),
                    SegmentKind::Ref(i) => {
                        let (h, w) = self.layout.ref_grid(i);
                        ("ref", Some(i), Some([h, w]))
                    }
                };
                SegmentDump { kind: kind.into(), index, grid, start: s.start, len: s.len }
            })
            .collect();

        let mut blocks = Vec::new();
        for q in self.layout.segments() {
            for k in self.layout.segments() {
                blocks.push(BlockEntry {
                    query: segment_name(q.kind),
                    key: segment_name(k.kind),
                    rule: block_rule(q.kind, k.kind),
                });
            }
        }

        BlockDump {
            total_len: self.len(),
            segments,
            blocks,
            ref_visibility: self.ref_visibility.iter().map(|b| BASE64.encode(b.as_bytes())).collect(),
        }
    }

    pub fn from_block_json(dump: &BlockDump) -> Result<Self> {
        let bad = |msg: String| Error::InvalidSpec(msg);
        let mut text_len = None;
        let mut noise = None;
        let mut grids = Vec::new();
        for s in &dump.segments {
            match (s.kind.as_str(), s.index, s.grid) {
                ("text", None, _) => text_len = Some(s.len),
                ("noise", None, Some([h, w])) => noise = Some((h, w)),
                ("ref", Some(i), Some([h, w])) if i == grids.len() => grids.push((h, w)),
                _ => return Err(bad(format!("unexpected segment entry {s:?}"))),
            }
        }
        let (Some(text_len), Some((noise_h, noise_w))) = (text_len, noise) else {
            return Err(bad("missing text or noise segment".into()));
        };
        let layout = TokenLayout::new(text_len, noise_h, noise_w, grids, usize::MAX)?;
        if layout.total_len() != dump.total_len {
            return Err(bad(format!("total_len {} does not match segments", dump.total_len)));
        }

        let visibility = dump
            .ref_visibility
            .iter()
            .map(|s| {
                let bytes = BASE64.decode(s).map_err(|e| bad(format!("bad base64 bitmap: {e}")))?;
                NoiseBitmap::from_bytes(layout.noise_len(), bytes)
            })
            .collect::<Result<Vec<_>>>()?;
        let mask = Self::from_parts(layout, visibility)?;

        let expected = mask.to_block_json();
        if expected.segments != dump.segments || expected.blocks != dump.blocks {
            return Err(bad("segment or block rules disagree with the horizon rules".into()));
        }
        Ok(mask)
    }
}

fn segment_name(kind: SegmentKind) -> String {
    match kind {
        SegmentKind::Text => "text".into(),
        SegmentKind::Noise => "noise".into(),
        SegmentKind::Ref(i) => format!("ref{i}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityStats {
    pub total_len: usize,
    pub ones: u64,
    pub ones_fraction: f64,
    pub per_ref_patch_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentDump {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub query: String,
    pub key: String,
    pub rule: BlockRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDump {
    pub total_len: usize,
    pub segments: Vec<SegmentDump>,
    pub blocks: Vec<BlockEntry>,
    /// Base64 of each reference's packed noise bitmap.
    pub ref_visibility: Vec<String>,
}

/// Row-major `L x L` matrix of 0/1 entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    len: usize,
    data: Vec<u8>,
}

impl DenseMask {
    pub fn from_fn(len: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = vec![0u8; len * len];
        for q in 0..len {
            for k in 0..len {
                data[q * len + k] = f(q, k) as u8;
            }
        }
        Self { len, data }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, q: usize, k: usize) -> bool {
        self.data[q * self.len + k] == 1
    }

    pub fn row(&self, q: usize) -> &[u8] {
        &self.data[q * self.len..(q + 1) * self.len]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.len).all(|q| (q + 1..self.len).all(|k| self.get(q, k) == self.get(k, q)))
    }

    /// Binary PGM (P5), 255 for visible and 0 for blocked.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.len, self.len).into_bytes();
        out.extend(self.data.iter().map(|&v| if v == 1 { 255u8 } else { 0 }));
        out
    }

    /// Text rendering with one character per entry, for debugging.
    pub fn render(&self) -> String {
        let mut s = String::with_capacity(self.len * (self.len + 1));
        for q in 0..self.len {
            for &v in self.row(q) {
                s.push(if v == 1 { '#' } else { '.' });
            }
            let _ = writeln!(s);
        }
        s
    }
}
