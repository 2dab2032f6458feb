//! Scene descriptions and the unified token layout.
//!
//! A scene is laid out as one sequence in the order text, noise, then every
//! reference grid in list order. Noise and reference grids are flattened
//! row-major.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the total token count of a scene.
pub const DEFAULT_MAX_SEQ_LEN: usize = 16384;

/// Axis-aligned box in normalized noise-canvas coordinates.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSpec(format!("non-finite box coordinate in {coords:?}")));
        }
        if !(0.0 <= x_min && x_min < x_max && x_max <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "box x range [{x_min}, {x_max}] must satisfy 0 <= x_min < x_max <= 1"
            )));
        }
        if !(0.0 <= y_min && y_min < y_max && y_max <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "box y range [{y_min}, {y_max}] must satisfy 0 <= y_min < y_max <= 1"
            )));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    /// The whole canvas.
    pub fn full() -> Self {
        Self { x_min: 0.0, y_min: 0.0, x_max: 1.0, y_max: 1.0 }
    }

    /// Converts a pixel-space box on an image of the given size.
    pub fn from_pixels(coords: [f64; 4], width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidSpec(format!("bad image size {width}x{height}")));
        }
        Self::new(coords[0] / width, coords[1] / height, coords[2] / width, coords[3] / height)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Half-open rectangle `[x0, x1) x [y0, y1)` covered by one noise patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Cell {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

impl ReferenceSpec {
    pub fn new(grid_h: usize, grid_w: usize, category: impl Into<String>, bbox: BoundingBox) -> Self {
        Self { grid_h, grid_w, category: category.into(), bbox }
    }

    pub fn token_count(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub text_len: usize,
    pub noise_h: usize,
    pub noise_w: usize,
    pub seed: u64,
    pub refs: Vec<ReferenceSpec>,
}

impl SceneSpec {
    pub fn new(text_len: usize, noise_h: usize, noise_w: usize, refs: Vec<ReferenceSpec>) -> Self {
        Self { text_len, noise_h, noise_w, seed: 0, refs }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serialization is infallible")
    }

    pub fn total_len(&self) -> usize {
        self.text_len + self.noise_h * self.noise_w + self.refs.iter().map(ReferenceSpec::token_count).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_h == 0 || self.noise_w == 0 {
            return Err(Error::InvalidSpec(format!(
                "noise grid {}x{} must be at least 1x1",
                self.noise_h, self.noise_w
            )));
        }
        for (i, r) in self.refs.iter().enumerate() {
            if r.grid_h == 0 || r.grid_w == 0 {
                return Err(Error::InvalidSpec(format!(
                    "reference {i} grid {}x{} must be at least 1x1",
                    r.grid_h, r.grid_w
                )));
            }
            // Boxes built through serde or `new` are already checked; this
            // catches hand-assembled values.
            BoundingBox::new(r.bbox.x_min, r.bbox.y_min, r.bbox.x_max, r.bbox.y_max)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Text,
    Noise,
    /// Zero-based reference index.
    Ref(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end()
    }
}

/// Index map of the concatenated sequence.
///
/// The text segment is always present (possibly empty) at index 0, noise at
/// index 1, and reference `i` at index `2 + i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    segments: Vec<Segment>,
    total_len: usize,
    noise_h: usize,
    noise_w: usize,
    ref_grids: Vec<(usize, usize)>,
}

impl TokenLayout {
    /// Builds a layout directly from segment sizes.
    pub fn new(
        text_len: usize,
        noise_h: usize,
        noise_w: usize,
        ref_grids: Vec<(usize, usize)>,
        max_len: usize,
    ) -> Result<Self> {
        if noise_h == 0 || noise_w == 0 {
            return Err(Error::InvalidSpec(format!("noise grid {noise_h}x{noise_w} must be at least 1x1")));
        }
        if let Some(i) = ref_grids.iter().position(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::InvalidSpec(format!("reference {i} grid must be at least 1x1")));
        }
        let total = text_len + noise_h * noise_w + ref_grids.iter().map(|(h, w)| h * w).sum::<usize>();
        if total > max_len {
            return Err(Error::SequenceTooLong { len: total, max: max_len });
        }

        let mut segments = Vec::with_capacity(2 + ref_grids.len());
        let mut cursor = 0;
        let mut push = |kind, len| {
            segments.push(Segment { kind, start: cursor, len });
            cursor += len;
        };
        push(SegmentKind::Text, text_len);
        push(SegmentKind::Noise, noise_h * noise_w);
        for (i, (h, w)) in ref_grids.iter().enumerate() {
            push(SegmentKind::Ref(i), h * w);
        }

        Ok(Self { segments, total_len: total, noise_h, noise_w, ref_grids })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Segments with non-zero length, in sequence order.
    pub fn nonempty_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.len > 0)
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn noise_h(&self) -> usize {
        self.noise_h
    }

    pub fn noise_w(&self) -> usize {
        self.noise_w
    }

    pub fn noise_len(&self) -> usize {
        self.noise_h * self.noise_w
    }

    pub fn ref_count(&self) -> usize {
        self.ref_grids.len()
    }

    pub fn ref_grid(&self, i: usize) -> (usize, usize) {
        self.ref_grids[i]
    }

    pub fn text(&self) -> Segment {
        self.segments[0]
    }

    pub fn noise(&self) -> Segment {
        self.segments[1]
    }

    pub fn reference(&self, i: usize) -> Segment {
        self.segments[2 + i]
    }

    /// Segment kind and in-segment offset of token `index`.
    pub fn locate(&self, index: usize) -> Result<(SegmentKind, usize)> {
        if index >= self.total_len {
            return Err(Error::IndexOutOfRange { index, len: self.total_len });
        }
        // Segments are sorted by start; the last one starting at or before
        // `index` with non-zero length contains it.
        let pos = self.segments.partition_point(|s| s.start <= index);
        let seg = self.segments[..pos].iter().rev().find(|s| index < s.end()).expect("segments cover the sequence");
        Ok((seg.kind, index - seg.start))
    }

    /// Canvas cell of noise patch `n`.
    pub fn patch_cell(&self, n: usize) -> Result<Cell> {
        patch_cell(self, n)
    }
}

/// Lays out a scene with the default maximum sequence length.
pub fn build_layout(spec: &SceneSpec) -> Result<TokenLayout> {
    build_layout_with_limit(spec, DEFAULT_MAX_SEQ_LEN)
}

pub fn build_layout_with_limit(spec: &SceneSpec, max_len: usize) -> Result<TokenLayout> {
    spec.validate()?;
    TokenLayout::new(
        spec.text_len,
        spec.noise_h,
        spec.noise_w,
        spec.refs.iter().map(|r| (r.grid_h, r.grid_w)).collect(),
        max_len,
    )
}

/// Row-major canvas cell of noise patch `n`: row `n / W`, column `n % W`.
pub fn patch_cell(layout: &TokenLayout, n: usize) -> Result<Cell> {
    let (h, w) = (layout.noise_h, layout.noise_w);
    if n >= h * w {
        return Err(Error::IndexOutOfRange { index: n, len: h * w });
    }
    let (r, c) = (n / w, n % w);
    Ok(Cell {
        x0: c as f64 / w as f64,
        x1: (c + 1) as f64 / w as f64,
        y0: r as f64 / h as f64,
        y1: (r + 1) as f64 / h as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn degenerate_scene_is_noise_only() {
        let layout = build_layout(&SceneSpec::new(0, 2, 2, vec![])).unwrap();
        let kinds: Vec<_> = layout.nonempty_segments().map(|s| (s.kind, s.start, s.len)).collect();
        assert_eq!(kinds, vec![(SegmentKind::Noise, 0, 4)]);
        assert_eq!(layout.total_len(), 4);
    }

    #[test]
    fn small_scene_offsets() {
        let spec = SceneSpec::new(4, 4, 4, vec![ReferenceSpec::new(2, 2, "dog", BoundingBox::full())]);
        let layout = build_layout(&spec).unwrap();
        assert_eq!(layout.text().range(), 0..4);
        assert_eq!(layout.noise().range(), 4..20);
        assert_eq!(layout.reference(0).range(), 20..24);
        assert_eq!(layout.locate(19).unwrap(), (SegmentKind::Noise, 15));
        assert_eq!(layout.locate(20).unwrap(), (SegmentKind::Ref(0), 0));
        assert!(layout.locate(24).is_err());
    }

    #[test]
    fn large_scene_token_counts() {
        let refs = vec![
            ReferenceSpec::new(32, 32, "a", bx(0.0, 0.0, 0.5, 0.5)),
            ReferenceSpec::new(32, 32, "b", bx(0.5, 0.5, 1.0, 1.0)),
        ];
        let layout = build_layout(&SceneSpec::new(512, 64, 64, refs)).unwrap();
        assert_eq!(layout.total_len(), 6656);

        // Two full-size references triple the image-token count.
        let refs = vec![
            ReferenceSpec::new(64, 64, "a", BoundingBox::full()),
            ReferenceSpec::new(64, 64, "b", BoundingBox::full()),
        ];
        let layout = build_layout(&SceneSpec::new(512, 64, 64, refs)).unwrap();
        assert_eq!(layout.total_len() - 512, 3 * 4096);
    }

    #[test]
    fn sequence_limit_enforced() {
        let spec = SceneSpec::new(10, 4, 4, vec![]);
        assert_eq!(build_layout_with_limit(&spec, 25), Err(Error::SequenceTooLong { len: 26, max: 25 }));
        assert!(build_layout_with_limit(&spec, 26).is_ok());
        assert!(matches!(build_layout(&SceneSpec::new(20000, 1, 1, vec![])), Err(Error::SequenceTooLong { .. })));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(build_layout(&SceneSpec::new(0, 0, 4, vec![])), Err(Error::InvalidSpec(_))));
        let r = ReferenceSpec::new(0, 2, "x", BoundingBox::full());
        assert!(matches!(build_layout(&SceneSpec::new(0, 4, 4, vec![r])), Err(Error::InvalidSpec(_))));
        assert!(BoundingBox::new(0.5, 0.0, 0.5, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.2, 1.0, 0.1).is_err());
        assert!(BoundingBox::new(-0.1, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn patch_cells() {
        let layout = build_layout(&SceneSpec::new(0, 4, 4, vec![])).unwrap();
        assert_eq!(patch_cell(&layout, 0).unwrap(), Cell { x0: 0.0, y0: 0.0, x1: 0.25, y1: 0.25 });
        assert_eq!(patch_cell(&layout, 5).unwrap(), Cell { x0: 0.25, y0: 0.25, x1: 0.5, y1: 0.5 });
        assert_eq!(patch_cell(&layout, 16), Err(Error::IndexOutOfRange { index: 16, len: 16 }));

        let one = build_layout(&SceneSpec::new(0, 1, 1, vec![])).unwrap();
        assert_eq!(patch_cell(&one, 0).unwrap(), Cell { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 });
    }

    #[test]
    fn json_round_trip_and_schema() {
        let json = r#"{"text_len":3,"noise_h":2,"noise_w":5,"seed":7,
            "refs":[{"grid_h":1,"grid_w":2,"category":"cat","box":[0.1,0.2,0.30000000000000004,0.9]}]}"#;
        let spec = SceneSpec::from_json(json).unwrap();
        assert_eq!(spec.refs[0].bbox.x_max(), 0.30000000000000004);
        assert_eq!(SceneSpec::from_json(&spec.to_json()).unwrap(), spec);

        let bad = r#"{"text_len":0,"noise_h":2,"noise_w":2,"seed":0,
            "refs":[{"grid_h":1,"grid_w":1,"category":"c","box":[0.5,0.0,0.2,1.0]}]}"#;
        assert!(matches!(SceneSpec::from_json(bad), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn pixel_boxes_normalize() {
        let b = BoundingBox::from_pixels([256.0, 0.0, 512.0, 128.0], 512.0, 512.0).unwrap();
        assert_eq!(b.to_array(), [0.5, 0.0, 1.0, 0.25]);
    }

    prop_compose! {
        fn arb_box()(x0 in 0.0..0.9f64, y0 in 0.0..0.9f64, w in 0.01..1.0f64, h in 0.01..1.0f64) -> BoundingBox {
            bx(x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0))
        }
    }

    prop_compose! {
        fn arb_spec()(
            text_len in 0usize..40,
            noise_h in 1usize..12,
            noise_w in 1usize..12,
            refs in prop::collection::vec((1usize..6, 1usize..6, arb_box()), 0..4),
        ) -> SceneSpec {
            let refs = refs.into_iter().map(|(h, w, b)| ReferenceSpec::new(h, w, "obj", b)).collect();
            SceneSpec::new(text_len, noise_h, noise_w, refs)
        }
    }

    proptest! {
        #[test]
        fn segments_reconstruct_spec(spec in arb_spec()) {
            let layout = build_layout(&spec).unwrap();
            let mut cursor = 0;
            for s in layout.segments() {
                prop_assert_eq!(s.start, cursor);
                cursor = s.end();
            }
            prop_assert_eq!(cursor, layout.total_len());
            prop_assert_eq!(layout.text().len, spec.text_len);
            prop_assert_eq!(layout.noise().len, spec.noise_h * spec.noise_w);
            for (i, r) in spec.refs.iter().enumerate() {
                prop_assert_eq!(layout.reference(i).len, r.grid_h * r.grid_w);
                prop_assert_eq!(layout.reference(i).kind, SegmentKind::Ref(i));
            }
            prop_assert_eq!(build_layout(&spec).unwrap(), layout);
        }

        #[test]
        fn cells_tile_unit_square(h in 1usize..20, w in 1usize..20) {
            let layout = build_layout(&SceneSpec::new(0, h, w, vec![])).unwrap();
            let cells: Vec<Cell> = (0..h * w).map(|n| patch_cell(&layout, n).unwrap()).collect();
            let total: f64 = cells.iter().map(Cell::area).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            // Neighbours share edges exactly: no gaps, no overlap.
            for n in 0..h * w {
                let c = cells[n];
                if n % w + 1 < w {
                    prop_assert_eq!(c.x1, cells[n + 1].x0);
                }
                if n + w < h * w {
                    prop_assert_eq!(c.y1, cells[n + w].y0);
                }
            }
            prop_assert_eq!(cells[0].x0, 0.0);
            prop_assert_eq!(cells[h * w - 1].x1, 1.0);
            prop_assert_eq!(cells[h * w - 1].y1, 1.0);
        }
    }
}
