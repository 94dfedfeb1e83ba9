//! Attention-guided, location-aware region-proposal filtering.
//!
//! A region-proposal tensor holds, for every feature-map location and every
//! anchor, an objectness score followed by four box-regression values. The
//! filter keeps the `n` best-scoring anchors of each location, but only at
//! locations whose attention value passes a threshold condition. Everything
//! else in this module (anchor tiling, regression decoding, NMS, attention
//! downsampling) exists to turn those selected entries into boxes.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{clamp_box, iou, AttentionGrid, AttentionKind, BBox};

/// Width/height log-scale regressions are clipped to this before decoding so
/// that `exp` stays finite.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Default threshold on the attention map.
pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// Default IoU threshold for combining proposal sets.
pub const DEFAULT_NMS_IOU: f64 = 0.7;

/// Region-proposal network output: `h * w` locations, `a` anchors each,
/// five values per entry (objectness, dx, dy, dw, dh).
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalTensor {
    h: usize,
    w: usize,
    a: usize,
    entries: Vec<[f32; 5]>,
}

impl ProposalTensor {
    /// `entries` is location-major, anchor-minor.
    pub fn new(h: usize, w: usize, a: usize, entries: Vec<[f32; 5]>) -> Result<Self> {
        if entries.len() != h * w * a {
            return Err(Error::DimensionMismatch(format!(
                "{h}x{w}x{a} tensor with {} entries",
                entries.len()
            )));
        }
        if a == 0 {
            return Err(Error::DimensionMismatch("tensor has no anchors".into()));
        }
        if entries.iter().any(|e| !e[0].is_finite()) {
            return Err(Error::NonFinite("objectness score"));
        }
        Ok(ProposalTensor { h, w, a, entries })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn anchors(&self) -> usize {
        self.a
    }

    pub fn locations(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[[f32; 5]] {
        &self.entries
    }

    pub fn entry(&self, location: usize, anchor: usize) -> &[f32; 5] {
        &self.entries[location * self.a + anchor]
    }

    pub fn objectness(&self, location: usize, anchor: usize) -> f32 {
        self.entry(location, anchor)[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// value >= threshold
    AtLeast,
    /// value < threshold
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterCondition {
    pub threshold: f64,
    pub direction: Direction,
    pub n: usize,
}

impl FilterCondition {
    pub fn new(threshold: f64, direction: Direction, n: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidValue(format!("threshold {threshold} outside [0, 1]")));
        }
        if n == 0 {
            return Err(Error::InvalidN { n, anchors: 0 });
        }
        Ok(FilterCondition {
            threshold,
            direction,
            n,
        })
    }

    pub fn accepts(&self, value: f32) -> bool {
        let t = self.threshold as f32;
        match self.direction {
            Direction::AtLeast => value >= t,
            Direction::Below => value < t,
        }
    }
}

/// Top-`n` anchor indices for each location, flattened with stride `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionIndex {
    n: usize,
    indices: Vec<usize>,
}

impl SelectionIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn locations(&self) -> usize {
        self.indices.len() / self.n
    }

    pub fn at(&self, location: usize) -> &[usize] {
        &self.indices[location * self.n..(location + 1) * self.n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub sizes: Vec<f64>,
    pub ratios: Vec<f64>,
    pub stride: f64,
}

impl AnchorSpec {
    pub fn new(sizes: Vec<f64>, ratios: Vec<f64>, stride: f64) -> Result<Self> {
        if sizes.is_empty() || ratios.is_empty() {
            return Err(Error::InvalidValue("anchor sizes and ratios must be nonempty".into()));
        }
        if sizes.iter().chain(&ratios).chain([&stride]).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidValue("anchor parameters must be positive".into()));
        }
        Ok(AnchorSpec {
            sizes,
            ratios,
            stride,
        })
    }

    /// Sizes {4, 8, 16, 32} and ratios {0.5, 1, 2} at stride 16.
    pub fn standard() -> Self {
        AnchorSpec {
            sizes: vec![4.0, 8.0, 16.0, 32.0],
            ratios: vec![0.5, 1.0, 2.0],
            stride: 16.0,
        }
    }

    pub fn anchors_per_location(&self) -> usize {
        self.sizes.len() * self.ratios.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub objectness: f64,
    /// (row, col) on the feature map.
    pub source_location: (usize, usize),
    pub anchor: usize,
    pub source_layer: usize,
}

/// For every location, the `n` anchors with the largest objectness in
/// descending order; equal scores keep the lower anchor index first.
pub fn topn_indices(tensor: &ProposalTensor, n: usize) -> Result<SelectionIndex> {
    if n == 0 || n > tensor.a {
        return Err(Error::InvalidN {
            n,
            anchors: tensor.a,
        });
    }
    let mut indices = Vec::with_capacity(tensor.locations() * n);
    let mut order: Vec<usize> = Vec::with_capacity(tensor.a);
    for loc in 0..tensor.locations() {
        order.clear();
        order.extend(0..tensor.a);
        order.sort_by(|&i, &j| {
            let (si, sj) = (tensor.objectness(loc, i), tensor.objectness(loc, j));
            sj.partial_cmp(&si).unwrap_or(Ordering::Equal).then(i.cmp(&j))
        });
        indices.extend_from_slice(&order[..n]);
    }
    Ok(SelectionIndex { n, indices })
}

/// Locations (row-major) whose attention value satisfies `cond`.
pub fn attention_select(
    grid: &AttentionGrid,
    cond: &FilterCondition,
    h: usize,
    w: usize,
) -> Result<Vec<usize>> {
    if grid.height() != h || grid.width() != w {
        return Err(Error::DimensionMismatch(format!(
            "attention {}x{} vs feature map {}x{}",
            grid.height(),
            grid.width(),
            h,
            w
        )));
    }
    Ok(grid
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| cond.accepts(**v))
        .map(|(i, _)| i)
        .collect())
}

/// Anchor boxes for every location, location-major; anchor index is
/// `size_index * ratios.len() + ratio_index`.
pub fn generate_anchors(spec: &AnchorSpec, h: usize, w: usize) -> Vec<BBox> {
    let mut out = Vec::with_capacity(h * w * spec.anchors_per_location());
    for row in 0..h {
        for col in 0..w {
            let cx = (col as f64 + 0.5) * spec.stride;
            let cy = (row as f64 + 0.5) * spec.stride;
            for &size in &spec.sizes {
                for &ratio in &spec.ratios {
                    let root = ratio.sqrt();
                    let bw = size * spec.stride * root;
                    let bh = size * spec.stride / root;
                    out.push(BBox::from_center(cx, cy, bw, bh).expect("anchor parameters are positive"));
                }
            }
        }
    }
    out
}

/// Applies a center-offset / log-size regression to an anchor.
pub fn decode_bbox(anchor: &BBox, regression: [f64; 4]) -> Result<BBox> {
    let (cx, cy) = anchor.center();
    let (w, h) = (anchor.width(), anchor.height());
    let [dx, dy, dw, dh] = regression;
    let ncx = cx + dx * w;
    let ncy = cy + dy * h;
    let nw = w * dw.exp();
    let nh = h * dh.exp();
    if !(ncx.is_finite() && ncy.is_finite() && nw.is_finite() && nh.is_finite()) {
        return Err(Error::NonFinite("decoded box"));
    }
    BBox::from_center(ncx, ncy, nw, nh).map_err(|_| Error::NonFinite("decoded box"))
}

/// Inverse of [`decode_bbox`].
pub fn encode_bbox(anchor: &BBox, target: &BBox) -> [f64; 4] {
    let (ax, ay) = anchor.center();
    let (tx, ty) = target.center();
    [
        (tx - ax) / anchor.width(),
        (ty - ay) / anchor.height(),
        (target.width() / anchor.width()).ln(),
        (target.height() / anchor.height()).ln(),
    ]
}

fn materialize(
    tensor: &ProposalTensor,
    anchors: &[BBox],
    location: usize,
    anchor: usize,
    frame: (f64, f64),
) -> Proposal {
    let e = tensor.entry(location, anchor);
    let reg = [
        e[1] as f64,
        e[2] as f64,
        (e[3] as f64).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
        (e[4] as f64).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
    ];
    let base = anchors[location * tensor.a + anchor];
    let decoded = decode_bbox(&base, reg).unwrap_or(base);
    let bbox = clamp_box(&decoded, frame.0, frame.1).unwrap_or_else(|_| collapse_into(&decoded, frame));
    Proposal {
        bbox,
        objectness: e[0] as f64,
        source_location: (location / tensor.w, location % tensor.w),
        anchor,
        source_layer: 0,
    }
}

/// A box fully outside the frame shrinks to a one-pixel box at the nearest
/// frame position, so every selected entry still yields a proposal.
fn collapse_into(b: &BBox, (fw, fh): (f64, f64)) -> BBox {
    let (cx, cy) = b.center();
    let size_x = fw.min(1.0);
    let size_y = fh.min(1.0);
    let left = (cx - size_x / 2.0).clamp(0.0, fw - size_x);
    let top = (cy - size_y / 2.0).clamp(0.0, fh - size_y);
    BBox::new(left, top, left + size_x, top + size_y).expect("frame has positive size")
}

fn check_anchors(tensor: &ProposalTensor, anchors: &AnchorSpec) -> Result<()> {
    if anchors.anchors_per_location() != tensor.a {
        return Err(Error::DimensionMismatch(format!(
            "anchor spec yields {} anchors, tensor has {}",
            anchors.anchors_per_location(),
            tensor.a
        )));
    }
    Ok(())
}

/// Keeps the top-`n` anchors of every location whose attention satisfies
/// the condition, decoded and clamped to the frame `(width, height)`.
///
/// Output is ordered by location, then by rank within the location.
pub fn filter_proposals(
    tensor: &ProposalTensor,
    grid: &AttentionGrid,
    cond: &FilterCondition,
    anchors: &AnchorSpec,
    frame: (f64, f64),
) -> Result<Vec<Proposal>> {
    check_anchors(tensor, anchors)?;
    let locations = attention_select(grid, cond, tensor.h, tensor.w)?;
    let top = topn_indices(tensor, cond.n)?;
    let boxes = generate_anchors(anchors, tensor.h, tensor.w);
    let mut out = Vec::with_capacity(locations.len() * cond.n);
    for loc in locations {
        for &anchor in top.at(loc) {
            out.push(materialize(tensor, &boxes, loc, anchor, frame));
        }
    }
    Ok(out)
}

/// Parameters of the two-branch training-time filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedFilter {
    pub threshold: f64,
    /// top-n where attention >= threshold
    pub n_attended: usize,
    /// top-n where attention < threshold
    pub n_unattended: usize,
}

impl Default for CombinedFilter {
    fn default() -> Self {
        CombinedFilter {
            threshold: DEFAULT_THRESHOLD,
            n_attended: 4,
            n_unattended: 2,
        }
    }
}

/// Union of the attended and unattended branches. The two conditions
/// partition the locations, so the union has no duplicates.
pub fn combine_filters(
    tensor: &ProposalTensor,
    grid: &AttentionGrid,
    anchors: &AnchorSpec,
    frame: (f64, f64),
    params: &CombinedFilter,
) -> Result<Vec<Proposal>> {
    let high = FilterCondition::new(params.threshold, Direction::AtLeast, params.n_attended)?;
    let low = FilterCondition::new(params.threshold, Direction::Below, params.n_unattended)?;
    let mut out = filter_proposals(tensor, grid, &high, anchors, frame)?;
    out.extend(filter_proposals(tensor, grid, &low, anchors, frame)?);
    Ok(out)
}

/// Fraction of all tensor entries that survived filtering.
pub fn proposal_fraction(kept: usize, tensor: &ProposalTensor) -> f64 {
    if tensor.is_empty() {
        0.0
    } else {
        kept as f64 / tensor.len() as f64
    }
}

/// Greedy non-maximum suppression. A proposal is dropped when its IoU with
/// an already kept, higher-scored proposal is at least `iou_threshold`.
/// Equal scores keep their input order.
pub fn nms(proposals: &[Proposal], iou_threshold: f64) -> Vec<Proposal> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&i, &j| {
        proposals[j]
            .objectness
            .partial_cmp(&proposals[i].objectness)
            .unwrap_or(Ordering::Equal)
    });
    let mut kept: Vec<Proposal> = Vec::new();
    for i in order {
        let candidate = &proposals[i];
        if kept.iter().all(|k| iou(&k.bbox, &candidate.bbox) < iou_threshold) {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// Block-max downsampling of an image-resolution map to `h x w`.
///
/// Cell `(r, c)` covers source rows `floor(r*H/h) .. ceil((r+1)*H/h)` and
/// the analogous columns, so non-divisible sizes overlap by at most a pixel.
pub fn downsample_attention(grid: &AttentionGrid, h: usize, w: usize) -> Result<AttentionGrid> {
    let (sh, sw) = (grid.height(), grid.width());
    if h == 0 || w == 0 || sh < h || sw < w {
        return Err(Error::DimensionMismatch(format!(
            "cannot downsample {sh}x{sw} to {h}x{w}"
        )));
    }
    let span = |i: usize, dst: usize, src: usize| (i * src / dst, ((i + 1) * src).div_ceil(dst));
    let mut values = Vec::with_capacity(h * w);
    for r in 0..h {
        let (r0, r1) = span(r, h, sh);
        for c in 0..w {
            let (c0, c1) = span(c, w, sw);
            let mut m = 0.0f32;
            for y in r0..r1 {
                for x in c0..c1 {
                    m = m.max(grid.get(x, y));
                }
            }
            values.push(m);
        }
    }
    AttentionGrid::new(w, h, values, grid.kind())
}

/// Convenience for callers that only have a threshold and a map.
pub fn attended_fraction(grid: &AttentionGrid, threshold: f64) -> f64 {
    let t = threshold as f32;
    let n = grid.values().iter().filter(|v| **v >= t).count();
    n as f64 / grid.values().len().max(1) as f64
}

/// Uniform map, handy for "no attention" baselines.
pub fn saturated_grid(h: usize, w: usize) -> AttentionGrid {
    AttentionGrid::filled(w, h, 1.0, AttentionKind::Objectness).expect("valid dimensions")
}
