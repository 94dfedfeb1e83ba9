//! Attention-occupancy check on predicted boxes.
//!
//! Pixels are unit cells; a pixel belongs to a box when its center lies
//! inside it.

use crate::model::{AttentionGrid, BBox};

pub const DEFAULT_TAU_BIN: f64 = 0.4;
pub const DEFAULT_OCCUPANCY: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    /// Predictions with occupancy below this are corrected or rejected.
    pub occupancy_threshold: f64,
    /// Search window for corrections, as a multiple of the predicted size.
    pub window_scale: f64,
    /// Corrected width/height stays within this fraction of the prediction.
    pub size_tolerance: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            occupancy_threshold: DEFAULT_OCCUPANCY,
            window_scale: 1.5,
            size_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefineOutcome {
    Keep,
    Corrected(BBox),
    Reject,
}

/// Summed-area tables over an attention grid, for O(1) box queries.
#[derive(Debug, Clone)]
pub struct AttentionIndex<'a> {
    grid: &'a AttentionGrid,
    tau_bin: f32,
    sum: Vec<f64>,
    active: Vec<u32>,
}

impl<'a> AttentionIndex<'a> {
    pub fn new(grid: &'a AttentionGrid, tau_bin: f64) -> Self {
        let (w, h) = (grid.width(), grid.height());
        let tau = tau_bin as f32;
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut active = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0.0;
            let mut row_active = 0u32;
            for x in 0..w {
                let v = grid.get(x, y);
                row_sum += v as f64;
                row_active += (v >= tau) as u32;
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row_sum;
                active[i] = active[i - stride] + row_active;
            }
        }
        AttentionIndex {
            grid,
            tau_bin: tau,
            sum,
            active,
        }
    }

    pub fn grid(&self) -> &AttentionGrid {
        self.grid
    }

    fn stride(&self) -> usize {
        self.grid.width() + 1
    }

    /// Pixel ranges covered by `b`, unclipped and clipped to the grid.
    fn spans(&self, b: &BBox) -> (i64, i64, (usize, usize, usize, usize)) {
        let first = |lo: f64| (lo - 0.5).ceil() as i64;
        let (x0, x1) = (first(b.left()), first(b.right()));
        let (y0, y1) = (first(b.top()), first(b.bottom()));
        let clip = |v: i64, len: usize| v.clamp(0, len as i64) as usize;
        let (w, h) = (self.grid.width(), self.grid.height());
        (
            (x1 - x0).max(0),
            (y1 - y0).max(0),
            (clip(x0, w), clip(x1, w), clip(y0, h), clip(y1, h)),
        )
    }

    fn rect<T>(&self, table: &[T], (x0, x1, y0, y1): (usize, usize, usize, usize)) -> T
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + Default,
    {
        if x0 >= x1 || y0 >= y1 {
            return T::default();
        }
        let s = self.stride();
        table[y1 * s + x1] + table[y0 * s + x0] - table[y0 * s + x1] - table[y1 * s + x0]
    }

    /// Pixels of `b` (including any outside the grid) and how many of them
    /// are active.
    pub fn counts(&self, b: &BBox) -> (u64, u64) {
        let (nx, ny, clipped) = self.spans(b);
        (nx as u64 * ny as u64, self.rect(&self.active, clipped) as u64)
    }

    /// Fraction of the box's pixels whose attention is at least `tau_bin`.
    pub fn occupancy(&self, b: &BBox) -> f64 {
        let (total, active) = self.counts(b);
        if total == 0 {
            0.0
        } else {
            active as f64 / total as f64
        }
    }

    /// Mean attention over the box; pixels outside the grid count as zero.
    pub fn mean(&self, b: &BBox) -> f64 {
        let (nx, ny, clipped) = self.spans(b);
        let total = nx * ny;
        if total == 0 {
            0.0
        } else {
            self.rect(&self.sum, clipped) / total as f64
        }
    }

    /// Tightest pixel-aligned box around the active pixels inside `window`.
    pub fn active_bounds(&self, window: &BBox) -> Option<BBox> {
        let (_, _, (x0, x1, y0, y1)) = self.spans(window);
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in y0..y1 {
            for x in x0..x1 {
                if self.grid.get(x, y) >= self.tau_bin {
                    bounds = Some(match bounds {
                        None => (x, x, y, y),
                        Some((a, b, c, d)) => (a.min(x), b.max(x), c.min(y), d.max(y)),
                    });
                }
            }
        }
        bounds.map(|(l, r, t, b)| {
            BBox::new(l as f64, t as f64, (r + 1) as f64, (b + 1) as f64).expect("nonempty bounds")
        })
    }
}

/// Checks how much of `predicted` is covered by attention.
///
/// Occupancy at or above the threshold keeps the prediction; zero occupancy
/// rejects it; anything in between re-centres the box on the attention
/// inside a widened search window, with its size held near the prediction.
pub fn attention_refine(predicted: &BBox, index: &AttentionIndex<'_>, params: &RefineParams) -> RefineOutcome {
    let occupancy = index.occupancy(predicted);
    if occupancy >= params.occupancy_threshold {
        return RefineOutcome::Keep;
    }
    if occupancy <= 0.0 {
        return RefineOutcome::Reject;
    }
    let (cx, cy) = predicted.center();
    let (pw, ph) = (predicted.width(), predicted.height());
    let window = BBox::from_center(cx, cy, pw * params.window_scale, ph * params.window_scale)
        .expect("scaled prediction is valid");
    let Some(tight) = index.active_bounds(&window) else {
        return RefineOutcome::Reject;
    };
    let tol = params.size_tolerance;
    let w = tight.width().clamp(pw * (1.0 - tol), pw * (1.0 + tol));
    let h = tight.height().clamp(ph * (1.0 - tol), ph * (1.0 + tol));
    let (tx, ty) = tight.center();
    RefineOutcome::Corrected(BBox::from_center(tx, ty, w, h).expect("positive size"))
}
