//! Geometric and observation types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;

use crate::error::{Error, Result};

/// Axis-aligned box in continuous pixel coordinates.
///
/// Area is `(right - left) * (bottom - top)` with no +1 pixel correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    left: f64,
    top: f64,
    right: f64,
    bottom: f64,
}

impl BBox {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        let finite = left.is_finite() && top.is_finite() && right.is_finite() && bottom.is_finite();
        if !finite || left >= right || top >= bottom {
            return Err(Error::InvalidBox {
                left,
                top,
                right,
                bottom,
            });
        }
        Ok(BBox {
            left,
            top,
            right,
            bottom,
        })
    }

    /// Box from center and size.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        BBox::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn top(&self) -> f64 {
        self.top
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn bottom(&self) -> f64 {
        self.bottom
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        box_center(self)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        BBox::new(
            self.left + dx,
            self.top + dy,
            self.right + dx,
            self.bottom + dy,
        )
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.left, self.top, self.right, self.bottom]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.left, self.top, self.right, self.bottom
        )
    }
}

/// Intersection over union of two boxes, 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let ih = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(1.0)
}

pub fn box_center(b: &BBox) -> (f64, f64) {
    ((b.left + b.right) / 2.0, (b.top + b.bottom) / 2.0)
}

/// Intersects `b` with the frame `[0, width] x [0, height]`.
pub fn clamp_box(b: &BBox, width: f64, height: f64) -> Result<BBox> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidValue(format!(
            "frame size {width}x{height} must be positive"
        )));
    }
    let left = b.left.max(0.0);
    let top = b.top.max(0.0);
    let right = b.right.min(width);
    let bottom = b.bottom.min(height);
    if left >= right || top >= bottom {
        return Err(Error::DegenerateBox { width, height });
    }
    Ok(BBox {
        left,
        top,
        right,
        bottom,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Car,
    Pedestrian,
    Cyclist,
    Other,
}

impl ClassLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::Car => "Car",
            ClassLabel::Pedestrian => "Pedestrian",
            ClassLabel::Cyclist => "Cyclist",
            ClassLabel::Other => "Other",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    /// Accepts the four canonical names case-insensitively; KITTI's other
    /// object types (Van, Truck, Tram, ...) map to `Other`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(ClassLabel::Car),
            "pedestrian" => Ok(ClassLabel::Pedestrian),
            "cyclist" => Ok(ClassLabel::Cyclist),
            "" => Err(Error::InvalidValue("empty class label".into())),
            _ => Ok(ClassLabel::Other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_index: usize,
    pub class_label: ClassLabel,
    pub bbox: BBox,
    score: f64,
}

impl Detection {
    pub fn new(frame_index: usize, class_label: ClassLabel, bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidValue(format!("score {score} outside [0, 1]")));
        }
        Ok(Detection {
            frame_index,
            class_label,
            bbox,
            score,
        })
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Objectness,
    Subjectness,
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objectness" => Ok(AttentionKind::Objectness),
            "subjectness" | "saliency" => Ok(AttentionKind::Subjectness),
            other => Err(Error::InvalidValue(format!("unknown attention kind {other:?}"))),
        }
    }
}

/// Row-major scalar map with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrid {
    width: usize,
    height: usize,
    values: Vec<f32>,
    kind: AttentionKind,
}

impl AttentionGrid {
    pub fn new(width: usize, height: usize, values: Vec<f32>, kind: AttentionKind) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} grid with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!("attention value {v} outside [0, 1]")));
        }
        Ok(AttentionGrid {
            width,
            height,
            values,
            kind,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32, kind: AttentionKind) -> Result<Self> {
        AttentionGrid::new(width, height, vec![value; width * height], kind)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> AttentionKind {
        self.kind
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Everything the tracker receives for one frame.
#[derive(Debug, Clone, Default)]
pub struct FrameObservation {
    pub frame_index: usize,
    pub detections: Vec<Detection>,
    pub attention: Option<Arc<AttentionGrid>>,
    pub image: Option<Arc<RgbImage>>,
}

impl FrameObservation {
    pub fn new(frame_index: usize, detections: Vec<Detection>) -> Result<Self> {
        if let Some(d) = detections.iter().find(|d| d.frame_index != frame_index) {
            return Err(Error::InvalidValue(format!(
                "detection for frame {} in observation of frame {frame_index}",
                d.frame_index
            )));
        }
        Ok(FrameObservation {
            frame_index,
            detections,
            attention: None,
            image: None,
        })
    }

    pub fn with_attention(mut self, grid: Arc<AttentionGrid>) -> Self {
        self.attention = Some(grid);
        self
    }

    pub fn with_image(mut self, image: Arc<RgbImage>) -> Self {
        self.image = Some(image);
        self
    }
}
