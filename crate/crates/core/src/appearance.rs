//! Hue/saturation colour histograms and the Bhattacharyya distance.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::model::BBox;

pub const HUE_BINS: usize = 50;
pub const SAT_BINS: usize = 60;
pub const BINS: usize = HUE_BINS + SAT_BINS;

/// Below this saturation the hue is unstable and goes to bin 0.
pub const MIN_SATURATION_FOR_HUE: f64 = 0.05;

/// Default exponential-moving-average rate for temporal histograms.
pub const DEFAULT_ALPHA: f64 = 0.3;

const NORM_TOLERANCE: f64 = 1e-6;

/// Standard hexcone RGB → HSV. Hue in degrees `[0, 360)`, saturation and
/// value in `[0, 1]`.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h >= 360.0 { h - 360.0 } else { h };
    (h, s, max)
}

/// Hue and saturation bin of one pixel.
pub fn hs_bins(r: u8, g: u8, b: u8) -> (usize, usize) {
    let (h, s, _) = rgb_to_hsv(r, g, b);
    let hue_bin = if s < MIN_SATURATION_FOR_HUE {
        0
    } else {
        ((h / (360.0 / HUE_BINS as f64)) as usize).min(HUE_BINS - 1)
    };
    let sat_bin = ((s * SAT_BINS as f64) as usize).min(SAT_BINS - 1);
    (hue_bin, sat_bin)
}

/// 50 hue bins followed by 60 saturation bins, each segment summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceHistogram {
    bins: Vec<f64>,
}

impl AppearanceHistogram {
    pub fn from_bins(bins: Vec<f64>) -> Result<Self> {
        if bins.len() != BINS {
            return Err(Error::DimensionMismatch(format!(
                "histogram has {} bins, expected {BINS}",
                bins.len()
            )));
        }
        if bins.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::NonNormalized(f64::NAN));
        }
        let h = AppearanceHistogram { bins };
        h.check_normalized()?;
        Ok(h)
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn hue(&self) -> &[f64] {
        &self.bins[..HUE_BINS]
    }

    pub fn saturation(&self) -> &[f64] {
        &self.bins[HUE_BINS..]
    }

    fn check_normalized(&self) -> Result<()> {
        for sum in [self.hue().iter().sum::<f64>(), self.saturation().iter().sum::<f64>()] {
            if (sum - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NonNormalized(sum));
            }
        }
        Ok(())
    }

    fn normalize_segments(bins: &mut [f64]) {
        let (hue, sat) = bins.split_at_mut(HUE_BINS);
        for seg in [hue, sat] {
            let s: f64 = seg.iter().sum();
            if s > 0.0 {
                seg.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
}

/// Histogram of the pixels whose centers fall inside `region`.
pub fn hs_histogram(image: &RgbImage, region: &BBox) -> Result<AppearanceHistogram> {
    let (x0, x1) = pixel_span(region.left(), region.right(), image.width());
    let (y0, y1) = pixel_span(region.top(), region.bottom(), image.height());
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::DegenerateRegion);
    }
    let mut bins = vec![0.0; BINS];
    for y in y0..y1 {
        for x in x0..x1 {
            let p = image.get_pixel(x, y).0;
            let (hb, sb) = hs_bins(p[0], p[1], p[2]);
            bins[hb] += 1.0;
            bins[HUE_BINS + sb] += 1.0;
        }
    }
    AppearanceHistogram::normalize_segments(&mut bins);
    Ok(AppearanceHistogram { bins })
}

/// Pixel indices `i` with `lo <= i + 0.5 < hi`, clipped to `[0, len)`.
pub(crate) fn pixel_span(lo: f64, hi: f64, len: u32) -> (u32, u32) {
    let start = (lo - 0.5).ceil().max(0.0);
    let end = (hi - 0.5).ceil().max(0.0);
    let clip = |v: f64| (v as u64).min(len as u64) as u32;
    (clip(start), clip(end))
}

/// Bhattacharyya distance in the image-histogram form
/// `sqrt(1 - sum(sqrt(a_i * b_i)) / sqrt(mean(a) * mean(b) * N^2))`,
/// for arbitrary non-negative histograms of equal length.
pub fn bhattacharyya_raw(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "histogram lengths differ");
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let denom = (mean_a * mean_b * n * n).sqrt();
    if denom == 0.0 {
        return 1.0;
    }
    let overlap: f64 = a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).sum();
    (1.0 - overlap / denom).max(0.0).sqrt().min(1.0)
}

pub fn bhattacharyya(a: &AppearanceHistogram, b: &AppearanceHistogram) -> Result<f64> {
    a.check_normalized()?;
    b.check_normalized()?;
    Ok(bhattacharyya_raw(&a.bins, &b.bins))
}

/// Appearance accumulated over a track's history.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalHistogram {
    pub histogram: AppearanceHistogram,
    pub sample_count: usize,
}

impl TemporalHistogram {
    pub fn new(first: AppearanceHistogram) -> Self {
        TemporalHistogram {
            histogram: first,
            sample_count: 1,
        }
    }
}

/// Exponential moving average `(1 - alpha) * old + alpha * new`, renormalized
/// per segment.
pub fn temporal_update(
    t: &TemporalHistogram,
    new: &AppearanceHistogram,
    alpha: f64,
) -> TemporalHistogram {
    let alpha = alpha.clamp(0.0, 1.0);
    let mut bins: Vec<f64> = t
        .histogram
        .bins
        .iter()
        .zip(&new.bins)
        .map(|(o, n)| (1.0 - alpha) * o + alpha * n)
        .collect();
    AppearanceHistogram::normalize_segments(&mut bins);
    TemporalHistogram {
        histogram: AppearanceHistogram { bins },
        sample_count: t.sample_count + 1,
    }
}
