//! Particle propagation and scoring.

use image::RgbImage;

use crate::appearance::{bhattacharyya, hs_histogram, TemporalHistogram};
use crate::model::{clamp_box, iou, BBox};

use super::particles::ParticleSet;
use super::refine::AttentionIndex;

/// Relative weight of the overlap, appearance and attention terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBlend {
    pub iou: f64,
    pub appearance: f64,
    pub attention: f64,
}

impl Default for ScoreBlend {
    fn default() -> Self {
        ScoreBlend {
            iou: 0.4,
            appearance: 0.3,
            attention: 0.3,
        }
    }
}

/// Optional cues available for the current frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct PredictCues<'a> {
    pub appearance: Option<&'a TemporalHistogram>,
    pub image: Option<&'a RgbImage>,
    pub attention: Option<&'a AttentionIndex<'a>>,
}

/// Moves every particle by `velocity` (`[vcx, vcy, vw, vh]`), multiplies
/// its weight by the blended score and returns the heaviest particle's box.
///
/// The score is
/// `iou_w * IoU(particle, last_box) + app_w * (1 - Bhattacharyya) + att_w * mean attention`.
/// Terms whose cue is missing drop out and the
/// remaining blend weights are rescaled to the same total. The set keeps
/// its mass.
pub fn predict(
    set: &mut ParticleSet,
    velocity: [f64; 4],
    last_box: &BBox,
    cues: &PredictCues<'_>,
    blend: &ScoreBlend,
) -> Option<BBox> {
    let [vx, vy, vw, vh] = velocity;
    for p in &mut set.particles {
        let (cx, cy) = p.state.center();
        let w = (p.state.width() + vw).max(0.5 * p.state.width());
        let h = (p.state.height() + vh).max(0.5 * p.state.height());
        if let Ok(moved) = BBox::from_center(cx + vx, cy + vy, w, h) {
            p.state = moved;
        }
    }

    let appearance = match (cues.appearance, cues.image) {
        (Some(t), Some(img)) => Some((t, img)),
        _ => None,
    };
    let full = blend.iou + blend.appearance + blend.attention;
    let mut wi = blend.iou;
    let mut wa = if appearance.is_some() { blend.appearance } else { 0.0 };
    let mut wm = if cues.attention.is_some() { blend.attention } else { 0.0 };
    let present = wi + wa + wm;
    if present > 0.0 {
        let f = full / present;
        wi *= f;
        wa *= f;
        wm *= f;
    }

    let mass = set.mass();
    let scores: Vec<f64> = set
        .particles
        .iter()
        .map(|p| {
            let mut s = wi * iou(&p.state, last_box);
            if let Some((temporal, img)) = appearance {
                let similarity = clamp_box(&p.state, img.width() as f64, img.height() as f64)
                    .ok()
                    .and_then(|r| hs_histogram(img, &r).ok())
                    .and_then(|h| bhattacharyya(&temporal.histogram, &h).ok())
                    .map_or(0.0, |d| 1.0 - d);
                s += wa * similarity;
            }
            if let Some(index) = cues.attention {
                s += wm * index.mean(&p.state);
            }
            s
        })
        .collect();
    let scored_mass: f64 = set.particles.iter().zip(&scores).map(|(p, s)| p.weight * s).sum();
    if scored_mass > 0.0 && scored_mass.is_finite() {
        for (p, s) in set.particles.iter_mut().zip(&scores) {
            p.weight *= s * mass / scored_mass;
        }
    }
    set.argmax().map(|i| set.particles[i].state)
}
