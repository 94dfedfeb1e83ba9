//! Per-frame tracking pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::appearance::{temporal_update, AppearanceHistogram, TemporalHistogram};
use crate::association::{
    build_cost, detection_histograms, hungarian, lifecycle_step, CostMatrix, IdAllocator, Track, TrackId,
};
use crate::error::{Error, Result};
use crate::model::{BBox, ClassLabel, Detection, FrameObservation};

use super::config::TrackerConfig;
use super::kalman::{measurement_of, KalmanModel};
use super::particles::{birth, phd_cardinality, residual_resample, update, MotionEstimate};
use super::predict::{predict, PredictCues};
use super::refine::{attention_refine, AttentionIndex, RefineOutcome};

/// One reported box for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub frame: usize,
    pub track_id: TrackId,
    pub class_label: ClassLabel,
    pub bbox: BBox,
    pub score: f64,
    /// Reported from the prediction alone (no detection this frame).
    pub coasting: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cue {
    /// No attention for this frame, or refinement disabled.
    None,
    Refined(RefineOutcome),
}

/// Modified particle-PHD tracker. Owns its random source; one instance per
/// sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    rng: ChaCha8Rng,
    tracks: Vec<Track>,
    ids: IdAllocator,
    last_frame: Option<usize>,
    terminated: Vec<TrackId>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tracker {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            tracks: Vec::new(),
            ids: IdAllocator::default(),
            last_frame: None,
            terminated: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Identities of every track terminated so far, in order.
    pub fn terminated(&self) -> &[TrackId] {
        &self.terminated
    }

    /// Expected number of targets under the current intensity.
    pub fn cardinality(&self) -> f64 {
        phd_cardinality(self.tracks.iter().map(|t| &t.particles))
    }

    /// Advances by one frame and returns the boxes reported for it, ordered
    /// by track identity.
    pub fn step_frame(&mut self, obs: &FrameObservation) -> Result<Vec<TrackOutput>> {
        if let Some(prev) = self.last_frame {
            if obs.frame_index != prev + 1 {
                return Err(Error::InvalidValue(format!(
                    "frame {} does not follow frame {prev}",
                    obs.frame_index
                )));
            }
        }
        if let Some(d) = obs.detections.iter().find(|d| d.frame_index != obs.frame_index) {
            return Err(Error::InvalidValue(format!(
                "detection for frame {} in observation of frame {}",
                d.frame_index, obs.frame_index
            )));
        }
        self.last_frame = Some(obs.frame_index);

        let image = obs.image.as_deref();
        let attention = obs.attention.as_deref().filter(|_| self.config.use_attention);
        if let (Some(grid), Some(img)) = (attention, image) {
            if grid.width() != img.width() as usize || grid.height() != img.height() as usize {
                return Err(Error::DimensionMismatch(format!(
                    "attention {}x{} vs image {}x{}",
                    grid.width(),
                    grid.height(),
                    img.width(),
                    img.height()
                )));
            }
        }
        let index = attention.map(|g| AttentionIndex::new(g, self.config.tau_bin));

        // Predict and refine.
        let mut cues = Vec::with_capacity(self.tracks.len());
        for track in &mut self.tracks {
            track.kalman = self.config.kalman.predict(&track.kalman);
            let last = track.last_box();
            let predict_cues = PredictCues {
                appearance: track.appearance.as_ref(),
                image,
                attention: index.as_ref(),
            };
            let predicted = predict(
                &mut track.particles,
                track.kalman.velocity(),
                &last,
                &predict_cues,
                &self.config.blend,
            )
            .unwrap_or_else(|| track.kalman.to_bbox());
            let cue = match &index {
                Some(idx) if self.config.refine_enabled => {
                    Cue::Refined(attention_refine(&predicted, idx, &self.config.refine))
                }
                _ => Cue::None,
            };
            track.predicted = match cue {
                Cue::Refined(RefineOutcome::Corrected(b)) => b,
                Cue::Refined(RefineOutcome::Reject) => track.kalman.to_bbox(),
                _ => predicted,
            };
            cues.push(cue);
        }

        // Associate.
        let histograms = detection_histograms(&obs.detections, image)?;
        let costs = build_cost(&self.tracks, &obs.detections, histograms.as_deref())?;
        let costs = separate_classes(&costs, &self.tracks, &obs.detections)?;
        let assignment = hungarian(&costs, self.config.gate);

        // Measurement update for existing tracks.
        for (t, track) in self.tracks.iter_mut().enumerate() {
            match assignment.detection_for(t) {
                Some(d) => {
                    let det = &obs.detections[d];
                    correct_toward(&self.config.kalman, track, &det.bbox)?;
                    update(&mut track.particles, Some(&det.bbox), self.config.lambda_iou, 1.0);
                    if let Some(h) = histograms.as_ref().map(|hs| &hs[d]) {
                        track.appearance = Some(match &track.appearance {
                            Some(prev) => temporal_update(prev, h, self.config.histogram_alpha),
                            None => TemporalHistogram::new(h.clone()),
                        });
                    }
                }
                None => {
                    update(&mut track.particles, None, self.config.lambda_iou, self.config.survival);
                    if let Cue::Refined(RefineOutcome::Corrected(b)) = cues[t] {
                        correct_toward(&self.config.kalman, track, &b)?;
                    }
                }
            }
        }

        // Coasting output is decided before the lifecycle reshuffles indices.
        let mut coasting: Vec<(TrackId, BBox)> = Vec::new();
        for &t in &assignment.unmatched_tracks {
            if let Cue::Refined(RefineOutcome::Keep | RefineOutcome::Corrected(_)) = cues[t] {
                coasting.push((self.tracks[t].id, self.tracks[t].predicted));
            }
        }
        let matched: Vec<(TrackId, usize)> = assignment
            .pairs
            .iter()
            .map(|&(t, d)| (self.tracks[t].id, d))
            .collect();

        let config = &self.config;
        let rng = &mut self.rng;
        let frame = obs.frame_index;
        let newborn_hist = |d: usize| histograms.as_ref().map(|hs| hs[d].clone());
        let mut newborn_order = assignment.unmatched_detections.iter();
        let terminated = lifecycle_step(
            &mut self.tracks,
            &assignment,
            &obs.detections,
            frame,
            config.max_misses,
            &mut self.ids,
            |id, det| {
                let d = *newborn_order.next().expect("one spawn per unmatched detection");
                spawn(config, rng, id, det, newborn_hist(d))
            },
        );
        self.terminated.extend(terminated.iter().map(|t| t.id));

        // Resample the survivors that existed before this frame.
        let born = assignment.unmatched_detections.len();
        let survivors = self.tracks.len() - born;
        for track in self.tracks.iter_mut().take(survivors) {
            let [vx, vy, _, _] = track.kalman.velocity();
            let motion = MotionEstimate::from_velocity(vx, vy);
            track.particles =
                residual_resample(&track.particles, &motion, &config.resample, config.particles, rng)?.set;
        }

        // Report.
        let mut out = Vec::new();
        for track in &self.tracks {
            let det = matched
                .iter()
                .find(|(id, _)| *id == track.id)
                .map(|(_, d)| &obs.detections[*d]);
            if let Some(det) = det {
                out.push(report(frame, track, det.bbox, det.score(), false));
            } else if track.history.len() == 1 && track.history[0].0 == frame {
                out.push(report(frame, track, track.history[0].1, track.last_score, false));
            } else if let Some((_, b)) = coasting.iter().find(|(id, _)| *id == track.id) {
                out.push(report(frame, track, *b, track.last_score, true));
            }
        }
        out.sort_by_key(|o| o.track_id);
        Ok(out)
    }

    /// Runs a whole sequence, returning every frame's output in order.
    pub fn run<'a>(&mut self, frames: impl IntoIterator<Item = &'a FrameObservation>) -> Result<Vec<TrackOutput>> {
        let mut all = Vec::new();
        for obs in frames {
            all.extend(self.step_frame(obs)?);
        }
        Ok(all)
    }
}

fn report(frame: usize, track: &Track, bbox: BBox, score: f64, coasting: bool) -> TrackOutput {
    TrackOutput {
        frame,
        track_id: track.id,
        class_label: track.class_label,
        bbox,
        score,
        coasting,
    }
}

/// Kalman correction toward `z`, with each particle pulled toward `z` by the
/// per-component gain.
fn correct_toward(model: &KalmanModel, track: &mut Track, z: &BBox) -> Result<()> {
    let gain = model.gain(&track.kalman)?;
    track.kalman = model.correct(&track.kalman, z)?;
    let target = measurement_of(z);
    for p in &mut track.particles.particles {
        let m = measurement_of(&p.state);
        let pulled: Vec<f64> = (0..4).map(|i| m[i] + gain[(i, i)] * (target[i] - m[i])).collect();
        if let Ok(b) = BBox::from_center(pulled[0], pulled[1], pulled[2].max(1e-3), pulled[3].max(1e-3)) {
            p.state = b;
        }
    }
    Ok(())
}

/// Tracks never match detections of another class.
fn separate_classes(costs: &CostMatrix, tracks: &[Track], detections: &[Detection]) -> Result<CostMatrix> {
    let mut data = Vec::with_capacity(costs.rows() * costs.cols());
    for (t, track) in tracks.iter().enumerate() {
        for (d, det) in detections.iter().enumerate() {
            data.push(if track.class_label == det.class_label {
                costs.get(t, d)
            } else {
                1.0
            });
        }
    }
    CostMatrix::new(costs.rows(), costs.cols(), data)
}

fn spawn(
    config: &TrackerConfig,
    rng: &mut ChaCha8Rng,
    id: TrackId,
    det: &Detection,
    histogram: Option<AppearanceHistogram>,
) -> Track {
    Track {
        id,
        class_label: det.class_label,
        history: vec![(det.frame_index, det.bbox)],
        appearance: histogram.map(TemporalHistogram::new),
        kalman: config.kalman.initiate(&det.bbox),
        particles: birth(&det.bbox, config.particles, &config.birth, id, rng),
        misses: 0,
        predicted: det.bbox,
        last_score: det.score(),
    }
}
