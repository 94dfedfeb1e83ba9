//! Modified sequential Monte Carlo PHD tracker.
//!
//! Each track carries a weighted particle set (its share of the PHD
//! intensity) and a constant-velocity Kalman filter. Per frame: particles are
//! propagated and scored against overlap, appearance and attention; the
//! heaviest particle is the prediction; attention occupancy may correct or
//! reject it; tracks and detections are associated; matched tracks get a
//! likelihood update plus a Kalman-gain pull toward the measurement; finally
//! particles are residual-resampled with a bias along the motion.

mod config;
mod kalman;
mod particles;
mod predict;
mod refine;
mod tracker;

pub use config::TrackerConfig;
pub use kalman::{kalman_correct, measurement_of, KalmanModel, KalmanState, StateMatrix, StateVector};
pub use particles::{
    apportion, birth, phd_cardinality, residual_counts, residual_resample, update, BirthParams, Heading,
    MotionEstimate, Particle, ParticleSet, ResampleParams, Resampled, DEFAULT_LAMBDA, DEFAULT_PARTICLES,
    DEFAULT_SURVIVAL,
};
pub use predict::{predict, PredictCues, ScoreBlend};
pub use refine::{attention_refine, AttentionIndex, RefineOutcome, RefineParams, DEFAULT_OCCUPANCY, DEFAULT_TAU_BIN};
pub use tracker::{TrackOutput, Tracker};
