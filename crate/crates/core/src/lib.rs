//! Attention-guided region-proposal filtering and a modified particle-PHD
//! multi-object tracker, with CLEAR-MOT evaluation and synthetic scenarios.

pub mod appearance;
pub mod association;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod phd;
pub mod rpfilter;
pub mod synth;

pub use error::{Error, Result};
pub use model::{iou, AttentionGrid, AttentionKind, BBox, ClassLabel, Detection, FrameObservation};
pub use phd::{TrackOutput, Tracker, TrackerConfig};
