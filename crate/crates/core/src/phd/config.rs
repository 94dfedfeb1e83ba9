//! Tracker configuration and its `key = value` file format.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::association::{DEFAULT_GATE, DEFAULT_MAX_MISSES};
use crate::error::{Error, Result};

use super::kalman::KalmanModel;
use super::particles::{BirthParams, ResampleParams, DEFAULT_LAMBDA, DEFAULT_PARTICLES, DEFAULT_SURVIVAL};
use super::predict::ScoreBlend;
use super::refine::{RefineParams, DEFAULT_TAU_BIN};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub particles: usize,
    pub survival: f64,
    pub lambda_iou: f64,
    pub blend: ScoreBlend,
    pub birth: BirthParams,
    pub resample: ResampleParams,
    pub kalman: KalmanModel,
    pub refine: RefineParams,
    pub refine_enabled: bool,
    pub use_attention: bool,
    pub tau_bin: f64,
    pub gate: f64,
    pub max_misses: u32,
    pub histogram_alpha: f64,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            particles: DEFAULT_PARTICLES,
            survival: DEFAULT_SURVIVAL,
            lambda_iou: DEFAULT_LAMBDA,
            blend: ScoreBlend::default(),
            birth: BirthParams::default(),
            resample: ResampleParams::default(),
            kalman: KalmanModel::default(),
            refine: RefineParams::default(),
            refine_enabled: true,
            use_attention: true,
            tau_bin: DEFAULT_TAU_BIN,
            gate: DEFAULT_GATE,
            max_misses: DEFAULT_MAX_MISSES,
            histogram_alpha: crate::appearance::DEFAULT_ALPHA,
            seed: 0,
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ : $ty:ty),* $(,)?) => {
        const KEYS: &[&str] = &[$($key),*];

        impl TrackerConfig {
            fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = value.parse::<$ty>().map_err(|_| {
                            Error::Config(format!("line {line}: invalid value {value:?} for {key}"))
                        })?;
                    })*
                    _ => return Err(Error::Config(format!("line {line}: unknown key {key:?}"))),
                }
                Ok(())
            }

            /// The full configuration in file form, one key per line.
            pub fn to_config_string(&self) -> String {
                let mut out = String::new();
                $(let _ = writeln!(out, "{} = {}", $key, self.$($field).+);)*
                out
            }
        }
    };
}

config_keys! {
    "particles" => particles: usize,
    "survival" => survival: f64,
    "lambda_iou" => lambda_iou: f64,
    "blend_iou" => blend.iou: f64,
    "blend_appearance" => blend.appearance: f64,
    "blend_attention" => blend.attention: f64,
    "birth_pos_sigma" => birth.pos_sigma: f64,
    "birth_size_sigma" => birth.size_sigma: f64,
    "birth_peak_spread" => birth.peak_spread: f64,
    "quota_dominant" => resample.quota_dominant: f64,
    "quota_secondary" => resample.quota_secondary: f64,
    "quota_other" => resample.quota_other: f64,
    "step_floor" => resample.step_floor: f64,
    "step_scale" => resample.step_scale: f64,
    "process_noise_pos" => kalman.process_noise_pos: f64,
    "process_noise_vel" => kalman.process_noise_vel: f64,
    "measurement_noise" => kalman.measurement_noise: f64,
    "initial_velocity_std" => kalman.initial_velocity_std: f64,
    "tau_bin" => tau_bin: f64,
    "occupancy_threshold" => refine.occupancy_threshold: f64,
    "refine_window" => refine.window_scale: f64,
    "refine_size_tolerance" => refine.size_tolerance: f64,
    "refine" => refine_enabled: bool,
    "use_attention" => use_attention: bool,
    "gate" => gate: f64,
    "max_misses" => max_misses: u32,
    "histogram_alpha" => histogram_alpha: f64,
    "seed" => seed: u64,
}

impl TrackerConfig {
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")))
            }
        };
        if self.particles == 0 {
            return Err(Error::Config("particles must be positive".into()));
        }
        if self.max_misses == 0 {
            return Err(Error::Config("max_misses must be positive".into()));
        }
        unit("survival", self.survival)?;
        unit("tau_bin", self.tau_bin)?;
        unit("occupancy_threshold", self.refine.occupancy_threshold)?;
        unit("histogram_alpha", self.histogram_alpha)?;
        unit("gate", self.gate)?;
        let nonneg = [
            ("lambda_iou", self.lambda_iou),
            ("blend_iou", self.blend.iou),
            ("blend_appearance", self.blend.appearance),
            ("blend_attention", self.blend.attention),
            ("birth_pos_sigma", self.birth.pos_sigma),
            ("birth_size_sigma", self.birth.size_sigma),
            ("birth_peak_spread", self.birth.peak_spread),
            ("quota_dominant", self.resample.quota_dominant),
            ("quota_secondary", self.resample.quota_secondary),
            ("quota_other", self.resample.quota_other),
            ("step_floor", self.resample.step_floor),
            ("step_scale", self.resample.step_scale),
            ("process_noise_pos", self.kalman.process_noise_pos),
            ("process_noise_vel", self.kalman.process_noise_vel),
            ("measurement_noise", self.kalman.measurement_noise),
            ("initial_velocity_std", self.kalman.initial_velocity_std),
            ("refine_window", self.refine.window_scale),
            ("refine_size_tolerance", self.refine.size_tolerance),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be a non-negative number")));
            }
        }
        if self.refine.window_scale < 1.0 {
            return Err(Error::Config("refine_window must be at least 1".into()));
        }
        Ok(())
    }
}

impl FromStr for TrackerConfig {
    type Err = Error;

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored.
    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = TrackerConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim(), i + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
