//! Weighted particle approximation of a target's intensity.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Normal;

use crate::association::TrackId;
use crate::error::{Error, Result};
use crate::model::{iou, BBox};

pub const DEFAULT_PARTICLES: usize = 100;
pub const DEFAULT_SURVIVAL: f64 = 0.95;
pub const DEFAULT_LAMBDA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub state: BBox,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub owner: TrackId,
}

impl ParticleSet {
    /// `n` copies of `b` with weight `1/n`.
    pub fn from_box(b: &BBox, n: usize, owner: TrackId) -> Self {
        let w = 1.0 / n as f64;
        ParticleSet {
            particles: vec![Particle { state: *b, weight: w }; n],
            owner,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    /// Index of the heaviest particle, lowest index on ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, p) in self.particles.iter().enumerate() {
            if best.is_none_or(|b| p.weight > self.particles[b].weight) {
                best = Some(i);
            }
        }
        best
    }

    fn scale_to(&mut self, mass: f64) {
        let current = self.mass();
        if current > 0.0 && current.is_finite() {
            let f = mass / current;
            self.particles.iter_mut().for_each(|p| p.weight *= f);
        }
    }
}

/// Spread of newborn particles, as fractions of the detection box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthParams {
    /// Center std as a fraction of the box diagonal.
    pub pos_sigma: f64,
    /// Size std as a fraction of each dimension.
    pub size_sigma: f64,
    /// Offset of the four outer peaks, in half box sizes.
    pub peak_spread: f64,
}

impl Default for BirthParams {
    fn default() -> Self {
        BirthParams {
            pos_sigma: 0.1,
            size_sigma: 0.05,
            peak_spread: 1.0,
        }
    }
}

/// Newborn particle set drawn from a five-peak Gaussian mixture: one peak at
/// the box center and one half a box size to each side along each axis.
/// Weights are uniform on `(0, 1]` and then normalized.
pub fn birth<R: Rng>(
    b: &BBox,
    n: usize,
    params: &BirthParams,
    owner: TrackId,
    rng: &mut R,
) -> ParticleSet {
    let n = n.max(1);
    let (cx, cy) = b.center();
    let (w, h) = (b.width(), b.height());
    let ox = params.peak_spread * w / 2.0;
    let oy = params.peak_spread * h / 2.0;
    let peaks = [(0.0, 0.0), (ox, 0.0), (-ox, 0.0), (0.0, oy), (0.0, -oy)];
    let pos = Normal::new(0.0, params.pos_sigma * b.diagonal()).expect("finite sigma");
    let size_w = Normal::new(0.0, params.size_sigma * w).expect("finite sigma");
    let size_h = Normal::new(0.0, params.size_sigma * h).expect("finite sigma");

    let mut particles = Vec::with_capacity(n);
    for _ in 0..n {
        let (px, py) = peaks[rng.random_range(0..peaks.len())];
        let x = cx + px + pos.sample(rng);
        let y = cy + py + pos.sample(rng);
        let pw = (w + size_w.sample(rng)).max(0.1 * w);
        let ph = (h + size_h.sample(rng)).max(0.1 * h);
        let weight = 1.0 - rng.random::<f64>();
        let state = BBox::from_center(x, y, pw, ph).expect("finite particle");
        particles.push(Particle { state, weight });
    }
    let mut set = ParticleSet { particles, owner };
    set.scale_to(1.0);
    set
}

/// Measurement update. With a box, `w_i *= exp(-lambda * (1 - IoU))` and the
/// set is renormalized to unit mass; without one, every weight is scaled by
/// `survival` and the mass decays.
pub fn update(p: &mut ParticleSet, z: Option<&BBox>, lambda: f64, survival: f64) {
    match z {
        Some(z) => {
            for part in &mut p.particles {
                part.weight *= (-lambda * (1.0 - iou(&part.state, z))).exp();
            }
            p.scale_to(1.0);
        }
        None => p.particles.iter_mut().for_each(|part| part.weight *= survival),
    }
}

/// Expected target count: total weight over every set.
pub fn phd_cardinality<'a>(sets: impl IntoIterator<Item = &'a ParticleSet>) -> f64 {
    sets.into_iter().map(ParticleSet::mass).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    North,
    South,
    East,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::South, Heading::East, Heading::West];

    /// Unit offset in image coordinates (y grows downward).
    pub fn unit(self) -> (f64, f64) {
        match self {
            Heading::North => (0.0, -1.0),
            Heading::South => (0.0, 1.0),
            Heading::East => (1.0, 0.0),
            Heading::West => (-1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEstimate {
    pub dx: f64,
    pub dy: f64,
    pub speed: f64,
    /// `None` when stationary.
    pub heading: Option<Heading>,
    pub secondary: Option<Heading>,
    /// Share of the speed along the dominant axis, in `[0.5, 1]`.
    pub split: f64,
}

impl MotionEstimate {
    pub fn from_velocity(dx: f64, dy: f64) -> Self {
        let speed = dx.hypot(dy);
        if speed.is_nan() || speed <= 1e-9 {
            return MotionEstimate {
                dx,
                dy,
                speed: 0.0,
                heading: None,
                secondary: None,
                split: 0.0,
            };
        }
        let horizontal = |v: f64| if v >= 0.0 { Heading::East } else { Heading::West };
        let vertical = |v: f64| if v >= 0.0 { Heading::South } else { Heading::North };
        let (heading, secondary) = if dx.abs() >= dy.abs() {
            (horizontal(dx), vertical(dy))
        } else {
            (vertical(dy), horizontal(dx))
        };
        MotionEstimate {
            dx,
            dy,
            speed,
            heading: Some(heading),
            secondary: Some(secondary),
            split: dx.abs().max(dy.abs()) / (dx.abs() + dy.abs()),
        }
    }
}

/// Share of resampled particles pushed in each direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleParams {
    pub quota_dominant: f64,
    pub quota_secondary: f64,
    pub quota_other: f64,
    /// Step length is `max(step_floor, step_scale * speed)` pixels.
    pub step_floor: f64,
    pub step_scale: f64,
}

impl Default for ResampleParams {
    fn default() -> Self {
        ResampleParams {
            quota_dominant: 0.5,
            quota_secondary: 0.2,
            quota_other: 0.15,
            step_floor: 1.0,
            step_scale: 0.25,
        }
    }
}

impl ResampleParams {
    /// Per-direction quotas in `Heading::ALL` order.
    pub fn quotas(&self, motion: &MotionEstimate) -> [f64; 4] {
        match (motion.heading, motion.secondary) {
            (Some(main), Some(second)) => Heading::ALL.map(|h| {
                if h == main {
                    self.quota_dominant
                } else if h == second {
                    self.quota_secondary
                } else {
                    self.quota_other
                }
            }),
            _ => [0.25; 4],
        }
    }
}

/// Splits `total` items by `shares` with the largest-remainder rule; ties
/// go to the earlier share.
pub fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    if shares.is_empty() || sum <= 0.0 {
        return vec![0; shares.len()];
    }
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Residual resampling counts: every index gets `floor(n * w_i / W)` copies,
/// the remainder is drawn from the fractional residuals.
pub fn residual_counts<R: Rng>(weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let mass: f64 = weights.iter().sum();
    if !(mass > 0.0 && mass.is_finite()) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::ZeroMass);
    }
    let scaled: Vec<f64> = weights.iter().map(|w| n as f64 * w / mass).collect();
    // The small epsilon keeps exact multiples of 1/n from flooring one short.
    let mut counts: Vec<usize> = scaled.iter().map(|s| (s + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let remaining = n.saturating_sub(assigned);
    if remaining > 0 {
        let residuals: Vec<f64> = scaled
            .iter()
            .zip(&counts)
            .map(|(s, c)| (s - *c as f64).max(0.0))
            .collect();
        match WeightedIndex::new(&residuals) {
            Ok(dist) => {
                for _ in 0..remaining {
                    counts[dist.sample(rng)] += 1;
                }
            }
            // All residuals vanished through rounding; fall back to the weights.
            Err(_) => {
                let dist = WeightedIndex::new(weights).map_err(|_| Error::ZeroMass)?;
                for _ in 0..remaining {
                    counts[dist.sample(rng)] += 1;
                }
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub set: ParticleSet,
    /// Number of offspring of each input particle.
    pub offspring: Vec<usize>,
}

/// Residual resampling followed by a directional nudge: each offspring moves
/// one step North, South, East or West, with most steps along the motion.
/// The set keeps its total mass, spread evenly over `n` particles.
pub fn residual_resample<R: Rng>(
    p: &ParticleSet,
    motion: &MotionEstimate,
    params: &ResampleParams,
    n: usize,
    rng: &mut R,
) -> Result<Resampled> {
    let mass = p.mass();
    let offspring = residual_counts(&p.weights(), n, rng)?;
    let mut directions: Vec<Heading> = Vec::with_capacity(n);
    for (h, c) in Heading::ALL.iter().zip(apportion(n, &params.quotas(motion))) {
        directions.extend(std::iter::repeat_n(*h, c));
    }
    directions.shuffle(rng);

    let step = params.step_floor.max(params.step_scale * motion.speed);
    let weight = mass / n as f64;
    let mut particles = Vec::with_capacity(n);
    for (parent, &count) in p.particles.iter().zip(&offspring) {
        for _ in 0..count {
            let (ux, uy) = directions[particles.len()].unit();
            let state = parent.state.translate(ux * step, uy * step)?;
            particles.push(Particle { state, weight });
        }
    }
    Ok(Resampled {
        set: ParticleSet {
            particles,
            owner: p.owner,
        },
        offspring,
    })
}
