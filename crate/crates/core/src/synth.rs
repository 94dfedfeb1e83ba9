//! Synthetic scenarios with known ground truth.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::ingest::{canonical_order, frame_file, write_attention_pgm, write_detections, write_kitti_labels, KittiRecord, SequenceManifest};
use crate::model::{clamp_box, AttentionGrid, AttentionKind, BBox, ClassLabel, Detection, FrameObservation};

/// Growth applied to every box before rasterizing dilated attention.
pub const DILATION: f64 = 0.1;
const DETECTION_SCORE: f64 = 0.9;
const BACKGROUND: Rgb<u8> = Rgb([96, 96, 96]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Union of the ground-truth boxes.
    Perfect,
    /// Union of the boxes grown by [`DILATION`].
    Dilated,
    None,
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "perfect" => Ok(AttentionMode::Perfect),
            "dilated" => Ok(AttentionMode::Dilated),
            "none" => Ok(AttentionMode::None),
            _ => Err(Error::Config(format!("unknown attention mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub birth: usize,
    /// First frame the target is gone.
    pub death: usize,
    pub initial: BBox,
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub class_label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub targets: Vec<TargetSpec>,
    pub miss_probability: f64,
    /// Expected false detections per frame.
    pub clutter_rate: f64,
    /// Standard deviation of the detection noise, pixels.
    pub noise_sigma: f64,
    pub attention: AttentionMode,
    /// Drop every target's detection when `(frame - birth) % period == 0`
    /// (never at birth).
    pub dropout_period: Option<usize>,
    /// Render flat-colour frames, one colour per target.
    pub render_images: bool,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            frames: 100,
            width: 640,
            height: 480,
            targets: Vec::new(),
            miss_probability: 0.0,
            clutter_rate: 0.0,
            noise_sigma: 0.0,
            attention: AttentionMode::Perfect,
            dropout_period: None,
            render_images: false,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(Error::Config(format!("miss probability {} outside [0, 1]", self.miss_probability)));
        }
        if !(self.clutter_rate.is_finite() && self.clutter_rate >= 0.0) {
            return Err(Error::Config(format!("clutter rate {} must be non-negative", self.clutter_rate)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma {} must be non-negative", self.noise_sigma)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("frame size must be positive".into()));
        }
        if self.dropout_period == Some(0) {
            return Err(Error::Config("dropout period must be positive".into()));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if t.death <= t.birth {
                return Err(Error::Config(format!("target {i}: death {} not after birth {}", t.death, t.birth)));
            }
        }
        Ok(())
    }

    /// Ground-truth box of target `i` at `frame`, clipped to the frame.
    pub fn target_box(&self, i: usize, frame: usize) -> Option<BBox> {
        let t = &self.targets[i];
        if frame < t.birth || frame >= t.death {
            return None;
        }
        let dt = (frame - t.birth) as f64;
        let moved = if dt == 0.0 {
            t.initial
        } else {
            t.initial.translate(t.velocity.0 * dt, t.velocity.1 * dt).ok()?
        };
        clamp_box(&moved, self.width as f64, self.height as f64).ok()
    }
}

impl FromStr for ScenarioSpec {
    type Err = Error;

    /// `key = value` lines. Each target is
    /// `target = birth death left top right bottom vx vy [class]`.
    fn from_str(text: &str) -> Result<Self> {
        let mut spec = ScenarioSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("scenario line {}: {msg}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| at("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: FromStr>(v: &str) -> Option<T> {
                v.parse().ok()
            }
            let bad = || at(format!("invalid value {value:?} for {key}"));
            match key {
                "frames" => spec.frames = num(value).ok_or_else(bad)?,
                "width" => spec.width = num(value).ok_or_else(bad)?,
                "height" => spec.height = num(value).ok_or_else(bad)?,
                "miss" => spec.miss_probability = num(value).ok_or_else(bad)?,
                "clutter" => spec.clutter_rate = num(value).ok_or_else(bad)?,
                "sigma" => spec.noise_sigma = num(value).ok_or_else(bad)?,
                "attention" => spec.attention = value.parse().map_err(|_| bad())?,
                "dropout_period" => {
                    spec.dropout_period = match value {
                        "none" | "0" => None,
                        v => Some(num(v).ok_or_else(bad)?),
                    }
                }
                "render_images" => spec.render_images = num(value).ok_or_else(bad)?,
                "seed" => spec.seed = num(value).ok_or_else(bad)?,
                "target" => {
                    let f: Vec<&str> = value.split_whitespace().collect();
                    if !(8..=9).contains(&f.len()) {
                        return Err(at("target needs: birth death left top right bottom vx vy [class]".into()));
                    }
                    let birth = num(f[0]).ok_or_else(bad)?;
                    let death = num(f[1]).ok_or_else(bad)?;
                    let v: Vec<f64> = f[2..8].iter().map(|s| num(s).ok_or_else(bad)).collect::<Result<_>>()?;
                    let initial = BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| at(e.to_string()))?;
                    let class_label = match f.get(8) {
                        Some(c) => c.parse().map_err(|_| bad())?,
                        None => ClassLabel::Car,
                    };
                    spec.targets.push(TargetSpec {
                        birth,
                        death,
                        initial,
                        velocity: (v[4], v[5]),
                        class_label,
                    });
                }
                _ => return Err(at(format!("unknown key {key:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    /// Per frame: (target index, box).
    pub ground_truth: Vec<Vec<(usize, BBox)>>,
    pub detections: Vec<Vec<Detection>>,
    pub attention: Vec<Option<AttentionGrid>>,
    pub images: Option<Vec<RgbImage>>,
}

impl Scenario {
    /// Observations ready for the tracker.
    pub fn observations(&self) -> Vec<FrameObservation> {
        (0..self.spec.frames)
            .map(|k| {
                let mut o = FrameObservation::new(k, self.detections[k].clone()).expect("frame-tagged detections");
                if let Some(g) = &self.attention[k] {
                    o = o.with_attention(g.clone().into());
                }
                if let Some(images) = &self.images {
                    o = o.with_image(images[k].clone().into());
                }
                o
            })
            .collect()
    }

    /// Ground truth as KITTI rows; track ids are target indices.
    pub fn ground_truth_records(&self) -> Vec<KittiRecord> {
        self.ground_truth
            .iter()
            .enumerate()
            .flat_map(|(k, boxes)| {
                boxes.iter().map(move |(i, b)| KittiRecord {
                    frame: k,
                    track_id: *i as i64,
                    class_name: self.spec.targets[*i].class_label.to_string(),
                    truncated: 0.0,
                    occluded: 0,
                    alpha: -10.0,
                    bbox: *b,
                    dont_care: false,
                })
            })
            .collect()
    }

    pub fn detection_count(&self) -> usize {
        self.detections.iter().map(Vec::len).sum()
    }

    /// Writes detections, ground truth, attention and images under `dir`
    /// and returns the manifest path.
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let detections = dir.join("detections.csv");
        write_detections(&self.observations(), &detections)?;
        let ground_truth = dir.join("gt.txt");
        write_kitti_labels(&self.ground_truth_records(), &ground_truth)?;

        let attention = if self.spec.attention == AttentionMode::None {
            None
        } else {
            let sub = dir.join("attention");
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (k, g) in self.attention.iter().enumerate() {
                if let Some(g) = g {
                    write_attention_pgm(g, &sub.join(frame_file(k, "pgm")))?;
                }
            }
            Some(sub)
        };
        let images = match &self.images {
            None => None,
            Some(frames) => {
                let sub = dir.join("images");
                fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
                for (k, img) in frames.iter().enumerate() {
                    let p = sub.join(frame_file(k, "png"));
                    img.save(&p).map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", p.display())))?;
                }
                Some(sub)
            }
        };
        let manifest = SequenceManifest {
            sequence: name.to_string(),
            frames: self.spec.frames,
            width: self.spec.width,
            height: self.spec.height,
            detections,
            images,
            attention,
            attention_kind: AttentionKind::Objectness,
            ground_truth: Some(ground_truth),
        };
        let path = dir.join(format!("{name}.manifest"));
        manifest.write(&path)?;
        Ok(path)
    }
}

fn rasterize(width: usize, height: usize, boxes: &[BBox], grow: f64) -> AttentionGrid {
    let mut values = vec![0.0f32; width * height];
    for b in boxes {
        let (cx, cy) = b.center();
        let (w, h) = (b.width() * (1.0 + grow), b.height() * (1.0 + grow));
        let (l, r) = (cx - w / 2.0, cx + w / 2.0);
        let (t, btm) = (cy - h / 2.0, cy + h / 2.0);
        // pixel centres inside the box
        let span = |lo: f64, hi: f64, len: usize| {
            let a = ((lo - 0.5).ceil().max(0.0) as usize).min(len);
            let z = ((hi - 0.5).ceil().max(0.0) as usize).min(len);
            a..z
        };
        for y in span(t, btm, height) {
            for x in span(l, r, width) {
                values[y * width + x] = 1.0;
            }
        }
    }
    AttentionGrid::new(width, height, values, AttentionKind::Objectness).expect("binary grid")
}

fn target_colour(i: usize) -> Rgb<u8> {
    // Evenly spread saturated hues.
    let hue = (i as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

fn render(width: usize, height: usize, boxes: &[(usize, BBox)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(width as u32, height as u32, BACKGROUND);
    for (i, b) in boxes {
        let colour = target_colour(*i);
        let x0 = b.left().round().max(0.0) as u32;
        let x1 = (b.right().round() as u32).min(width as u32);
        let y0 = b.top().round().max(0.0) as u32;
        let y1 = (b.bottom().round() as u32).min(height as u32);
        for y in y0..y1 {
            for x in x0..x1 {
                img.put_pixel(x, y, colour);
            }
        }
    }
    img
}

/// Generates a scenario. Identical specs give identical scenarios.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let clutter = if spec.clutter_rate > 0.0 {
        Some(Poisson::new(spec.clutter_rate).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let n = spec.targets.len().max(1) as f64;
    let mean_w = spec.targets.iter().map(|t| t.initial.width()).sum::<f64>() / n;
    let mean_h = spec.targets.iter().map(|t| t.initial.height()).sum::<f64>() / n;
    let (mean_w, mean_h) = if spec.targets.is_empty() { (20.0, 20.0) } else { (mean_w, mean_h) };
    let clutter_class = spec.targets.first().map_or(ClassLabel::Car, |t| t.class_label);
    let (fw, fh) = (spec.width as f64, spec.height as f64);

    let mut ground_truth = Vec::with_capacity(spec.frames);
    let mut detections = Vec::with_capacity(spec.frames);
    let mut attention = Vec::with_capacity(spec.frames);
    let mut images = spec.render_images.then(Vec::new);
    for k in 0..spec.frames {
        let boxes: Vec<(usize, BBox)> = (0..spec.targets.len())
            .filter_map(|i| spec.target_box(i, k).map(|b| (i, b)))
            .collect();
        let mut dets = Vec::new();
        for (i, b) in &boxes {
            let t = &spec.targets[*i];
            // Draws happen in a fixed order whatever the outcome.
            let missed = rng.random_bool(spec.miss_probability);
            let forced = spec
                .dropout_period
                .is_some_and(|p| k > t.birth && (k - t.birth).is_multiple_of(p));
            let jitter: [f64; 4] = std::array::from_fn(|_| noise.sample(&mut rng));
            if missed || forced {
                continue;
            }
            let observed = if spec.noise_sigma == 0.0 {
                *b
            } else {
                let (cx, cy) = b.center();
                BBox::from_center(
                    cx + jitter[0],
                    cy + jitter[1],
                    (b.width() + jitter[2]).max(1.0),
                    (b.height() + jitter[3]).max(1.0),
                )
                .and_then(|nb| clamp_box(&nb, fw, fh))
                .unwrap_or(*b)
            };
            dets.push(Detection::new(k, t.class_label, observed, DETECTION_SCORE)?);
        }
        if let Some(poisson) = &clutter {
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                let w = (mean_w * rng.random_range(0.5..=1.5)).min(fw);
                let h = (mean_h * rng.random_range(0.5..=1.5)).min(fh);
                let l = rng.random_range(0.0..=(fw - w));
                let t = rng.random_range(0.0..=(fh - h));
                let score = rng.random_range(0.1..0.9);
                dets.push(Detection::new(k, clutter_class, BBox::new(l, t, l + w, t + h)?, score)?);
            }
        }
        canonical_order(&mut dets);
        let plain: Vec<BBox> = boxes.iter().map(|(_, b)| *b).collect();
        attention.push(match spec.attention {
            AttentionMode::Perfect => Some(rasterize(spec.width, spec.height, &plain, 0.0)),
            AttentionMode::Dilated => Some(rasterize(spec.width, spec.height, &plain, DILATION)),
            AttentionMode::None => None,
        });
        if let Some(frames) = images.as_mut() {
            frames.push(render(spec.width, spec.height, &boxes));
        }
        ground_truth.push(boxes);
        detections.push(dets);
    }
    Ok(Scenario {
        spec: spec.clone(),
        ground_truth,
        detections,
        attention,
        images,
    })
}
