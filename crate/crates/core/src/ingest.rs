//! Dataset and artifact I/O.
//!
//! Formats:
//! - detections: CSV `frame,class,left,top,right,bottom,score`, header optional
//! - tracks: CSV `frame,track_id,class,left,top,right,bottom,score` with header
//! - ground truth: KITTI tracking label rows, whitespace separated
//! - attention: one grayscale PGM or PNG per frame, named `{frame:06}.pgm|png`
//! - proposals: `RPT1`, then H, W, A as little-endian u32, then H*W*A
//!   records of five little-endian f32 (objectness, dx, dy, dw, dh)
//! - manifest: `key = value` lines, paths relative to the manifest

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{DynamicImage, RgbImage};
use quick_xml::events::Event;
use quick_xml::Reader;

use crate::error::{Error, Result};
use crate::metrics::EvalFrame;
use crate::model::{AttentionGrid, AttentionKind, BBox, ClassLabel, Detection, FrameObservation};
use crate::phd::TrackOutput;
use crate::rpfilter::ProposalTensor;

const PROPOSAL_MAGIC: &[u8; 4] = b"RPT1";
const TRACK_HEADER: [&str; 8] = ["frame", "track_id", "class", "left", "top", "right", "bottom", "score"];

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------- KITTI

/// One KITTI tracking label row.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiRecord {
    pub frame: usize,
    /// -1 for DontCare regions.
    pub track_id: i64,
    pub class_name: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox: BBox,
    /// The row marks an ignore region rather than an object.
    pub dont_care: bool,
}

impl KittiRecord {
    pub fn class_label(&self) -> ClassLabel {
        self.class_name.parse().unwrap_or(ClassLabel::Other)
    }
}

/// Parses KITTI tracking labels. Columns past the 2D box (3D extent,
/// location, rotation, score) are accepted and ignored.
pub fn parse_kitti_str(text: &str, source: &str) -> Result<Vec<KittiRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = (i + 1) as u64;
        let f: Vec<&str> = raw.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() < 10 {
            return Err(Error::malformed(source, line, format!("expected at least 10 fields, got {}", f.len())));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            f[k].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::malformed(source, line, format!("bad {name} {:?}", f[k])))
        };
        let frame = f[0]
            .parse::<usize>()
            .map_err(|_| Error::malformed(source, line, format!("bad frame {:?}", f[0])))?;
        let track_id = f[1]
            .parse::<i64>()
            .map_err(|_| Error::malformed(source, line, format!("bad track id {:?}", f[1])))?;
        let occluded = f[4]
            .parse::<i32>()
            .map_err(|_| Error::malformed(source, line, format!("bad occlusion {:?}", f[4])))?;
        let bbox = BBox::new(num(6, "left")?, num(7, "top")?, num(8, "right")?, num(9, "bottom")?)
            .map_err(|e| Error::malformed(source, line, e.to_string()))?;
        out.push(KittiRecord {
            frame,
            track_id,
            class_name: f[2].to_string(),
            truncated: num(3, "truncation")?,
            occluded,
            alpha: num(5, "alpha")?,
            bbox,
            dont_care: f[2] == "DontCare",
        });
    }
    Ok(out)
}

pub fn parse_kitti_labels(path: &Path) -> Result<Vec<KittiRecord>> {
    parse_kitti_str(&read_text(path)?, &display(path))
}

/// Writes rows in the 17-column KITTI layout with placeholder 3D fields.
pub fn write_kitti_labels(records: &[KittiRecord], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in records {
        let b = &r.bbox;
        text.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} -1 -1 -1 -1000 -1000 -1000 -10\n",
            r.frame,
            r.track_id,
            r.class_name,
            r.truncated,
            r.occluded,
            r.alpha,
            b.left(),
            b.top(),
            b.right(),
            b.bottom()
        ));
    }
    write_bytes(path, text.as_bytes())
}

/// Number of frames spanned by the labels (highest frame + 1).
pub fn kitti_frame_count(records: &[KittiRecord]) -> usize {
    records.iter().map(|r| r.frame + 1).max().unwrap_or(0)
}

// ------------------------------------------------------------ detections

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn csv_rows(text: &str, source: &str, header: &str) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rows = Vec::new();
    for (i, rec) in csv_reader(text).records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::malformed(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 && rec.get(0) == Some(header) {
            continue;
        }
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, name: &str, source: &str, line: u64) -> Result<T> {
    rec.get(k)
        .and_then(|s| s.parse::<T>().ok())
        .ok_or_else(|| Error::malformed(source, line, format!("bad {name} {:?}", rec.get(k).unwrap_or(""))))
}

fn row_box(rec: &csv::StringRecord, first: usize, source: &str, line: u64) -> Result<BBox> {
    let v: Vec<f64> = (0..4)
        .map(|k| field::<f64>(rec, first + k, ["left", "top", "right", "bottom"][k], source, line))
        .collect::<Result<_>>()?;
    BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| Error::malformed(source, line, e.to_string()))
}

/// Orders one frame's detections by box, then class, then score, so that
/// the order does not depend on how rows were written. The sort is stable.
pub fn canonical_order(detections: &mut [Detection]) {
    detections.sort_by(|a, b| {
        let (ca, cb) = (a.bbox.corners(), b.bbox.corners());
        ca.iter()
            .zip(&cb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.class_label.cmp(&b.class_label))
            .then(a.score().total_cmp(&b.score()))
    });
}

/// Parses a detection CSV into one observation per frame. Frames with no
/// rows (up to `frame_count`, or the highest frame seen) are empty.
pub fn parse_detections_str(text: &str, source: &str, frame_count: Option<usize>) -> Result<Vec<FrameObservation>> {
    let mut by_frame: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for (line, rec) in csv_rows(text, source, "frame")? {
        if rec.len() != 7 {
            return Err(Error::malformed(source, line, format!("expected 7 fields, got {}", rec.len())));
        }
        let frame: usize = field(&rec, 0, "frame", source, line)?;
        let class: ClassLabel = field(&rec, 1, "class", source, line)?;
        let bbox = row_box(&rec, 2, source, line)?;
        let score: f64 = field(&rec, 6, "score", source, line)?;
        let det = Detection::new(frame, class, bbox, score).map_err(|e| Error::malformed(source, line, e.to_string()))?;
        by_frame.entry(frame).or_default().push(det);
    }
    let seen = by_frame.keys().next_back().map_or(0, |f| f + 1);
    let frames = frame_count.unwrap_or(seen);
    if seen > frames {
        return Err(Error::InvalidValue(format!(
            "{source}: detections reach frame {} but the sequence has {frames} frames",
            seen - 1
        )));
    }
    (0..frames)
        .map(|k| {
            let mut dets = by_frame.remove(&k).unwrap_or_default();
            canonical_order(&mut dets);
            FrameObservation::new(k, dets)
        })
        .collect()
}

pub fn parse_detections(path: &Path, frame_count: Option<usize>) -> Result<Vec<FrameObservation>> {
    parse_detections_str(&read_text(path)?, &display(path), frame_count)
}

pub fn write_detections(observations: &[FrameObservation], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidValue(e.to_string());
    w.write_record(["frame", "class", "left", "top", "right", "bottom", "score"]).map_err(io)?;
    for obs in observations {
        for d in &obs.detections {
            let b = &d.bbox;
            w.write_record([
                d.frame_index.to_string(),
                d.class_label.to_string(),
                b.left().to_string(),
                b.top().to_string(),
                b.right().to_string(),
                b.bottom().to_string(),
                d.score().to_string(),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidValue(e.to_string()))?;
    write_bytes(path, &bytes)
}

// -------------------------------------------------------------- tracks

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub frame: usize,
    pub track_id: u64,
    pub class_label: ClassLabel,
    pub bbox: BBox,
    pub score: f64,
}

impl From<&TrackOutput> for TrackRecord {
    fn from(o: &TrackOutput) -> Self {
        TrackRecord {
            frame: o.frame,
            track_id: o.track_id.0,
            class_label: o.class_label,
            bbox: o.bbox,
            score: o.score,
        }
    }
}

/// Serializes records; floats use the shortest form that parses back to
/// the same value, so reading them back is exact.
pub fn tracks_to_string(records: &[TrackRecord]) -> String {
    let mut out = TRACK_HEADER.join(",");
    out.push('\n');
    for r in records {
        let b = &r.bbox;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.frame,
            r.track_id,
            r.class_label,
            b.left(),
            b.top(),
            b.right(),
            b.bottom(),
            r.score
        ));
    }
    out
}

pub fn write_tracks(records: &[TrackRecord], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(tracks_to_string(records).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn parse_tracks_str(text: &str, source: &str) -> Result<Vec<TrackRecord>> {
    let mut out = Vec::new();
    for (line, rec) in csv_rows(text, source, "frame")? {
        if rec.len() != 8 {
            return Err(Error::malformed(source, line, format!("expected 8 fields, got {}", rec.len())));
        }
        out.push(TrackRecord {
            frame: field(&rec, 0, "frame", source, line)?,
            track_id: field(&rec, 1, "track id", source, line)?,
            class_label: field(&rec, 2, "class", source, line)?,
            bbox: row_box(&rec, 3, source, line)?,
            score: field(&rec, 7, "score", source, line)?,
        });
    }
    Ok(out)
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    parse_tracks_str(&read_text(path)?, &display(path))
}

/// Pairs ground truth (DontCare rows dropped) with hypotheses frame by frame.
pub fn eval_frames(ground_truth: &[KittiRecord], tracks: &[TrackRecord], frame_count: Option<usize>) -> Vec<EvalFrame> {
    let seen = kitti_frame_count(ground_truth).max(tracks.iter().map(|t| t.frame + 1).max().unwrap_or(0));
    let mut frames = vec![EvalFrame::default(); frame_count.unwrap_or(seen).max(seen)];
    for g in ground_truth.iter().filter(|g| !g.dont_care) {
        frames[g.frame].ground_truth.push((g.track_id as u64, g.bbox));
    }
    for t in tracks {
        frames[t.frame].hypotheses.push((t.track_id, t.bbox));
    }
    frames
}

// ------------------------------------------------------------ attention

/// Loads a grayscale PGM or PNG as an attention grid with values pixel/255
/// (pixel/65535 for 16-bit files).
pub fn load_attention(path: &Path, kind: AttentionKind) -> Result<AttentionGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_attention(&bytes, kind).map_err(|e| match e {
        Error::UnsupportedFormat(m) => Error::UnsupportedFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_attention(bytes: &[u8], kind: AttentionKind) -> Result<AttentionGrid> {
    let format = image::guess_format(bytes).map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    if !matches!(format, image::ImageFormat::Pnm | image::ImageFormat::Png) {
        return Err(Error::UnsupportedFormat(format!("{format:?} is not PGM or PNG")));
    }
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f32> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!("{:?} is not single-channel", other.color())));
        }
    };
    AttentionGrid::new(w, h, values, kind)
}

/// Binary PGM (P5) bytes; values are scaled by 255 and rounded.
pub fn attention_to_pgm(grid: &AttentionGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.values().iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn write_attention_pgm(grid: &AttentionGrid, path: &Path) -> Result<()> {
    write_bytes(path, &attention_to_pgm(grid))
}

/// Nearest-neighbour resampling to `width x height`.
pub fn resize_attention(grid: &AttentionGrid, width: usize, height: usize) -> Result<AttentionGrid> {
    if grid.width() == width && grid.height() == height {
        return Ok(grid.clone());
    }
    if grid.width() == 0 || grid.height() == 0 {
        return Err(Error::DimensionMismatch("cannot resize an empty grid".into()));
    }
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = (y * grid.height()) / height;
        for x in 0..width {
            values.push(grid.get((x * grid.width()) / width, sy));
        }
    }
    AttentionGrid::new(width, height, values, grid.kind())
}

// ------------------------------------------------------------ proposals

pub fn proposals_to_bytes(tensor: &ProposalTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + tensor.len() * 20);
    out.extend_from_slice(PROPOSAL_MAGIC);
    for d in [tensor.height(), tensor.width(), tensor.anchors()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for e in tensor.entries() {
        for v in e {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn proposals_from_bytes(bytes: &[u8]) -> Result<ProposalTensor> {
    if bytes.len() < 16 || &bytes[..4] != PROPOSAL_MAGIC {
        return Err(Error::UnsupportedFormat("missing RPT1 header".into()));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (h, w, a) = (dim(0), dim(1), dim(2));
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(a))
        .ok_or_else(|| Error::UnsupportedFormat("tensor dimensions overflow".into()))?;
    let body = &bytes[16..];
    if Some(body.len()) != count.checked_mul(20) {
        return Err(Error::DimensionMismatch(format!(
            "{h}x{w}x{a} tensor needs {} payload bytes, found {}",
            count.saturating_mul(20),
            body.len()
        )));
    }
    let entries = body
        .chunks_exact(20)
        .map(|c| std::array::from_fn(|i| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap())))
        .collect();
    ProposalTensor::new(h, w, a, entries)
}

pub fn read_proposals(path: &Path) -> Result<ProposalTensor> {
    proposals_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_proposals(tensor: &ProposalTensor, path: &Path) -> Result<()> {
    write_bytes(path, &proposals_to_bytes(tensor))
}

// ------------------------------------------------------------- manifest

/// Per-frame file name inside image and attention directories.
pub fn frame_file(frame: usize, ext: &str) -> String {
    format!("{frame:06}.{ext}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub sequence: String,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub detections: PathBuf,
    pub images: Option<PathBuf>,
    pub attention: Option<PathBuf>,
    pub attention_kind: AttentionKind,
    pub ground_truth: Option<PathBuf>,
}

impl SequenceManifest {
    /// Parses manifest text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line {}: expected `key = value`", i + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| kv.remove(k);
        let required = |v: Option<String>, k: &str| v.ok_or_else(|| Error::Config(format!("manifest lacks `{k}`")));
        let number = |v: String, k: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("manifest `{k}` is not a count: {v:?}")))
        };
        let path = |v: String| base.join(v);
        let m = SequenceManifest {
            sequence: required(take("sequence"), "sequence")?,
            frames: number(required(take("frames"), "frames")?, "frames")?,
            width: number(required(take("width"), "width")?, "width")?,
            height: number(required(take("height"), "height")?, "height")?,
            detections: path(required(take("detections"), "detections")?),
            images: take("images").map(path),
            attention: take("attention").map(path),
            attention_kind: take("attention_kind").map_or(Ok(AttentionKind::Objectness), |v| v.parse())?,
            ground_truth: take("ground_truth").map(path),
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown manifest key `{k}`")));
        }
        Ok(m)
    }

    /// Loads a manifest and checks that every referenced path exists.
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let m = SequenceManifest::parse(&read_text(path)?, base)?;
        let referenced = [Some(&m.detections), m.images.as_ref(), m.attention.as_ref(), m.ground_truth.as_ref()];
        for p in referenced.into_iter().flatten() {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by manifest")));
            }
        }
        Ok(m)
    }

    /// Manifest text; paths are written relative to `base` when possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = format!(
            "sequence = {}\nframes = {}\nwidth = {}\nheight = {}\ndetections = {}\n",
            self.sequence,
            self.frames,
            self.width,
            self.height,
            rel(&self.detections)
        );
        if let Some(p) = &self.images {
            out.push_str(&format!("images = {}\n", rel(p)));
        }
        if let Some(p) = &self.attention {
            out.push_str(&format!("attention = {}\n", rel(p)));
            let kind = match self.attention_kind {
                AttentionKind::Objectness => "objectness",
                AttentionKind::Subjectness => "subjectness",
            };
            out.push_str(&format!("attention_kind = {kind}\n"));
        }
        if let Some(p) = &self.ground_truth {
            out.push_str(&format!("ground_truth = {}\n", rel(p)));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        write_bytes(path, self.to_text(base).as_bytes())
    }

    fn frame_path(dir: &Path, frame: usize, exts: &[&str]) -> Option<PathBuf> {
        exts.iter().map(|e| dir.join(frame_file(frame, e))).find(|p| p.exists())
    }

    /// Attention for one frame, resized to the frame size. `None` when the
    /// sequence has no attention directory or the frame has no file.
    pub fn attention_for(&self, frame: usize, kind: AttentionKind) -> Result<Option<AttentionGrid>> {
        let Some(dir) = &self.attention else { return Ok(None) };
        let Some(path) = Self::frame_path(dir, frame, &["pgm", "png"]) else { return Ok(None) };
        let grid = load_attention(&path, kind)?;
        resize_attention(&grid, self.width, self.height).map(Some)
    }

    pub fn image_for(&self, frame: usize) -> Result<Option<RgbImage>> {
        let Some(dir) = &self.images else { return Ok(None) };
        let Some(path) = Self::frame_path(dir, frame, &["png", "ppm"]) else { return Ok(None) };
        let img = image::open(&path).map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
        let img = img.to_rgb8();
        if img.width() as usize != self.width || img.height() as usize != self.height {
            return Err(Error::DimensionMismatch(format!(
                "{}: {}x{} image in a {}x{} sequence",
                path.display(),
                img.width(),
                img.height(),
                self.width,
                self.height
            )));
        }
        Ok(Some(img))
    }

    /// Every frame's observation. `attention_kind = None` skips attention.
    pub fn observations(&self, attention_kind: Option<AttentionKind>) -> Result<Vec<FrameObservation>> {
        let mut obs = parse_detections(&self.detections, Some(self.frames))?;
        for o in &mut obs {
            if let Some(kind) = attention_kind {
                if let Some(grid) = self.attention_for(o.frame_index, kind)? {
                    o.attention = Some(Arc::new(grid));
                }
            }
            if let Some(img) = self.image_for(o.frame_index)? {
                o.image = Some(Arc::new(img));
            }
        }
        Ok(obs)
    }

    pub fn ground_truth_records(&self) -> Result<Option<Vec<KittiRecord>>> {
        self.ground_truth.as_deref().map(parse_kitti_labels).transpose()
    }
}

// --------------------------------------------------------------- DETRAC

/// Ground-truth rows from a DETRAC annotation file, keeping every
/// `stride`-th frame and renumbering the kept frames from 0.
pub fn convert_detrac(xml: &str, source: &str, stride: usize) -> Result<Vec<KittiRecord>> {
    if stride == 0 {
        return Err(Error::InvalidValue("stride must be positive".into()));
    }
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut out = Vec::new();
    let mut frame: Option<usize> = None;
    let mut target: Option<(i64, Option<BBox>, String)> = None;
    let line_of = |pos: u64| xml.as_bytes()[..(pos as usize).min(xml.len())].iter().filter(|b| **b == b'\n').count() as u64 + 1;

    loop {
        let pos = reader.buffer_position();
        let event = reader
            .read_event()
            .map_err(|e| Error::malformed(source, line_of(pos), e.to_string()))?;
        let bad = |msg: String| Error::malformed(source, line_of(pos), msg);
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let mut attrs = BTreeMap::new();
                for a in e.attributes() {
                    let a = a.map_err(|err| bad(err.to_string()))?;
                    let value = a.unescape_value().map_err(|err| bad(err.to_string()))?;
                    attrs.insert(String::from_utf8_lossy(a.key.as_ref()).into_owned(), value.into_owned());
                }
                let num = |k: &str| -> Result<f64> {
                    attrs
                        .get(k)
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| bad(format!("missing or bad attribute `{k}`")))
                };
                match e.name().as_ref() {
                    b"frame" => {
                        let num = num("num")?;
                        if num < 1.0 || num.fract() != 0.0 {
                            return Err(bad(format!("bad frame number {num}")));
                        }
                        frame = Some(num as usize - 1);
                    }
                    b"target" if frame.is_some() => {
                        target = Some((num("id")? as i64, None, "Car".to_string()));
                    }
                    b"box" => {
                        if let Some(t) = target.as_mut() {
                            let (l, tp) = (num("left")?, num("top")?);
                            let bb = BBox::new(l, tp, l + num("width")?, tp + num("height")?)
                                .map_err(|err| bad(err.to_string()))?;
                            t.1 = Some(bb);
                        }
                    }
                    b"attribute" => {
                        if let (Some(t), Some(kind)) = (target.as_mut(), attrs.get("vehicle_type")) {
                            t.2 = if kind.eq_ignore_ascii_case("car") { "Car".into() } else { kind.clone() };
                        }
                    }
                    _ => {}
                }
            }
            Event::End(ref e) => match e.name().as_ref() {
                b"target" => {
                    if let (Some(f), Some((id, bbox, class_name))) = (frame, target.take()) {
                        let bbox = bbox.ok_or_else(|| bad(format!("target {id} has no box")))?;
                        if f % stride == 0 {
                            out.push(KittiRecord {
                                frame: f / stride,
                                track_id: id,
                                class_name,
                                truncated: 0.0,
                                occluded: 0,
                                alpha: -10.0,
                                bbox,
                                dont_care: false,
                            });
                        }
                    }
                }
                b"frame" => frame = None,
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

/// Detection rows (score 1) equivalent to the given ground truth.
pub fn records_to_observations(records: &[KittiRecord], frame_count: usize) -> Result<Vec<FrameObservation>> {
    let mut frames: Vec<Vec<Detection>> = vec![Vec::new(); frame_count];
    for r in records.iter().filter(|r| !r.dont_care) {
        let slot = frames
            .get_mut(r.frame)
            .ok_or_else(|| Error::InvalidValue(format!("frame {} beyond {frame_count} frames", r.frame)))?;
        slot.push(Detection::new(r.frame, r.class_label(), r.bbox, 1.0)?);
    }
    frames
        .into_iter()
        .enumerate()
        .map(|(k, d)| FrameObservation::new(k, d))
        .collect()
}
