//! Frame-to-frame data association and track lifecycle.
//!
//! Tracks and detections are matched by a globally optimal assignment over a
//! cost that weighs box overlap and colour-histogram distance equally. Tracks
//! that go unmatched for two consecutive frames are terminated.

use image::RgbImage;

use crate::appearance::{bhattacharyya, hs_histogram, AppearanceHistogram, TemporalHistogram};
use crate::error::{Error, Result};
use crate::model::{clamp_box, iou, BBox, ClassLabel, Detection};
use crate::phd::{KalmanState, ParticleSet};

/// Assigned pairs costing more than this are dropped after assignment.
pub const DEFAULT_GATE: f64 = 0.8;

/// Consecutive misses after which a track is terminated.
pub const DEFAULT_MAX_MISSES: u32 = 2;

/// Dense `rows x cols` matrix of costs in `[0, 1]`; rows are tracks, columns
/// detections.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} cost matrix with {} entries",
                data.len()
            )));
        }
        if let Some(c) = data.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidValue(format!("cost {c} outside [0, 1]")));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged cost matrix".into()));
        }
        CostMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// (track index, detection index), sorted by track index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl Assignment {
    pub fn detection_for(&self, track: usize) -> Option<usize> {
        self.pairs.iter().find(|(t, _)| *t == track).map(|(_, d)| *d)
    }

    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| costs.get(r, c)).sum()
    }
}

/// Minimum-cost assignment of rows to columns.
///
/// Returns, for each row, the assigned column. When `rows <= cols` every row
/// is assigned; otherwise every column is. Entries equal to `f64::INFINITY`
/// are forbidden: they are only used when no allowed completion exists and
/// such rows come back as `None`. Cost is minimised among assignments with
/// the largest number of allowed pairs.
pub fn solve_assignment(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let raw = |i: usize, j: usize| if transpose { cost(j, i) } else { cost(i, j) };

    let mut max_finite: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = raw(i, j);
            if c.is_finite() {
                max_finite = max_finite.max(c.abs());
            }
        }
    }
    // Large enough that one forbidden pair outweighs any set of allowed ones.
    let forbidden = (max_finite + 1.0) * (n as f64 + 1.0);
    let at = |i: usize, j: usize| {
        let c = raw(i, j);
        if c.is_finite() {
            c
        } else {
            forbidden
        }
    };

    // Shortest augmenting paths with row/column potentials, 1-based with a
    // virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; rows];
    for j in 1..=m {
        let i = owner[j];
        if i == 0 || !raw(i - 1, j - 1).is_finite() {
            continue;
        }
        if transpose {
            out[j - 1] = Some(i - 1);
        } else {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Globally optimal track/detection assignment; pairs costing more than
/// `gate` are demoted to unmatched on both sides.
pub fn hungarian(costs: &CostMatrix, gate: f64) -> Assignment {
    let rows = solve_assignment(costs.rows, costs.cols, |r, c| costs.get(r, c));
    let mut out = Assignment::default();
    let mut used = vec![false; costs.cols];
    for (r, col) in rows.into_iter().enumerate() {
        match col {
            Some(c) if costs.get(r, c) <= gate => {
                used[c] = true;
                out.pairs.push((r, c));
            }
            _ => out.unmatched_tracks.push(r),
        }
    }
    out.unmatched_detections = (0..costs.cols).filter(|c| !used[*c]).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrackId(pub u64);

impl std::fmt::Display for TrackId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Hands out strictly increasing identities; never reuses one.
#[derive(Debug, Clone, Default)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn next_id(&mut self) -> TrackId {
        let id = TrackId(self.next);
        self.next += 1;
        id
    }
}

/// A live target hypothesis.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: TrackId,
    pub class_label: ClassLabel,
    /// Frames at which the track was matched, with the matched box.
    pub history: Vec<(usize, BBox)>,
    pub appearance: Option<TemporalHistogram>,
    pub kalman: KalmanState,
    pub particles: ParticleSet,
    /// Consecutive frames without a matched detection.
    pub misses: u32,
    /// Box used for association in the current frame.
    pub predicted: BBox,
    pub last_score: f64,
}

impl Track {
    pub fn last_box(&self) -> BBox {
        self.history.last().map(|(_, b)| *b).unwrap_or(self.predicted)
    }
}

fn detection_histogram(image: &RgbImage, d: &Detection) -> Result<AppearanceHistogram> {
    let region = clamp_box(&d.bbox, image.width() as f64, image.height() as f64)
        .map_err(|_| Error::DegenerateRegion)?;
    hs_histogram(image, &region)
}

/// Histograms of every detection, or `None` without an image.
pub fn detection_histograms(
    detections: &[Detection],
    image: Option<&RgbImage>,
) -> Result<Option<Vec<AppearanceHistogram>>> {
    image
        .map(|img| detections.iter().map(|d| detection_histogram(img, d)).collect())
        .transpose()
}

/// `0.5 * (1 - IoU) + 0.5 * Bhattacharyya` between each track's predicted
/// box and temporal histogram and each detection. When no appearance is
/// available for a pair, the overlap term carries the full weight.
pub fn build_cost(
    tracks: &[Track],
    detections: &[Detection],
    histograms: Option<&[AppearanceHistogram]>,
) -> Result<CostMatrix> {
    let mut data = Vec::with_capacity(tracks.len() * detections.len());
    for t in tracks {
        for (j, d) in detections.iter().enumerate() {
            let overlap = 1.0 - iou(&t.predicted, &d.bbox);
            let cost = match (&t.appearance, histograms) {
                (Some(temporal), Some(h)) => {
                    0.5 * overlap + 0.5 * bhattacharyya(&temporal.histogram, &h[j])?
                }
                _ => overlap,
            };
            data.push(cost.clamp(0.0, 1.0));
        }
    }
    CostMatrix::new(tracks.len(), detections.len(), data)
}

/// Applies one frame's assignment: matched tracks reset their miss counter
/// and record the detection, unmatched tracks count a miss and are removed
/// once they reach `max_misses`, unmatched detections become new tracks.
///
/// Returns the terminated tracks.
pub fn lifecycle_step(
    tracks: &mut Vec<Track>,
    assignment: &Assignment,
    detections: &[Detection],
    frame_index: usize,
    max_misses: u32,
    ids: &mut IdAllocator,
    mut spawn: impl FnMut(TrackId, &Detection) -> Track,
) -> Vec<Track> {
    for &(t, d) in &assignment.pairs {
        let track = &mut tracks[t];
        let det = &detections[d];
        track.misses = 0;
        track.history.push((frame_index, det.bbox));
        track.last_score = det.score();
    }
    for &t in &assignment.unmatched_tracks {
        tracks[t].misses += 1;
    }
    let (alive, terminated): (Vec<Track>, Vec<Track>) =
        tracks.drain(..).partition(|t| t.misses < max_misses);
    *tracks = alive;
    for &d in &assignment.unmatched_detections {
        tracks.push(spawn(ids.next_id(), &detections[d]));
    }
    terminated
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phd::KalmanModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force_min(costs: &[Vec<f64>]) -> f64 {
        permutations(costs.len())
            .iter()
            .map(|p| p.iter().enumerate().map(|(r, &c)| costs[r][c]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn hungarian_examples() {
        let one = CostMatrix::from_rows(&[vec![0.2]]).unwrap();
        assert_eq!(hungarian(&one, 1.0).pairs, vec![(0, 0)]);
        let diag = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let a = hungarian(&diag, 1.0);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&diag), 0.0);
    }

    #[test]
    fn six_by_six_matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(permutations(6).len(), 720);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.random()).collect()).collect();
            let m = CostMatrix::from_rows(&rows).unwrap();
            let a = hungarian(&m, 1.0);
            assert_eq!(a.pairs.len(), 6);
            assert_eq!(a.total_cost(&m), brute_force_min(&rows));
        }
    }

    #[test]
    fn gate_demotes_expensive_pairs() {
        let m = CostMatrix::from_rows(&[vec![0.9, 1.0], vec![1.0, 0.1]]).unwrap();
        let a = hungarian(&m, DEFAULT_GATE);
        assert_eq!(a.pairs, vec![(1, 1)]);
        assert_eq!(a.unmatched_tracks, vec![0]);
        assert_eq!(a.unmatched_detections, vec![0]);
    }

    #[test]
    fn rectangular_inputs() {
        let wide = CostMatrix::from_rows(&[vec![0.5, 0.1, 0.9]]).unwrap();
        let a = hungarian(&wide, 1.0);
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.unmatched_detections, vec![0, 2]);
        let tall = CostMatrix::from_rows(&[vec![0.5], vec![0.1], vec![0.9]]).unwrap();
        let a = hungarian(&tall, 1.0);
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.unmatched_tracks, vec![0, 2]);
        let empty = CostMatrix::new(2, 0, vec![]).unwrap();
        assert_eq!(hungarian(&empty, 1.0).unmatched_tracks, vec![0, 1]);
    }

    #[test]
    fn forbidden_entries_maximise_allowed_pairs() {
        let inf = f64::INFINITY;
        let rows = [[0.0, 0.5], [inf, 0.9]];
        let out = solve_assignment(2, 2, |r, c| rows[r][c]);
        assert_eq!(out, vec![Some(0), Some(1)]);
        let rows = [[inf, inf], [0.3, inf]];
        let out = solve_assignment(2, 2, |r, c| rows[r][c]);
        assert_eq!(out, vec![None, Some(0)]);
    }

    #[test]
    fn cost_matrix_rejects_out_of_range() {
        assert!(CostMatrix::from_rows(&[vec![1.5]]).is_err());
        assert!(CostMatrix::from_rows(&[vec![0.1], vec![0.1, 0.2]]).is_err());
    }

    fn track(id: u64, b: BBox, hist: Option<AppearanceHistogram>) -> Track {
        let model = KalmanModel::default();
        Track {
            id: TrackId(id),
            class_label: ClassLabel::Car,
            history: vec![(0, b)],
            appearance: hist.map(TemporalHistogram::new),
            kalman: model.initiate(&b),
            particles: ParticleSet::from_box(&b, 4, TrackId(id)),
            misses: 0,
            predicted: b,
            last_score: 1.0,
        }
    }

    fn one_hot(hue: usize) -> AppearanceHistogram {
        let mut bins = vec![0.0; crate::appearance::BINS];
        bins[hue] = 1.0;
        bins[crate::appearance::HUE_BINS + hue] = 1.0;
        AppearanceHistogram::from_bins(bins).unwrap()
    }

    #[test]
    fn cost_examples() {
        let b = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let d = Detection::new(1, ClassLabel::Car, b, 0.9).unwrap();
        let t = track(0, b, Some(one_hot(3)));
        let same = [one_hot(3)];
        let c = build_cost(std::slice::from_ref(&t), std::slice::from_ref(&d), Some(&same)).unwrap();
        assert_eq!(c.get(0, 0), 0.0);

        let far = Detection::new(1, ClassLabel::Car, BBox::new(5.0, 5.0, 6.0, 6.0).unwrap(), 0.9).unwrap();
        let c = build_cost(std::slice::from_ref(&t), std::slice::from_ref(&far), Some(&[one_hot(7)])).unwrap();
        assert_eq!(c.get(0, 0), 1.0);

        // Without appearance the overlap term takes the full weight.
        let shifted = Detection::new(1, ClassLabel::Car, BBox::new(1.0, 1.0, 3.0, 3.0).unwrap(), 0.9).unwrap();
        let c = build_cost(&[t], &[shifted], None).unwrap();
        assert_relative_eq!(c.get(0, 0), 6.0 / 7.0, epsilon = 1e-12);
    }

    fn det(frame: usize, x: f64) -> Detection {
        Detection::new(frame, ClassLabel::Car, BBox::new(x, 0.0, x + 10.0, 10.0).unwrap(), 0.9).unwrap()
    }

    fn run_lifecycle(matched: &[bool]) -> (Vec<Track>, Vec<(usize, TrackId)>) {
        let mut ids = IdAllocator::default();
        let first = det(0, 0.0);
        let mut tracks = vec![track(ids.next_id().0, first.bbox, None)];
        let mut terminated = Vec::new();
        for (k, &hit) in matched.iter().enumerate() {
            let frame = k + 1;
            let (dets, assignment) = if hit && !tracks.is_empty() {
                (
                    vec![det(frame, 0.0)],
                    Assignment { pairs: vec![(0, 0)], ..Default::default() },
                )
            } else {
                (
                    vec![],
                    Assignment { unmatched_tracks: (0..tracks.len()).collect(), ..Default::default() },
                )
            };
            let gone = lifecycle_step(&mut tracks, &assignment, &dets, frame, DEFAULT_MAX_MISSES, &mut ids, |id, d| {
                track(id.0, d.bbox, None)
            });
            terminated.extend(gone.into_iter().map(|t| (frame, t.id)));
        }
        (tracks, terminated)
    }

    #[test]
    fn lifecycle_examples() {
        let (tracks, terminated) = run_lifecycle(&[true; 10]);
        assert_eq!(tracks.len(), 1);
        assert!(terminated.is_empty());
        assert_eq!(tracks[0].history.len(), 11);

        let (tracks, terminated) = run_lifecycle(&[true, false, false]);
        assert!(tracks.is_empty());
        assert_eq!(terminated, vec![(3, TrackId(0))]);

        let (tracks, terminated) = run_lifecycle(&[false, true, false, true]);
        assert!(terminated.is_empty());
        assert_eq!(tracks[0].misses, 0);
    }

    #[test]
    fn unmatched_detections_get_fresh_ids() {
        let mut ids = IdAllocator::default();
        let mut tracks = vec![track(ids.next_id().0, det(0, 0.0).bbox, None)];
        let dets = vec![det(1, 0.0), det(1, 100.0), det(1, 200.0)];
        let assignment = Assignment {
            pairs: vec![(0, 0)],
            unmatched_tracks: vec![],
            unmatched_detections: vec![1, 2],
        };
        lifecycle_step(&mut tracks, &assignment, &dets, 1, 2, &mut ids, |id, d| track(id.0, d.bbox, None));
        let got: Vec<u64> = tracks.iter().map(|t| t.id.0).collect();
        assert_eq!(got, vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn assignment_is_a_partition(
            rows in 0usize..7, cols in 0usize..7, seed in any::<u64>(), gate in 0.0f64..=1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..rows * cols).map(|_| rng.random()).collect();
            let m = CostMatrix::new(rows, cols, data).unwrap();
            let a = hungarian(&m, gate);
            let mut seen_r = vec![0; rows];
            let mut seen_c = vec![0; cols];
            for &(r, c) in &a.pairs {
                seen_r[r] += 1;
                seen_c[c] += 1;
                prop_assert!(m.get(r, c) <= gate);
            }
            for &r in &a.unmatched_tracks { seen_r[r] += 1; }
            for &c in &a.unmatched_detections { seen_c[c] += 1; }
            prop_assert!(seen_r.iter().all(|&n| n == 1));
            prop_assert!(seen_c.iter().all(|&n| n == 1));
        }

        #[test]
        fn termination_happens_at_second_consecutive_miss(pattern in proptest::collection::vec(any::<bool>(), 1..30)) {
            let (_, terminated) = run_lifecycle(&pattern);
            let mut run = 0;
            let mut expected = None;
            for (k, &hit) in pattern.iter().enumerate() {
                run = if hit { 0 } else { run + 1 };
                if run == 2 {
                    expected = Some(k + 1);
                    break;
                }
            }
            prop_assert_eq!(terminated.first().map(|(f, _)| *f), expected);
        }
    }
}
