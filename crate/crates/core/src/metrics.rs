//! CLEAR-MOT evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::association::solve_assignment;
use crate::error::{Error, Result};
use crate::model::{iou, BBox};

pub const DEFAULT_IOU_MIN: f64 = 0.5;
/// Coverage at or above this marks a trajectory mostly tracked.
pub const MOSTLY_TRACKED: f64 = 0.8;
/// Coverage at or below this marks a trajectory mostly lost.
pub const MOSTLY_LOST: f64 = 0.2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalFrame {
    pub ground_truth: Vec<(u64, BBox)>,
    pub hypotheses: Vec<(u64, BBox)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    /// (gt id, hypothesis id, IoU)
    pub matches: Vec<(u64, u64, f64)>,
    pub false_positives: usize,
    pub misses: usize,
}

/// Matches one frame. Pairs matched in the previous frame are kept while
/// their IoU stays at least `iou_min`; the rest are matched by minimum
/// `1 - IoU` among pairs with IoU at least `iou_min`.
pub fn match_frame(frame: &EvalFrame, prev_matches: &HashMap<u64, u64>, iou_min: f64) -> FrameMatch {
    let gt = &frame.ground_truth;
    let hyp = &frame.hypotheses;
    let mut gt_used = vec![false; gt.len()];
    let mut hyp_used = vec![false; hyp.len()];
    let mut matches = Vec::new();

    for (gi, (gid, gbox)) in gt.iter().enumerate() {
        let Some(&hid) = prev_matches.get(gid) else { continue };
        if let Some(hi) = hyp.iter().position(|(h, _)| *h == hid) {
            let overlap = iou(gbox, &hyp[hi].1);
            if !hyp_used[hi] && overlap >= iou_min {
                gt_used[gi] = true;
                hyp_used[hi] = true;
                matches.push((*gid, hid, overlap));
            }
        }
    }

    let free_gt: Vec<usize> = (0..gt.len()).filter(|i| !gt_used[*i]).collect();
    let free_hyp: Vec<usize> = (0..hyp.len()).filter(|i| !hyp_used[*i]).collect();
    let solution = solve_assignment(free_gt.len(), free_hyp.len(), |r, c| {
        let overlap = iou(&gt[free_gt[r]].1, &hyp[free_hyp[c]].1);
        if overlap >= iou_min {
            1.0 - overlap
        } else {
            f64::INFINITY
        }
    });
    for (r, col) in solution.into_iter().enumerate() {
        if let Some(c) = col {
            let (g, h) = (free_gt[r], free_hyp[c]);
            gt_used[g] = true;
            hyp_used[h] = true;
            matches.push((gt[g].0, hyp[h].0, iou(&gt[g].1, &hyp[h].1)));
        }
    }

    FrameMatch {
        false_positives: hyp_used.iter().filter(|u| !**u).count(),
        misses: gt_used.iter().filter(|u| !**u).count(),
        matches,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotReport {
    pub mota: f64,
    /// Mean IoU of matched pairs (higher is better).
    pub motp: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// False positives per frame, times 100.
    pub far: f64,
    /// Percent of ground-truth trajectories mostly tracked.
    pub mt: f64,
    pub pt: f64,
    pub ml: f64,
    pub id_switches: usize,
    pub fragmentations: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub matches: usize,
    pub ground_truth: usize,
    pub frames: usize,
    pub trajectories: usize,
}

#[derive(Default)]
struct GtHistory {
    present: usize,
    matched: usize,
    last_hyp: Option<u64>,
    was_matched: Option<bool>,
}

/// CLEAR-MOT summary over an ordered frame sequence.
pub fn evaluate(frames: &[EvalFrame], iou_min: f64) -> Result<MotReport> {
    let gt_total: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    if gt_total == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let mut per_gt: BTreeMap<u64, GtHistory> = BTreeMap::new();
    let mut prev: HashMap<u64, u64> = HashMap::new();
    let (mut fp, mut fn_, mut switches, mut frags, mut matched) = (0, 0, 0, 0, 0);
    let mut iou_sum = 0.0;

    for frame in frames {
        let m = match_frame(frame, &prev, iou_min);
        fp += m.false_positives;
        fn_ += m.misses;
        matched += m.matches.len();
        iou_sum += m.matches.iter().map(|(_, _, o)| o).sum::<f64>();
        let now: HashMap<u64, u64> = m.matches.iter().map(|(g, h, _)| (*g, *h)).collect();
        for (gid, _) in &frame.ground_truth {
            let hist = per_gt.entry(*gid).or_default();
            hist.present += 1;
            match now.get(gid) {
                Some(&hid) => {
                    hist.matched += 1;
                    if hist.last_hyp.is_some_and(|h| h != hid) {
                        switches += 1;
                    }
                    if hist.was_matched == Some(false) && hist.last_hyp.is_some() {
                        frags += 1;
                    }
                    hist.last_hyp = Some(hid);
                    hist.was_matched = Some(true);
                }
                None => hist.was_matched = Some(false),
            }
        }
        prev = now;
    }

    let trajectories = per_gt.len();
    let (mut mt, mut ml) = (0usize, 0usize);
    for h in per_gt.values() {
        let coverage = h.matched as f64 / h.present as f64;
        if coverage >= MOSTLY_TRACKED {
            mt += 1;
        } else if coverage <= MOSTLY_LOST {
            ml += 1;
        }
    }
    let pt = trajectories - mt - ml;
    let pct = |n: usize| 100.0 * n as f64 / trajectories as f64;
    let recall = matched as f64 / gt_total as f64;
    let precision = if matched + fp > 0 {
        matched as f64 / (matched + fp) as f64
    } else {
        0.0
    };
    let f1 = if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    };
    Ok(MotReport {
        mota: 1.0 - (fn_ + fp + switches) as f64 / gt_total as f64,
        motp: if matched > 0 { iou_sum / matched as f64 } else { 0.0 },
        recall,
        precision,
        f1,
        far: if frames.is_empty() { 0.0 } else { fp as f64 / frames.len() as f64 * 100.0 },
        mt: pct(mt),
        pt: pct(pt),
        ml: pct(ml),
        id_switches: switches,
        fragmentations: frags,
        false_positives: fp,
        false_negatives: fn_,
        matches: matched,
        ground_truth: gt_total,
        frames: frames.len(),
        trajectories,
    })
}

impl MotReport {
    /// Flat `key = value` listing; floats use their shortest exact form.
    pub fn to_key_values(&self) -> String {
        let floats = [
            ("mota", self.mota),
            ("motp", self.motp),
            ("recall", self.recall),
            ("precision", self.precision),
            ("f1", self.f1),
            ("far", self.far),
            ("mt", self.mt),
            ("pt", self.pt),
            ("ml", self.ml),
        ];
        let counts = [
            ("id_switches", self.id_switches),
            ("fragmentations", self.fragmentations),
            ("fp", self.false_positives),
            ("fn", self.false_negatives),
            ("matches", self.matches),
            ("gt", self.ground_truth),
            ("frames", self.frames),
            ("trajectories", self.trajectories),
        ];
        let mut out = String::new();
        for (k, v) in floats {
            out.push_str(&format!("{k} = {v:?}\n"));
        }
        for (k, v) in counts {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

impl fmt::Display for MotReport {
    /// One header row and one value row; ratios shown as percentages.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>5} {:>5}",
            "MOTA", "MOTP", "Rcll", "Prcn", "F1", "FAR", "MT", "PT", "ML", "IDs", "FM"
        )?;
        writeln!(
            f,
            "{:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>5} {:>5}",
            100.0 * self.mota,
            100.0 * self.motp,
            100.0 * self.recall,
            100.0 * self.precision,
            100.0 * self.f1,
            self.far,
            self.mt,
            self.pt,
            self.ml,
            self.id_switches,
            self.fragmentations
        )
    }
}
