//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero on any failure.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saltrack::association::{hungarian, CostMatrix, TrackId};
use saltrack::ingest::{eval_frames, write_attention_pgm, write_proposals, TrackRecord};
use saltrack::metrics::{evaluate, EvalFrame};
use saltrack::model::clamp_box;
use saltrack::phd::{
    attention_refine, residual_resample, AttentionIndex, KalmanModel, MotionEstimate, Particle, ParticleSet,
    RefineOutcome, RefineParams, ResampleParams,
};
use saltrack::rpfilter::{
    decode_bbox, filter_proposals, generate_anchors, nms, AnchorSpec, Direction, FilterCondition, Proposal,
    ProposalTensor, MAX_LOG_SCALE,
};
use saltrack::synth::{generate, AttentionMode, Scenario, ScenarioSpec, TargetSpec};
use saltrack::{iou, AttentionGrid, AttentionKind, BBox, ClassLabel, Tracker, TrackerConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_saltrack")
}

// ------------------------------------------------------------------- 1

fn rp_fraction_via_cli(dir: &Path, active: usize, n: usize, seed: u64) -> Result<(f64, f64), String> {
    let (h, w, a) = (64usize, 64usize, 12usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<[f32; 5]> = (0..h * w * a)
        .map(|_| {
            [
                rng.random::<f32>(),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ]
        })
        .collect();
    let tensor = ProposalTensor::new(h, w, a, entries).map_err(|e| e.to_string())?;
    let mut locations: Vec<usize> = (0..h * w).collect();
    locations.shuffle(&mut rng);
    let mut values = vec![0.0f32; h * w];
    for &l in &locations[..active] {
        values[l] = 1.0;
    }
    let grid = AttentionGrid::new(w, h, values, AttentionKind::Objectness).map_err(|e| e.to_string())?;
    let (tp, ap) = (dir.join(format!("p{seed}.rpt")), dir.join(format!("a{seed}.pgm")));
    write_proposals(&tensor, &tp).map_err(|e| e.to_string())?;
    write_attention_pgm(&grid, &ap).map_err(|e| e.to_string())?;

    let start = Instant::now();
    let out = Command::new(bin())
        .args(["filter-rps", tp.to_str().unwrap(), "--attention", ap.to_str().unwrap(), "--n"])
        .arg(n.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let pct = text
        .strip_prefix("RP fraction: ")
        .and_then(|s| s.split('%').next())
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| format!("unexpected output {text:?}"))?;
    Ok((pct, elapsed))
}

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    // 10.3% and 10.9% of 4096 locations
    let (p4, t4) = rp_fraction_via_cli(dir.path(), 422, 4, 1)?;
    let (p1, t1) = rp_fraction_via_cli(dir.path(), 446, 1, 2)?;
    check(
        (p4 - 3.44).abs() <= 0.05 && (p1 - 0.91).abs() <= 0.05 && t4 < 1.0 && t1 < 1.0,
        format!("n=4: {p4:.4}% ({t4:.2}s), n=1: {p1:.4}% ({t1:.2}s)"),
    )
}

// ------------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let all_sizes = [4.0, 8.0, 16.0, 32.0];
    let all_ratios = [0.5, 1.0, 2.0];
    for case in 0..200 {
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let sizes: Vec<f64> = all_sizes[..rng.random_range(1..=4)].to_vec();
        let ratios: Vec<f64> = all_ratios[..rng.random_range(1..=3)].to_vec();
        let spec = AnchorSpec::new(sizes, ratios, 16.0).map_err(|e| e.to_string())?;
        let a = spec.anchors_per_location();
        let n = rng.random_range(1..=a);
        let threshold = 0.4;
        let direction = if rng.random_bool(0.5) { Direction::AtLeast } else { Direction::Below };
        let entries: Vec<[f32; 5]> = (0..h * w * a)
            .map(|_| {
                // coarse objectness values so ties occur
                let obj = rng.random_range(0..8) as f32 / 8.0;
                // small shifts keep every decoded centre inside the frame
                [
                    obj,
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let values: Vec<f32> = (0..h * w)
            .map(|_| if rng.random_bool(0.2) { 0.4 } else { rng.random::<f32>() })
            .collect();
        let tensor = ProposalTensor::new(h, w, a, entries).map_err(|e| e.to_string())?;
        let grid = AttentionGrid::new(w, h, values, AttentionKind::Objectness).map_err(|e| e.to_string())?;
        let cond = FilterCondition::new(threshold, direction, n).map_err(|e| e.to_string())?;
        let frame = (w as f64 * 16.0, h as f64 * 16.0);
        let got = filter_proposals(&tensor, &grid, &cond, &spec, frame).map_err(|e| e.to_string())?;

        // Brute force: every (location, anchor) pair, kept when the location
        // passes and fewer than n anchors at it rank strictly ahead.
        let anchors = generate_anchors(&spec, h, w);
        let mut expected = Vec::new();
        for loc in 0..h * w {
            let v = grid.values()[loc];
            let passes = match direction {
                Direction::AtLeast => v >= threshold as f32,
                Direction::Below => v < threshold as f32,
            };
            if !passes {
                continue;
            }
            for k in 0..a {
                let e = tensor.entry(loc, k);
                let ahead = (0..a)
                    .filter(|&j| {
                        let o = tensor.entry(loc, j)[0];
                        o > e[0] || (o == e[0] && j < k)
                    })
                    .count();
                if ahead < n {
                    let reg = [
                        e[1] as f64,
                        e[2] as f64,
                        (e[3] as f64).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
                        (e[4] as f64).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
                    ];
                    let decoded = decode_bbox(&anchors[loc * a + k], reg).map_err(|e| e.to_string())?;
                    let b = clamp_box(&decoded, frame.0, frame.1).map_err(|e| e.to_string())?;
                    expected.push((loc, k, b.corners().map(f64::to_bits), (e[0] as f64).to_bits()));
                }
            }
        }
        let mut actual: Vec<_> = got
            .iter()
            .map(|p| {
                (
                    p.source_location.0 * w + p.source_location.1,
                    p.anchor,
                    p.bbox.corners().map(f64::to_bits),
                    p.objectness.to_bits(),
                )
            })
            .collect();
        expected.sort();
        actual.sort();
        if expected != actual {
            return Err(format!("case {case}: {} proposals vs oracle {}", actual.len(), expected.len()));
        }
    }
    Ok("200 grids match the enumeration oracle".into())
}

// ------------------------------------------------------------------- 3

fn best_by_permutation(r: usize, c: usize, cost: &[f64]) -> f64 {
    fn go(row: usize, r: usize, c: usize, used: &mut Vec<bool>, cost: &[f64], acc: f64, best: &mut f64, skips: usize) {
        if row == r {
            *best = best.min(acc);
            return;
        }
        for col in 0..c {
            if !used[col] {
                used[col] = true;
                go(row + 1, r, c, used, cost, acc + cost[row * c + col], best, skips);
                used[col] = false;
            }
        }
        // rows beyond the column count stay unassigned
        if skips > 0 {
            go(row + 1, r, c, used, cost, acc, best, skips - 1);
        }
    }
    let mut best = f64::INFINITY;
    go(0, r, c, &mut vec![false; c], cost, 0.0, &mut best, r.saturating_sub(c));
    best
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for case in 0..1000 {
        let (r, c) = (rng.random_range(1..=6), rng.random_range(1..=6));
        // dyadic entries so sums are exact in any order
        let data: Vec<f64> = (0..r * c).map(|_| rng.random_range(0..=1024) as f64 / 1024.0).collect();
        let costs = CostMatrix::new(r, c, data.clone()).map_err(|e| e.to_string())?;
        let a = hungarian(&costs, 1.0);
        let got = a.total_cost(&costs);
        let best = best_by_permutation(r, c, &data);
        if a.pairs.len() != r.min(c) || got != best {
            return Err(format!("case {case}: {r}x{c} cost {got} vs {best}"));
        }
    }
    Ok("1000 matrices at the permutation minimum".into())
}

// ------------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for case in 0..500 {
        let n = rng.random_range(0..=20);
        let props: Vec<Proposal> = (0..n)
            .map(|i| {
                let (x, y) = (rng.random_range(0.0..60.0), rng.random_range(0.0..60.0));
                let (w, h) = (rng.random_range(5.0..30.0), rng.random_range(5.0..30.0));
                Proposal {
                    bbox: BBox::new(x, y, x + w, y + h).unwrap(),
                    objectness: rng.random_range(0..10) as f64 / 10.0,
                    source_location: (i, 0),
                    anchor: 0,
                    source_layer: 0,
                }
            })
            .collect();
        let thr = rng.random_range(0.1..0.9);
        // Reference: a box survives iff no surviving box ranked above it
        // overlaps it at the threshold; rank = objectness, then input order.
        let mut rank: Vec<usize> = (0..n).collect();
        rank.sort_by(|&i, &j| props[j].objectness.partial_cmp(&props[i].objectness).unwrap().then(i.cmp(&j)));
        let mut alive = vec![false; n];
        for (pos, &i) in rank.iter().enumerate() {
            alive[i] = rank[..pos].iter().all(|&j| !alive[j] || iou(&props[j].bbox, &props[i].bbox) < thr);
        }
        let expected: Vec<usize> = rank.iter().copied().filter(|&i| alive[i]).collect();
        let got: Vec<usize> = nms(&props, thr).iter().map(|p| p.source_location.0).collect();
        if got != expected {
            return Err(format!("case {case}: {got:?} vs {expected:?}"));
        }
    }
    Ok("500 sets match the quadratic reference".into())
}

// --------------------------------------------------------------- 5, 6

fn three_target_spec(frames: usize) -> ScenarioSpec {
    let t = |l: f64, top: f64, w: f64, h: f64, v: (f64, f64)| TargetSpec {
        birth: 0,
        death: frames,
        initial: BBox::new(l, top, l + w, top + h).unwrap(),
        velocity: v,
        class_label: ClassLabel::Car,
    };
    ScenarioSpec {
        frames,
        width: 640,
        height: 480,
        targets: vec![
            t(20.0, 40.0, 40.0, 30.0, (3.0, 1.0)),
            t(500.0, 100.0, 30.0, 50.0, (-2.5, 0.5)),
            t(100.0, 380.0, 50.0, 40.0, (2.0, -1.5)),
        ],
        ..Default::default()
    }
}

fn track_and_score(s: &Scenario, config: TrackerConfig) -> Result<(saltrack::metrics::MotReport, usize, f64), String> {
    let start = Instant::now();
    let mut tracker = Tracker::new(config).map_err(|e| e.to_string())?;
    let out = tracker.run(&s.observations()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let records: Vec<TrackRecord> = out.iter().map(TrackRecord::from).collect();
    let frames = eval_frames(&s.ground_truth_records(), &records, Some(s.spec.frames));
    let report = evaluate(&frames, 0.5).map_err(|e| e.to_string())?;
    Ok((report, tracker.terminated().len(), elapsed))
}

fn criterion_5() -> Outcome {
    let s = generate(&three_target_spec(100)).map_err(|e| e.to_string())?;
    let (r, _, secs) = track_and_score(&s, TrackerConfig::default())?;
    check(
        r.mota == 1.0 && r.id_switches == 0 && r.fragmentations == 0 && secs < 5.0,
        format!("MOTA {} IDs {} FM {} in {secs:.2}s", r.mota, r.id_switches, r.fragmentations),
    )
}

fn criterion_6() -> Outcome {
    let spec = ScenarioSpec {
        dropout_period: Some(10),
        ..three_target_spec(100)
    };
    let s = generate(&spec).map_err(|e| e.to_string())?;
    let (r, terminated, secs) = track_and_score(&s, TrackerConfig::default())?;
    let blind = generate(&ScenarioSpec {
        attention: AttentionMode::None,
        ..spec
    })
    .map_err(|e| e.to_string())?;
    let config = TrackerConfig {
        refine_enabled: false,
        use_attention: false,
        ..Default::default()
    };
    let (rb, _, secs_b) = track_and_score(&blind, config)?;
    check(
        terminated == 0 && r.id_switches == 0 && secs < 10.0 && secs_b < 10.0,
        format!(
            "with attention: terminations {terminated}, IDs {}, FM {}; without: FM {} ({secs:.2}s, {secs_b:.2}s)",
            r.id_switches, r.fragmentations, rb.fragmentations
        ),
    )
}

// ------------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    // 10x10 predicted box at (10, 10); `active` of its pixels are on, filled
    // column by column, plus a blob to the right for the correction to find.
    let outcome_for = |active: usize| {
        let (w, h) = (40usize, 40usize);
        let mut values = vec![0.0f32; w * h];
        for i in 0..active {
            let (x, y) = (10 + i / 10, 10 + i % 10);
            values[y * w + x] = 1.0;
        }
        if active > 0 && active < 100 {
            for y in 10..20 {
                for x in 20..23 {
                    values[y * w + x] = 1.0;
                }
            }
        }
        let grid = AttentionGrid::new(w, h, values, AttentionKind::Objectness).unwrap();
        let index = AttentionIndex::new(&grid, 0.4);
        let b = BBox::new(10.0, 10.0, 20.0, 20.0).unwrap();
        (index.occupancy(&b), attention_refine(&b, &index, &RefineParams::default()))
    };
    let cases = [(0, "Reject"), (29, "Corrected"), (30, "Keep"), (100, "Keep")];
    let mut detail = Vec::new();
    let mut ok = true;
    for (active, want) in cases {
        let (occ, got) = outcome_for(active);
        let name = match got {
            RefineOutcome::Keep => "Keep",
            RefineOutcome::Corrected(_) => "Corrected",
            RefineOutcome::Reject => "Reject",
        };
        ok &= name == want;
        detail.push(format!("{occ:.2}->{name}"));
    }
    check(ok, detail.join(", "))
}

// ------------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let params = ResampleParams::default();
    for case in 0..10_000 {
        let len = rng.random_range(1..=40);
        let n = rng.random_range(1..=120);
        let raw: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() })
            .collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            continue;
        }
        let set = ParticleSet {
            particles: raw
                .iter()
                .map(|w| Particle {
                    state: b,
                    weight: w / total,
                })
                .collect(),
            owner: TrackId(0),
        };
        let motion = MotionEstimate::from_velocity(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let r = residual_resample(&set, &motion, &params, n, &mut rng).map_err(|e| e.to_string())?;
        let weights = set.weights();
        let floors_hold = r
            .offspring
            .iter()
            .zip(&weights)
            .all(|(o, w)| *o >= (n as f64 * w).floor() as usize);
        if !floors_hold || r.set.len() != n || r.offspring.iter().sum::<usize>() != n {
            return Err(format!("case {case}: offspring {:?} for weights {weights:?}", r.offspring));
        }
    }
    Ok("10000 weight vectors".into())
}

// ------------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let model = KalmanModel::default();
    let mut state = model.initiate(&BBox::new(100.0, 100.0, 140.0, 130.0).unwrap());
    let mut worst = f64::INFINITY;
    for step in 0..10_000 {
        state = model.predict(&state);
        if rng.random_bool(0.8) {
            let b = state.to_bbox();
            let (cx, cy) = b.center();
            let z = BBox::from_center(
                cx + rng.random_range(-20.0..20.0),
                cy + rng.random_range(-20.0..20.0),
                rng.random_range(5.0..80.0),
                rng.random_range(5.0..80.0),
            )
            .unwrap();
            state = model.correct(&state, &z).map_err(|e| format!("step {step}: {e}"))?;
        }
        let min = state.covariance.symmetric_eigen().eigenvalues.min();
        worst = worst.min(min);
        if min < -1e-9 {
            return Err(format!("step {step}: eigenvalue {min}"));
        }
    }
    Ok(format!("min eigenvalue {worst:.3e}"))
}

// ------------------------------------------------------------------ 10

fn criterion_10() -> Outcome {
    let b = |x: f64| BBox::new(x, 0.0, x + 10.0, 10.0).unwrap();
    let toy: Vec<EvalFrame> = (0..10)
        .map(|k| EvalFrame {
            ground_truth: vec![(1, b(k as f64))],
            hypotheses: match k {
                3 | 4 => vec![],
                k if k >= 7 => vec![(2, b(k as f64))],
                _ => vec![(1, b(k as f64))],
            },
        })
        .collect();
    let mota = evaluate(&toy, 0.5).map_err(|e| e.to_string())?.mota;
    if (mota - 0.7).abs() > 1e-12 {
        return Err(format!("toy MOTA {mota}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let frames: Vec<EvalFrame> = (0..30)
        .map(|k| EvalFrame {
            ground_truth: (0..4)
                .filter(|_| rng.random_bool(0.8))
                .map(|g| (g, b(g as f64 * 12.0 + k as f64)))
                .collect(),
            hypotheses: (0..6)
                .filter_map(|h| {
                    let shift = rng.random_range(-4.0..4.0);
                    rng.random_bool(0.7).then(|| (h, b((h % 4) as f64 * 12.0 + k as f64 + shift)))
                })
                .collect(),
        })
        .collect();
    let base = evaluate(&frames, 0.5).map_err(|e| e.to_string())?;
    for trial in 0..100 {
        let mut ids: Vec<u64> = (0..1000).collect();
        ids.shuffle(&mut rng);
        let map: HashMap<u64, u64> = (0..6).map(|h| (h, ids[h as usize])).collect();
        let relabeled: Vec<EvalFrame> = frames
            .iter()
            .map(|f| EvalFrame {
                ground_truth: f.ground_truth.clone(),
                hypotheses: f.hypotheses.iter().map(|(h, bx)| (map[h], *bx)).collect(),
            })
            .collect();
        if evaluate(&relabeled, 0.5).map_err(|e| e.to_string())? != base {
            return Err(format!("relabeling {trial} changed the report"));
        }
    }
    Ok(format!("MOTA {mota}; 100 relabelings invariant"))
}

// ------------------------------------------------------------------ 11

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scenario = dir.path().join("scenario.txt");
    std::fs::write(
        &scenario,
        "frames = 60\nwidth = 320\nheight = 240\nmiss = 0.15\nclutter = 1.5\nsigma = 1.5\nseed = 11\n\
         target = 0 60 10 20 40 50 2 1\ntarget = 5 50 250 150 280 190 -2 -1\ntarget = 10 60 100 200 130 230 1 -2\n",
    )
    .map_err(|e| e.to_string())?;
    let out_dir = dir.path().join("seq");
    let status = Command::new(bin())
        .args(["synth", scenario.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap(), "--name", "det"])
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    let manifest = out_dir.join("det.manifest");
    let mut outputs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("tracks{run}.csv"));
        let o = Command::new(bin())
            .args(["track", manifest.to_str().unwrap(), "--seed", "7", "--output", path.to_str().unwrap()])
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    check(
        outputs[0] == outputs[1] && !outputs[0].is_empty(),
        format!("{} bytes, identical: {}", outputs[0].len(), outputs[0] == outputs[1]),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("RP-fraction arithmetic", criterion_1),
        ("RP-filter oracle equivalence", criterion_2),
        ("Hungarian optimality", criterion_3),
        ("NMS oracle equivalence", criterion_4),
        ("Tracker perfect-input fixed point", criterion_5),
        ("Attention-assisted dropout recovery", criterion_6),
        ("Occupancy rule boundary", criterion_7),
        ("Resampling floor guarantee", criterion_8),
        ("Kalman PSD stability", criterion_9),
        ("Metrics toy check", criterion_10),
        ("Determinism", criterion_11),
    ];
    let mut results = BTreeMap::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = f();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {:>2}. {name}: {detail}", i + 1);
        results.insert(i + 1, outcome.is_ok());
    }
    let failed = results.values().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
