//! Command-line front end: tracking, proposal filtering, evaluation,
//! scenario synthesis and DETRAC conversion.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use saltrack::ingest::{
    convert_detrac, eval_frames, load_attention, parse_kitti_labels, read_proposals, read_tracks,
    records_to_observations, write_detections, write_kitti_labels, write_tracks, SequenceManifest, TrackRecord,
};
use saltrack::metrics::{evaluate, DEFAULT_IOU_MIN};
use saltrack::rpfilter::{
    combine_filters, downsample_attention, filter_proposals, nms, proposal_fraction, AnchorSpec,
    CombinedFilter, Direction, FilterCondition, Proposal,
};
use saltrack::synth::{generate, ScenarioSpec};
use saltrack::{AttentionKind, Error, Tracker, TrackerConfig};

/// Exit status for bad input (files, flags, formats).
pub const EXIT_INPUT: i32 = 2;
/// Exit status for failures inside the pipeline itself.
pub const EXIT_INTERNAL: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "saltrack", version, about = "Attention-guided proposal filtering and particle-PHD tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Objectness,
    Subjectness,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FilterMode {
    /// Top-n anchors wherever attention is at least the threshold.
    Attended,
    /// Attended top-n plus a smaller top-n everywhere else.
    Combined,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track one sequence and write its track file.
    Track {
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the manifest's attention kind; `none` ignores attention.
        #[arg(long, value_enum)]
        attention_kind: Option<KindArg>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Filter a proposal tensor by attention and report the kept fraction.
    FilterRps {
        proposals: PathBuf,
        #[arg(long)]
        attention: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 0.4)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = FilterMode::Attended)]
        mode: FilterMode,
        /// Top-n outside attention in combined mode.
        #[arg(long, default_value_t = 2)]
        n_unattended: usize,
        /// Apply NMS at this IoU to the written proposals.
        #[arg(long)]
        nms: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score a track file against KITTI-format ground truth.
    Evaluate {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_IOU_MIN)]
        iou_min: f64,
        /// Also write the `key = value` report here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic sequence from a scenario file.
    Synth {
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "synth")]
        name: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a DETRAC XML annotation into ground truth, detections and a manifest.
    ConvertDetrac {
        xml: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 960)]
        width: usize,
        #[arg(long, default_value_t = 540)]
        height: usize,
    },
}

/// Runs the CLI with `args` (program name first) and returns the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::SingularInnovation | Error::ZeroMass) => EXIT_INTERNAL,
        _ => EXIT_INPUT,
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Track {
            manifest,
            config,
            seed,
            attention_kind,
            output,
        } => track(&manifest, config.as_deref(), seed, attention_kind, &output, out),
        Command::FilterRps {
            proposals,
            attention,
            n,
            threshold,
            mode,
            n_unattended,
            nms,
            output,
        } => filter_rps(
            &proposals,
            &attention,
            n,
            threshold,
            mode,
            n_unattended,
            nms,
            output.as_deref(),
            out,
        ),
        Command::Evaluate {
            tracks,
            gt,
            iou_min,
            output,
        } => evaluate_cmd(&tracks, &gt, iou_min, output.as_deref(), out),
        Command::Synth {
            scenario,
            out_dir,
            name,
            seed,
        } => synth(&scenario, &out_dir, &name, seed, out),
        Command::ConvertDetrac {
            xml,
            out_dir,
            stride,
            width,
            height,
        } => detrac(&xml, &out_dir, stride, width, height, out),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn track(
    manifest: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    kind: Option<KindArg>,
    output: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read(p)?.parse::<TrackerConfig>().with_context(|| format!("in {}", p.display()))?,
        None => TrackerConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let m = SequenceManifest::load(manifest)?;
    let kind = match kind {
        None => Some(m.attention_kind),
        Some(KindArg::Objectness) => Some(AttentionKind::Objectness),
        Some(KindArg::Subjectness) => Some(AttentionKind::Subjectness),
        Some(KindArg::None) => None,
    };
    let observations = m.observations(kind)?;
    let mut tracker = Tracker::new(cfg)?;
    let outputs = tracker.run(&observations)?;
    let records: Vec<TrackRecord> = outputs.iter().map(TrackRecord::from).collect();
    write_tracks(&records, output)?;
    writeln!(
        out,
        "{}: {} frames, {} boxes, {} tracks -> {}",
        m.sequence,
        m.frames,
        records.len(),
        tracker.tracks().len() + tracker.terminated().len(),
        output.display()
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn filter_rps(
    proposals: &Path,
    attention: &Path,
    n: usize,
    threshold: f64,
    mode: FilterMode,
    n_unattended: usize,
    nms_iou: Option<f64>,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let tensor = read_proposals(proposals)?;
    let grid = load_attention(attention, AttentionKind::Objectness)?;
    let grid = downsample_attention(&grid, tensor.height(), tensor.width())?;
    let spec = AnchorSpec::standard();
    let frame = (tensor.width() as f64 * spec.stride, tensor.height() as f64 * spec.stride);
    let kept = match mode {
        FilterMode::Attended => {
            let cond = FilterCondition::new(threshold, Direction::AtLeast, n)?;
            filter_proposals(&tensor, &grid, &cond, &spec, frame)?
        }
        FilterMode::Combined => {
            let params = CombinedFilter {
                threshold,
                n_attended: n,
                n_unattended,
            };
            combine_filters(&tensor, &grid, &spec, frame, &params)?
        }
    };
    let fraction = proposal_fraction(kept.len(), &tensor);
    writeln!(out, "RP fraction: {:.4}% ({} of {})", 100.0 * fraction, kept.len(), tensor.len())?;
    if let Some(path) = output {
        let written = match nms_iou {
            Some(t) => nms(&kept, t),
            None => kept,
        };
        fs::write(path, proposals_csv(&written)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn proposals_csv(proposals: &[Proposal]) -> String {
    let mut s = String::from("left,top,right,bottom,objectness,row,col,anchor\n");
    for p in proposals {
        let b = &p.bbox;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            b.left(),
            b.top(),
            b.right(),
            b.bottom(),
            p.objectness,
            p.source_location.0,
            p.source_location.1,
            p.anchor
        ));
    }
    s
}

fn evaluate_cmd(tracks: &Path, gt: &Path, iou_min: f64, output: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    if !(0.0..=1.0).contains(&iou_min) {
        bail!(Error::InvalidValue(format!("--iou-min {iou_min} outside [0, 1]")));
    }
    let hypotheses = read_tracks(tracks)?;
    let truth = parse_kitti_labels(gt)?;
    let report = evaluate(&eval_frames(&truth, &hypotheses, None), iou_min)?;
    write!(out, "{report}\n{}", report.to_key_values())?;
    if let Some(path) = output {
        fs::write(path, report.to_key_values()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn synth(scenario: &Path, out_dir: &Path, name: &str, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let mut spec: ScenarioSpec = read(scenario)?
        .parse()
        .with_context(|| format!("in {}", scenario.display()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let manifest = generate(&spec)?.write(out_dir, name)?;
    writeln!(out, "{}", manifest.display())?;
    Ok(())
}

fn detrac(xml: &Path, out_dir: &Path, stride: usize, width: usize, height: usize, out: &mut dyn Write) -> Result<()> {
    let records = convert_detrac(&read(xml)?, &xml.display().to_string(), stride)?;
    let frames = records.iter().map(|r| r.frame + 1).max().unwrap_or(0);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let name = xml
        .file_stem()
        .map_or_else(|| "detrac".to_string(), |s| s.to_string_lossy().into_owned());
    let gt = out_dir.join("gt.txt");
    let detections = out_dir.join("detections.csv");
    write_kitti_labels(&records, &gt)?;
    write_detections(&records_to_observations(&records, frames)?, &detections)?;
    let manifest = SequenceManifest {
        sequence: name.clone(),
        frames,
        width,
        height,
        detections,
        images: None,
        attention: None,
        attention_kind: AttentionKind::Objectness,
        ground_truth: Some(gt),
    };
    let path = out_dir.join(format!("{name}.manifest"));
    manifest.write(&path)?;
    writeln!(out, "{}: {} frames, {} boxes", path.display(), frames, records.len())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("saltrack").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(call(&["frobnicate"]).0, EXIT_INPUT);
        assert_eq!(call(&["track"]).0, EXIT_INPUT);
        assert_eq!(call(&["--help"]).0, 0);
    }

    #[test]
    fn missing_files_are_input_errors() {
        let (code, _, err) = call(&["evaluate", "--tracks", "/nonexistent/t.csv", "--gt", "/nonexistent/gt.txt"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("nonexistent"));
    }

    #[test]
    fn internal_failures_map_to_one() {
        assert_eq!(exit_code(&anyhow::Error::new(Error::ZeroMass)), EXIT_INTERNAL);
        assert_eq!(exit_code(&anyhow::Error::new(Error::EmptyGroundTruth)), EXIT_INPUT);
    }
}
