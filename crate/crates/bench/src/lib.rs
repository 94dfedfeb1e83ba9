//! Shared fixtures for the pipeline benchmarks.

use saltrack::model::{AttentionGrid, AttentionKind, BBox, ClassLabel};
use saltrack::rpfilter::ProposalTensor;
use saltrack::synth::{ScenarioSpec, TargetSpec};

/// Proposal tensor with objectness from a cheap deterministic hash.
pub fn proposal_tensor(h: usize, w: usize, a: usize) -> ProposalTensor {
    let entries = (0..h * w * a)
        .map(|i| {
            let x = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
            [(x % 1000) as f32 / 1000.0, 0.05, -0.05, 0.1, -0.1]
        })
        .collect();
    ProposalTensor::new(h, w, a, entries).expect("consistent dimensions")
}

/// Grid with roughly `fraction` of its cells at 1.0.
pub fn sparse_attention(h: usize, w: usize, fraction: f64) -> AttentionGrid {
    let cutoff = (fraction * 1000.0) as u64;
    let values = (0..h * w)
        .map(|i| {
            let x = ((i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03) >> 40) % 1000;
            if x < cutoff {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    AttentionGrid::new(w, h, values, AttentionKind::Objectness).expect("binary values")
}

/// `targets` well-separated constant-velocity targets.
pub fn crowd(frames: usize, targets: usize) -> ScenarioSpec {
    let targets = (0..targets)
        .map(|i| {
            let (col, row) = ((i % 8) as f64, (i / 8) as f64);
            TargetSpec {
                birth: 0,
                death: frames,
                initial: BBox::new(20.0 + col * 150.0, 20.0 + row * 90.0, 60.0 + col * 150.0, 50.0 + row * 90.0)
                    .expect("positive size"),
                velocity: (1.0, 0.5),
                class_label: ClassLabel::Car,
            }
        })
        .collect();
    ScenarioSpec {
        frames,
        width: 1280,
        height: 720,
        targets,
        noise_sigma: 1.0,
        seed: 1,
        ..Default::default()
    }
}
