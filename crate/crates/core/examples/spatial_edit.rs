//! Pin some joints on some frames and regenerate the rest: pose-adapter
//! guidance, then inference-time token optimisation against the constraint.
//!
//! `cargo run --release --example spatial_edit [checkpoint]`

mod common;

use masked_motion::motion::{joint, PoseConstraint};
use masked_motion::sampler::{edit_spatial, GuidanceBundle, GuidanceWeights};
use masked_motion::seed::rng_for;

fn main() -> anyhow::Result<()> {
    let s = common::setup()?;
    let m = &s.models;
    let (_, held_out) = s.corpus.split(s.config.holdout);
    let clip = held_out[0];
    let source = clip.motion.slice(0, 64)?;

    // both hands follow the source everywhere, the rest is free
    let hands = PoseConstraint::joints_everywhere(&source, &m.skeleton, &[joint::L_HAND, joint::R_HAND])?;
    let mut rng = rng_for(3, &[]);
    let random = PoseConstraint::sample(&source, &m.skeleton, &mut rng)?;
    let bundle = GuidanceBundle {
        genre: Some(clip.genre),
        weights: GuidanceWeights {
            text: 1.0,
            ..GuidanceWeights::default()
        },
        ..GuidanceBundle::default()
    };
    for (name, c) in [("both hands", hands), ("random joints", random)] {
        let e = edit_spatial(m, &source, &c, &bundle, s.config.s_total, 1.0, s.config.itto, &mut rng)?;
        let h = &e.itto.history;
        println!(
            "{name}: {} constrained entries, joint distance {:.5} -> {:.5} (ITTO {} iterations, D {:.5} -> {:.5})",
            c.valid_count(),
            e.joint_dist_pre,
            e.joint_dist_post,
            h.len().saturating_sub(1),
            h.first().copied().unwrap_or(f32::NAN),
            e.itto.final_
        );
    }
    Ok(())
}
