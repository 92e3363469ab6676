//! A dance longer than the model's context: segments per genre and music,
//! with each junction re-decoded from both neighbours.
//!
//! `cargo run --release --example long_dance [checkpoint]`

mod common;

use masked_motion::motion::{io, BeatTrack, FPS};
use masked_motion::sampler::{generate_long, junction_frames, GuidanceBundle};
use masked_motion::seed::rng_for;

fn main() -> anyhow::Result<()> {
    let s = common::setup()?;
    let m = &s.models;
    let frames = [120, 120, 100];
    let mut rng = rng_for(8, &[]);
    let bundles: Vec<GuidanceBundle> = [0, 3, 1]
        .iter()
        .zip(frames)
        .map(|(&genre, f)| {
            Ok(GuidanceBundle {
                genre: Some(genre),
                music: Some(BeatTrack::regular(128.0, 0.1, f, FPS, 0.9, &mut rng)?),
                ..GuidanceBundle::default()
            })
        })
        .collect::<masked_motion::error::Result<_>>()?;
    let dance = generate_long(m, &bundles, &frames, 4, s.config.s_total, 1.0, &mut rng)?;
    let pos = dance.joint_positions(&m.skeleton)?;
    let j = m.skeleton.joints();
    let speed = |t: usize| -> f32 {
        (0..j * 3).map(|k| (pos[(t + 1) * j * 3 + k] - pos[t * j * 3 + k]).powi(2)).sum::<f32>().sqrt() * FPS as f32 / j as f32
    };
    let typical = (0..dance.frames() - 1).map(speed).sum::<f32>() / (dance.frames() - 1) as f32;
    println!("{} frames, mean joint speed {typical:.3} m/s", dance.frames());
    for f in junction_frames(&frames) {
        println!("junction at frame {f}: speed {:.3} m/s", speed(f - 1));
    }
    let out = std::env::temp_dir().join("long_dance.dmot");
    io::write_motion(&out, &dance)?;
    println!("wrote {}", out.display());
    Ok(())
}
