//! The metric battery on generated clips: FID_k/FID_g against the corpus,
//! diversity, beat alignment, physical foot contact and foot skating.
//!
//! `cargo run --release --example evaluate_metrics [checkpoint]`

mod common;

use masked_motion::metrics::evaluate;
use masked_motion::motion::{MotionSequence, FPS};
use masked_motion::sampler::{parallel_decode, GuidanceBundle};
use masked_motion::seed::rng_for;

fn main() -> anyhow::Result<()> {
    let s = common::setup()?;
    let m = &s.models;
    let (_, held_out) = s.corpus.split(s.config.holdout);
    let mut generated = Vec::new();
    let mut beats = Vec::new();
    for (i, clip) in held_out.iter().enumerate() {
        let track = clip.beats.clone();
        let bundle = GuidanceBundle {
            genre: Some(clip.genre),
            music: Some(track.clone()),
            ..GuidanceBundle::default()
        };
        let (grid, _) = parallel_decode(m, &bundle, clip.motion.frames(), s.config.s_total, 1.0, &mut rng_for(4, &[i as u64]))?;
        generated.push((format!("gen_{}", clip.name()), m.tokenizer.decode(&grid, FPS)?));
        beats.push(Some(track));
    }
    let reference: Vec<MotionSequence> = s.corpus.clips.iter().map(|c| c.motion.clone()).collect();
    let report = evaluate(&generated, &reference, &beats, &m.skeleton)?;
    print!("generated vs corpus\n{}", report.to_text());

    let real: Vec<(String, MotionSequence)> = held_out.iter().map(|c| (c.name(), c.motion.clone())).collect();
    let real_beats: Vec<_> = held_out.iter().map(|c| Some(c.beats.clone())).collect();
    let baseline = evaluate(&real, &reference, &real_beats, &m.skeleton)?;
    print!("held-out real clips vs corpus\n{}", baseline.to_text());
    print!("per clip\n{}", report.clips_csv());
    Ok(())
}
