//! Genre- and music-guided generation by parallel decoding. Compares beat
//! alignment against the conditioning track and against someone else's.
//!
//! `cargo run --release --example generate_with_music [checkpoint]`

mod common;

use masked_motion::metrics::{bas_against, sign_test_p};
use masked_motion::motion::FPS;
use masked_motion::sampler::{parallel_decode, GuidanceBundle, GuidanceWeights};
use masked_motion::seed::rng_for;

fn main() -> anyhow::Result<()> {
    let s = common::setup()?;
    let m = &s.models;
    let frames = 160;
    let clips = &s.corpus.clips;
    let mut wins = 0;
    for (i, clip) in clips.iter().enumerate().step_by(2) {
        let beats = clip.beats.slice(0, frames)?;
        let other = clips[(i + 5) % clips.len()].beats.slice(0, frames)?;
        let bundle = GuidanceBundle {
            genre: Some(clip.genre),
            music: Some(beats.clone()),
            weights: GuidanceWeights {
                text: 0.0,
                music: 1.0,
                ..GuidanceWeights::default()
            },
            ..GuidanceBundle::default()
        };
        let (grid, trace) = parallel_decode(m, &bundle, frames, s.config.s_total, 1.0, &mut rng_for(1, &[i as u64]))?;
        let dance = m.tokenizer.decode(&grid, FPS)?;
        let (own, perm) = (bas_against(&dance, &beats, &m.skeleton)?, bas_against(&dance, &other, &m.skeleton)?);
        wins += (own > perm) as usize;
        if i == 0 {
            println!("masked tokens after each step: {:?}", trace.masked_counts(grid.len()));
        }
        println!("{} at {:.0} bpm: BAS own {own:.3}, other track {perm:.3}", clip.name(), beats.tempo());
    }
    let n = clips.len().div_ceil(2);
    println!("own track wins {wins}/{n}, sign-test p {:.2e}", sign_test_p(wins, n)?);
    Ok(())
}
