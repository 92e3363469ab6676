//! The procedural corpus: genre templates locked to a beat track, forward
//! kinematics, foot contacts and the dance beats the metrics extract.

use masked_motion::error::Result;
use masked_motion::metrics::{bas_against, extract_dance_beats};
use masked_motion::motion::{derive_kinematics, joint, synth_corpus, CorpusSpec, Skeleton, FPS};

fn main() -> Result<()> {
    let skel = Skeleton::desk();
    let spec = CorpusSpec {
        seed: 7,
        genres: vec!["hiphop".into(), "house".into()],
        clips_per_genre: 2,
        clip_seconds: 6.0,
        fps: FPS,
    };
    let corpus = synth_corpus(&spec, &skel)?;
    let (l_foot, r_foot) = skel.feet();
    for clip in &corpus.clips {
        let m = &clip.motion;
        let pos = m.joint_positions(&skel)?;
        let j = skel.joints();
        let head_z: Vec<f32> = (0..m.frames()).map(|t| pos[(t * j + joint::HEAD) * 3 + 2]).collect();
        let (lo, hi) = head_z.iter().fold((f32::MAX, f32::MIN), |(a, b), &z| (a.min(z), b.max(z)));
        let contacts = m.contact_slice();
        let planted = (0..m.frames()).filter(|&t| m.row(t)[contacts.start] > 0.5).count();
        let dance = extract_dance_beats(m, &skel)?;
        println!(
            "{}: {} frames at {:.0} bpm, head height {lo:.2}..{hi:.2} m, {} foot planted {planted}/{} frames, {} dance beats, BAS {:.3}",
            clip.name(),
            m.frames(),
            clip.tempo(),
            skel.name(l_foot),
            m.frames(),
            dance.len(),
            bas_against(m, &clip.beats, &skel)?
        );
    }
    let (vel, acc) = derive_kinematics(&corpus.clips[0].motion, &skel)?;
    println!(
        "first clip: {} velocity and {} acceleration samples, {} at rest {:?}",
        vel.len(),
        acc.len(),
        skel.name(r_foot),
        skel.rest_offset(r_foot)
    );
    Ok(())
}
