use std::f32::consts::{PI, TAU};

use rand::Rng;
use rayon::prelude::*;

use super::skeleton::joint;
use super::{BeatTrack, MotionSequence, Skeleton};
use crate::error::{Error, Result};
use crate::seed::{rng_for, tag};

/// Genre vocabulary; a genre's id is its index here.
pub const GENRES: [&str; 8] = [
    "hiphop", "popping", "locking", "house", "krump", "jazz", "ballet", "waacking",
];

pub fn genre_id(name: &str) -> Result<usize> {
    GENRES
        .iter()
        .position(|g| *g == name)
        .ok_or_else(|| Error::UnknownGenre(name.to_string()))
}

/// Style template shared by every clip of a genre.
#[derive(Clone, Copy, Debug)]
struct Template {
    arm_amp: f32,
    arm_axis: [f32; 3],
    /// Phase of the right arm relative to the left (0 mirrors, pi alternates).
    arm_phase_r: f32,
    hand_gain: f32,
    hand_raise: f32,
    spine_amp: f32,
    spine_axis: [f32; 3],
    head_amp: f32,
    bounce: f32,
    sway: f32,
    lift: f32,
}

const fn tpl(
    arm_amp: f32,
    arm_axis: [f32; 3],
    arm_phase_r: f32,
    hand_gain: f32,
    hand_raise: f32,
    spine_amp: f32,
    spine_axis: [f32; 3],
    head_amp: f32,
    bounce: f32,
    sway: f32,
    lift: f32,
) -> Template {
    Template {
        arm_amp,
        arm_axis,
        arm_phase_r,
        hand_gain,
        hand_raise,
        spine_amp,
        spine_axis,
        head_amp,
        bounce,
        sway,
        lift,
    }
}

const TEMPLATES: [Template; 8] = [
    tpl(0.16, [0.0, 0.8, 0.6], PI, 1.6, 0.0, 0.04, [0.0, 1.0, 0.0], 0.03, 0.030, 0.02, 0.08),
    tpl(0.12, [1.0, 0.0, 0.0], 0.0, 1.3, 0.15, 0.02, [1.0, 0.0, 0.0], 0.04, 0.015, 0.00, 0.03),
    tpl(0.20, [0.6, 0.0, 0.8], 0.0, 1.8, 0.10, 0.03, [0.0, 1.0, 0.0], 0.02, 0.025, 0.03, 0.06),
    tpl(0.08, [0.0, 1.0, 0.0], PI, 1.4, 0.0, 0.03, [1.0, 0.0, 0.0], 0.02, 0.020, 0.05, 0.10),
    tpl(0.24, [0.7, 0.7, 0.0], PI, 1.5, 0.05, 0.06, [0.0, 0.8, 0.6], 0.05, 0.035, 0.01, 0.04),
    tpl(0.18, [0.0, 0.0, 1.0], 0.0, 1.7, 0.20, 0.02, [1.0, 0.0, 0.0], 0.03, 0.010, 0.04, 0.05),
    tpl(0.14, [1.0, 0.0, 0.0], 0.0, 2.0, 0.35, 0.01, [0.0, 0.0, 1.0], 0.01, 0.005, 0.02, 0.12),
    tpl(0.22, [0.0, 0.6, 0.8], PI, 2.0, 0.25, 0.02, [1.0, 0.0, 0.0], 0.02, 0.012, 0.01, 0.02),
];

/// Corpus-generation request.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub genres: Vec<String>,
    pub clips_per_genre: usize,
    pub clip_seconds: f32,
    pub fps: u32,
}

/// One synthetic dance clip with its music.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub genre: usize,
    pub index: usize,
    pub motion: MotionSequence,
    pub beats: BeatTrack,
}

impl Clip {
    pub fn tempo(&self) -> f64 {
        self.beats.tempo()
    }

    pub fn name(&self) -> String {
        format!("{}_{:03}", GENRES[self.genre], self.index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub clips: Vec<Clip>,
}

impl Corpus {
    /// `(train, held_out)`: the last `holdout` clips of every genre are held out.
    pub fn split(&self, holdout: usize) -> (Vec<&Clip>, Vec<&Clip>) {
        let mut per_genre = std::collections::BTreeMap::<usize, usize>::new();
        for c in &self.clips {
            let e = per_genre.entry(c.genre).or_default();
            *e = (*e).max(c.index + 1);
        }
        self.clips
            .iter()
            .partition(|c| c.index + holdout < per_genre[&c.genre])
    }
}

/// Generate the corpus; each clip depends only on `(seed, genre, index)`.
pub fn synth_corpus(spec: &CorpusSpec, skel: &Skeleton) -> Result<Corpus> {
    let frames = (spec.clip_seconds * spec.fps as f32).round() as usize;
    if frames < 64 {
        return Err(Error::Parameter(format!(
            "clips need at least 64 frames, {}s at {} fps gives {frames}",
            spec.clip_seconds, spec.fps
        )));
    }
    let ids = spec.genres.iter().map(|g| genre_id(g)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = ids
        .iter()
        .flat_map(|&g| (0..spec.clips_per_genre).map(move |i| (g, i)))
        .collect();
    let clips = jobs
        .par_iter()
        .map(|&(g, i)| synth_clip(spec.seed, g, i, frames, spec.fps, skel))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { clips })
}

fn scaled(v: [f32; 3], s: f32) -> [f32; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn add(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f32; 3]) -> f32 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// One clip. Every joint oscillates at the beat frequency with extremes on
/// beats and half-beats; feet stay planted in world space except for
/// alternating lifts between beats.
pub fn synth_clip(seed: u64, genre: usize, index: usize, frames: usize, fps: u32, skel: &Skeleton) -> Result<Clip> {
    if skel.joints() != 13 {
        return Err(Error::Parameter("the procedural corpus is defined on the 13-joint skeleton".into()));
    }
    let tp = *TEMPLATES.get(genre).ok_or_else(|| Error::UnknownGenre(format!("#{genre}")))?;
    let mut rng = rng_for(seed, &[tag("clip"), genre as u64, index as u64]);
    let bpm: f64 = rng.gen_range(90.0..150.0);
    let period = 60.0 / bpm;
    let offset: f64 = rng.gen_range(0.0..period);
    let energy: f32 = rng.gen_range(0.6..1.0);
    let mut jitter = || rng.gen_range(0.85f32..1.15);
    let arm = tp.arm_amp * jitter() * energy;
    let spine = tp.spine_amp * jitter() * energy;
    let head = tp.head_amp * jitter();
    let bounce = tp.bounce * jitter() * energy;
    let sway = tp.sway * jitter();
    let lift = tp.lift * jitter() * energy;
    let hand_gain = tp.hand_gain * jitter();
    let beats = BeatTrack::regular(bpm, offset, frames, fps, energy, &mut rng)?;

    let omega = TAU * (bpm / 60.0) as f32;
    let theta = |f: usize| omega * (f as f32 / fps as f32 - offset as f32);
    let root_raw = |f: usize| {
        let c = theta(f).cos();
        [sway * c, 0.0, bounce * c]
    };
    let origin = skel.root_rest();
    let base = root_raw(0);
    let root_at = |f: usize| add(origin, sub(root_raw(f), base));
    let rest = skel.rest_local_positions();
    let foot_rest = [add(origin, rest[joint::L_FOOT]), add(origin, rest[joint::R_FOOT])];
    // segment length used for the knee bend; longer than the rest offset so
    // the knees stay flexed and move smoothly with the hips
    let thigh = 0.48f32;

    let d = skel.feature_dim();
    let mut data = Vec::with_capacity(frames * d);
    for f in 0..frames {
        let th = theta(f);
        let c = th.cos();
        let root = root_at(f);
        let vel = scaled(sub(root_at(f + 1), root), fps as f32);
        let mut local = rest.clone();

        let spine_d = scaled(tp.spine_axis, spine * c);
        for j in [joint::SPINE, joint::L_SHOULDER, joint::R_SHOULDER] {
            local[j] = add(local[j], spine_d);
        }
        local[joint::HEAD] = add(local[joint::HEAD], add(spine_d, [0.0, head * c, 0.0]));
        for (elbow, hand, phase, mirror) in [
            (joint::L_ELBOW, joint::L_HAND, 0.0, 1.0f32),
            (joint::R_ELBOW, joint::R_HAND, tp.arm_phase_r, -1.0),
        ] {
            let axis = [tp.arm_axis[0] * mirror, tp.arm_axis[1], tp.arm_axis[2]];
            let swing = arm * (th + phase).cos();
            let e = add(spine_d, add(scaled(axis, swing), [0.0, 0.0, 0.5 * tp.hand_raise]));
            let h = add(spine_d, add(scaled(axis, swing * hand_gain), [0.0, 0.0, tp.hand_raise]));
            local[elbow] = add(local[elbow], e);
            local[hand] = add(local[hand], h);
        }

        let mut contact = [0.0f32; 2];
        for (k, (knee, foot, sign)) in [(joint::L_KNEE, joint::L_FOOT, 1.0f32), (joint::R_KNEE, joint::R_FOOT, -1.0)]
            .into_iter()
            .enumerate()
        {
            let up = (sign * th.sin()).max(0.0);
            let h = lift * up * up;
            let foot_w = add(foot_rest[k], [0.0, 0.0, h]);
            let hip_w = add(root, [skel.rest_offset(knee)[0], 0.0, 0.0]);
            let mid = scaled(add(hip_w, foot_w), 0.5);
            let half = 0.5 * norm(sub(hip_w, foot_w));
            let bend = (thigh * thigh - half * half).max(0.0).sqrt();
            let knee_w = add(mid, [0.0, bend, 0.0]);
            local[knee] = sub(knee_w, root);
            local[foot] = sub(foot_w, root);
            contact[k] = if foot_w[2] < 0.05 { 1.0 } else { 0.0 };
        }

        data.extend_from_slice(&vel);
        for p in &local[1..] {
            data.extend_from_slice(p);
        }
        data.extend_from_slice(&contact);
    }
    Ok(Clip {
        genre,
        index,
        motion: MotionSequence::new(fps, d, data)?,
        beats,
    })
}
