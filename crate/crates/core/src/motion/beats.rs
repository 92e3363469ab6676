use rand::Rng;

use crate::error::{Error, Result};

/// Width of the per-frame music feature rows.
pub const MUSIC_DIM: usize = 8;

/// Decay constant of the impulse channel, in frames.
const IMPULSE_DECAY: f32 = 2.0;

/// Music signal: beat times plus a per-frame feature matrix.
///
/// Feature channels: `[impulse, phase, sin(2*pi*phase), cos(2*pi*phase),
/// tempo/200, energy, noise, noise]`. The impulse is 1 at the frame nearest
/// each beat and decays exponentially with frame distance; phase is the
/// fraction of the current beat interval already elapsed.
#[derive(Clone, Debug, PartialEq)]
pub struct BeatTrack {
    fps: u32,
    beat_times: Vec<f64>,
    features: Vec<f32>,
}

impl BeatTrack {
    pub fn new(fps: u32, beat_times: Vec<f64>, features: Vec<f32>) -> Result<Self> {
        if beat_times.len() < 2 {
            return Err(Error::Parameter("a beat track needs at least two beats".into()));
        }
        if beat_times.windows(2).any(|w| !(w[1] > w[0])) || beat_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Parameter("beat times must be finite and strictly ascending".into()));
        }
        if features.len() % MUSIC_DIM != 0 {
            return Err(Error::shape(format!("music features must have {MUSIC_DIM} channels")));
        }
        if fps == 0 {
            return Err(Error::Parameter("fps must be positive".into()));
        }
        Ok(Self {
            fps,
            beat_times,
            features,
        })
    }

    /// Regular beat grid at `bpm` starting at `offset` seconds, with
    /// features for `frames` frames.
    pub fn regular(bpm: f64, offset: f64, frames: usize, fps: u32, energy: f32, rng: &mut impl Rng) -> Result<Self> {
        if !(bpm > 0.0) {
            return Err(Error::Parameter("tempo must be positive".into()));
        }
        let period = 60.0 / bpm;
        let end = frames as f64 / fps as f64;
        let beats: Vec<f64> = (0..).map(|k| offset + k as f64 * period).take_while(|&t| t < end).collect();
        let features = music_features(&beats, frames, fps, energy, rng)?;
        Self::new(fps, beats, features)
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.features.len() / MUSIC_DIM
    }

    pub fn beat_times(&self) -> &[f64] {
        &self.beat_times
    }

    /// Beat positions in frame units.
    pub fn beat_frames(&self) -> Vec<f64> {
        self.beat_times.iter().map(|t| t * self.fps as f64).collect()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// Beats per minute implied by the mean inter-beat interval.
    pub fn tempo(&self) -> f64 {
        let span = self.beat_times[self.beat_times.len() - 1] - self.beat_times[0];
        60.0 * (self.beat_times.len() - 1) as f64 / span
    }

    /// Frames `[start, start + len)` with beat times shifted accordingly.
    /// Beats outside the window are dropped.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames() {
            return Err(Error::InvalidRange("beat slice outside the track".into()));
        }
        let t0 = start as f64 / self.fps as f64;
        let t1 = (start + len) as f64 / self.fps as f64;
        let beats = self
            .beat_times
            .iter()
            .filter(|&&t| t >= t0 && t < t1)
            .map(|t| t - t0)
            .collect();
        Self::new(
            self.fps,
            beats,
            self.features[start * MUSIC_DIM..(start + len) * MUSIC_DIM].to_vec(),
        )
    }
}

impl BeatTrack {
    /// Tracks played back to back; beat times of later parts are shifted by
    /// the duration of everything before them.
    pub fn concat(parts: &[BeatTrack]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptySequence)?;
        if parts.iter().any(|p| p.fps != first.fps) {
            return Err(Error::Parameter("beat tracks differ in fps".into()));
        }
        let mut beats = Vec::new();
        let mut features = Vec::new();
        let mut t0 = 0.0;
        for p in parts {
            for t in p.beat_times.iter().map(|t| t + t0) {
                if beats.last().is_none_or(|&l| t > l) {
                    beats.push(t);
                }
            }
            features.extend_from_slice(&p.features);
            t0 += p.frames() as f64 / p.fps as f64;
        }
        Self::new(first.fps, beats, features)
    }
}

/// Per-frame music features for a beat list.
pub fn music_features(beats: &[f64], frames: usize, fps: u32, energy: f32, rng: &mut impl Rng) -> Result<Vec<f32>> {
    if beats.len() < 2 {
        return Err(Error::Parameter("music features need at least two beats".into()));
    }
    let fps = fps as f64;
    let period = (beats[beats.len() - 1] - beats[0]) / (beats.len() - 1) as f64;
    let tempo = (60.0 / period) as f32;
    let beat_frames: Vec<f64> = beats.iter().map(|t| (t * fps).round()).collect();
    let mut out = Vec::with_capacity(frames * MUSIC_DIM);
    for f in 0..frames {
        let t = f as f64 / fps;
        let nearest = beat_frames
            .iter()
            .map(|b| (f as f64 - b).abs())
            .fold(f64::INFINITY, f64::min) as f32;
        let impulse = (-nearest / IMPULSE_DECAY).exp();
        let phase = ((t - beats[0]) / period).rem_euclid(1.0) as f32;
        let angle = std::f32::consts::TAU * phase;
        out.extend_from_slice(&[
            impulse,
            phase,
            angle.sin(),
            angle.cos(),
            tempo / 200.0,
            energy,
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        ]);
    }
    Ok(out)
}
