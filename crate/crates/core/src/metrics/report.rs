use rayon::prelude::*;

use super::{
    beat_align_score, diversity, extract_dance_beats, fid, foot_skating_ratio, geometric_features,
    kinematic_features, pfc, BAS_SIGMA_FRAMES, FSR_CONTACT_HEIGHT, FSR_SLIDE_SPEED,
};
use crate::error::{Error, Result};
use crate::motion::{BeatTrack, MotionSequence, PoseConstraint, Skeleton};

/// Keys of the evaluation report, in output order.
pub const REPORT_KEYS: [&str; 7] = ["fid_k", "fid_g", "div_k", "div_g", "bas", "pfc", "fsr"];

#[derive(Clone, Debug, PartialEq)]
pub struct ClipScores {
    pub name: String,
    pub bas: Option<f64>,
    pub pfc: f64,
    pub fsr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub fid_k: f64,
    pub fid_g: f64,
    pub div_k: f64,
    pub div_g: f64,
    /// Mean over clips that have a beat track; NaN when none do.
    pub bas: f64,
    pub pfc: f64,
    pub fsr: f64,
    pub clips: Vec<ClipScores>,
}

/// BAS of a motion against its music, in frame units with the default sigma.
pub fn bas_against(motion: &MotionSequence, beats: &BeatTrack, skel: &Skeleton) -> Result<f64> {
    let dance: Vec<f64> = extract_dance_beats(motion, skel)?
        .iter()
        .map(|t| t * motion.fps() as f64)
        .collect();
    let horizon = motion.frames() as f64;
    let music: Vec<f64> = beats.beat_frames().into_iter().filter(|&b| b < horizon).collect();
    beat_align_score(&music, &dance, BAS_SIGMA_FRAMES)
}

/// Joint distance between a constraint and the FK joints of `motion`.
pub fn joint_distance(constraint: &PoseConstraint, motion: &MotionSequence, skel: &Skeleton) -> Result<f64> {
    if constraint.frames() != motion.frames() {
        return Err(Error::shape("constraint and motion differ in length"));
    }
    Ok(constraint.discrepancy(&motion.joint_positions(skel)?)? as f64)
}

struct PerClip {
    kin: Vec<f64>,
    geo: Vec<f64>,
    scores: ClipScores,
}

/// Full metric battery. `beats[i]`, when present, is the music the i-th
/// generated clip was conditioned on.
pub fn evaluate(
    generated: &[(String, MotionSequence)],
    reference: &[MotionSequence],
    beats: &[Option<BeatTrack>],
    skel: &Skeleton,
) -> Result<EvalReport> {
    if generated.len() < 2 || reference.len() < 2 {
        return Err(Error::Parameter("evaluation needs at least two generated and two reference clips".into()));
    }
    if beats.len() != generated.len() {
        return Err(Error::shape("one beat slot per generated clip is required"));
    }
    let gen: Vec<PerClip> = generated
        .par_iter()
        .zip(beats.par_iter())
        .map(|((name, m), b)| {
            Ok(PerClip {
                kin: kinematic_features(m, skel)?,
                geo: geometric_features(m, skel)?,
                scores: ClipScores {
                    name: name.clone(),
                    bas: b.as_ref().map(|b| bas_against(m, b, skel)).transpose()?,
                    pfc: pfc(m, skel)?,
                    fsr: foot_skating_ratio(m, skel, FSR_CONTACT_HEIGHT, FSR_SLIDE_SPEED)?,
                },
            })
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(Vec<f64>, Vec<f64>)> = reference
        .par_iter()
        .map(|m| Ok((kinematic_features(m, skel)?, geometric_features(m, skel)?)))
        .collect::<Result<_>>()?;
    let gk: Vec<Vec<f64>> = gen.iter().map(|c| c.kin.clone()).collect();
    let gg: Vec<Vec<f64>> = gen.iter().map(|c| c.geo.clone()).collect();
    let rk: Vec<Vec<f64>> = refs.iter().map(|r| r.0.clone()).collect();
    let rg: Vec<Vec<f64>> = refs.iter().map(|r| r.1.clone()).collect();
    let mean = |xs: &[f64]| if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let bas: Vec<f64> = gen.iter().filter_map(|c| c.scores.bas).collect();
    let pfcs: Vec<f64> = gen.iter().map(|c| c.scores.pfc).collect();
    let fsrs: Vec<f64> = gen.iter().map(|c| c.scores.fsr).collect();
    Ok(EvalReport {
        fid_k: fid(&gk, &rk)?,
        fid_g: fid(&gg, &rg)?,
        div_k: diversity(&gk)?,
        div_g: diversity(&gg)?,
        bas: mean(&bas),
        pfc: mean(&pfcs),
        fsr: mean(&fsrs),
        clips: gen.into_iter().map(|c| c.scores).collect(),
    })
}

impl EvalReport {
    pub fn value(&self, key: &str) -> Option<f64> {
        Some(match key {
            "fid_k" => self.fid_k,
            "fid_g" => self.fid_g,
            "div_k" => self.div_k,
            "div_g" => self.div_g,
            "bas" => self.bas,
            "pfc" => self.pfc,
            "fsr" => self.fsr,
            _ => return None,
        })
    }

    /// `name=value` lines in [`REPORT_KEYS`] order.
    pub fn to_text(&self) -> String {
        REPORT_KEYS
            .iter()
            .map(|k| format!("{k}={:.6}\n", self.value(k).unwrap()))
            .collect()
    }

    pub fn clips_csv(&self) -> String {
        let mut out = String::from("clip,bas,pfc,fsr\n");
        for c in &self.clips {
            let bas = c.bas.map_or(String::new(), |b| format!("{b:.6}"));
            out.push_str(&format!("{},{bas},{:.6},{:.6}\n", c.name, c.pfc, c.fsr));
        }
        out
    }
}
