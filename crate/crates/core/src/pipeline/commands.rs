//! The `dmsk` subcommands as library calls. Every command takes its seed
//! and configuration explicitly, so repeating it reproduces its artifacts
//! byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::Config;
use super::data::{self, BEATS_EXT, MOTION_EXT};
use super::sections::models_from;
use super::train::{progressive_train, Stage};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::motion::{genre_id, io, BeatTrack, CorpusSpec, MotionSequence, Skeleton, FPS};
use crate::sampler::{edit_spatial, edit_temporal, generate_long, junction_frames, parallel_decode, GuidanceBundle, Models};
use crate::seed::{rng_for, tag};
use crate::tokenizer::DOWNSAMPLE;

/// Text log written next to a command's main output: the configuration
/// header followed by `key=value` result lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub lines: Vec<String>,
}

impl RunLog {
    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key}={value}"));
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.lines.iter().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
    }

    pub fn render(&self, config: &Config) -> String {
        let mut out = config.header();
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }
}

/// `<path>.<suffix>`, appended to the full file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_log(out: &Path, config: &Config, log: &RunLog) -> Result<()> {
    write_text(&sidecar(out, "log"), &log.render(config))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenDataArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub genres: Vec<String>,
    pub clips: usize,
    pub seconds: f32,
    pub force: bool,
}

/// Write a procedural corpus directory; returns the number of clips.
pub fn gen_data(a: &GenDataArgs) -> Result<usize> {
    let spec = CorpusSpec {
        seed: a.seed,
        genres: a.genres.clone(),
        clips_per_genre: a.clips,
        clip_seconds: a.seconds,
        fps: FPS,
    };
    Ok(data::write_corpus(&a.out, &spec, &Skeleton::desk(), a.force)?.clips.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainArgs {
    pub stage: Stage,
    pub config: Config,
    pub data: PathBuf,
    /// Output checkpoint. When it exists and no resume source is given,
    /// earlier stages are read from it.
    pub out: PathBuf,
    /// Checkpoint to continue the stage from.
    pub resume: Option<PathBuf>,
    /// Loss CSV; defaults to `<out>.<stage>.loss.csv`.
    pub loss_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps_run: usize,
    pub last_loss: Option<f32>,
    pub loss_csv: PathBuf,
}

pub fn train(a: &TrainArgs) -> Result<TrainSummary> {
    let skel = Skeleton::desk();
    let corpus = data::read_corpus(&a.data)?;
    let (train, _) = corpus.split(a.config.holdout);
    if train.is_empty() {
        return Err(Error::Config("data.holdout leaves no training clips".into()));
    }
    let mut ck = match (&a.resume, a.out.exists()) {
        (Some(r), _) => Checkpoint::load(r)?,
        (None, true) => Checkpoint::load(&a.out)?,
        (None, false) => Checkpoint::new(),
    };
    let mut csv = a.config.header();
    csv.push_str("step,loss\n");
    let mut steps_run = 0;
    let mut last_loss = None;
    progressive_train(a.stage, &a.config, &train, &skel, &mut ck, a.resume.is_some(), |step, loss| {
        let _ = writeln!(csv, "{step},{loss}");
        steps_run += 1;
        last_loss = Some(loss);
        if step % 100 == 0 {
            tracing::info!(stage = %a.stage, step, loss, "training");
        }
    })?;
    ck.save(&a.out)?;
    let loss_csv = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| sidecar(&a.out, &format!("{}.loss.csv", a.stage)));
    write_text(&loss_csv, &csv)?;
    Ok(TrainSummary {
        steps_run,
        last_loss,
        loss_csv,
    })
}

fn load_models(path: &Path) -> Result<Models> {
    models_from(&Checkpoint::load(path)?, Skeleton::desk())
}

fn parse_genre(g: &Option<String>) -> Result<Option<usize>> {
    g.as_deref().map(genre_id).transpose()
}

fn bundle(config: &Config, genre: Option<usize>, music: Option<BeatTrack>, unconditional: bool) -> GuidanceBundle {
    GuidanceBundle {
        genre,
        music,
        pose: None,
        weights: config.guidance,
        mode: config.cfg_mode,
        unconditional,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub config: Config,
    pub beats: Option<PathBuf>,
    pub genre: Option<String>,
    /// Defaults to the length of the beat track.
    pub frames: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
    pub unconditional: bool,
}

/// Frame count rounded up to a whole number of tokens.
pub fn round_frames(frames: usize) -> usize {
    frames.div_ceil(DOWNSAMPLE) * DOWNSAMPLE
}

pub fn generate(a: &GenerateArgs) -> Result<RunLog> {
    if a.beats.is_none() && a.genre.is_none() && !a.unconditional {
        return Err(Error::Usage("give --beats, --genre or --unconditional".into()));
    }
    let genre = parse_genre(&a.genre)?;
    let music = a.beats.as_ref().map(io::read_beats).transpose()?;
    let requested = match (a.frames, &music) {
        (Some(f), _) => f,
        (None, Some(m)) => m.frames(),
        (None, None) => return Err(Error::Usage("--frames is required without --beats".into())),
    };
    if requested == 0 {
        return Err(Error::Usage("--frames must be positive".into()));
    }
    let frames = round_frames(requested);
    let mut log = RunLog::default();
    if frames != requested {
        tracing::warn!(requested, frames, "frame count rounded up to a multiple of {DOWNSAMPLE}");
        log.push("warning", format!("frames rounded up from {requested} to {frames}"));
    }
    let models = load_models(&a.checkpoint)?;
    let b = bundle(&a.config, genre, music, a.unconditional);
    let mut rng = rng_for(a.seed, &[tag("generate")]);
    let (grid, trace) = parallel_decode(&models, &b, frames, a.config.s_total, a.config.temperature, &mut rng)?;
    let motion = models.tokenizer.decode(&grid, FPS)?;
    io::write_motion(&a.out, &motion)?;
    if let Some(t) = &a.trace {
        write_text(t, &format!("{}{}", a.config.header(), trace.to_csv()))?;
    }
    log.push("frames", frames);
    log.push("tokens", grid.len());
    log.push("seed", a.seed);
    write_log(&a.out, &a.config, &log)?;
    Ok(log)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditMode {
    Spatial,
    Temporal,
}

impl std::str::FromStr for EditMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(EditMode::Spatial),
            "temporal" => Ok(EditMode::Temporal),
            _ => Err(Error::Usage(format!("unknown edit mode `{s}`; expected spatial or temporal"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditArgs {
    pub checkpoint: PathBuf,
    pub config: Config,
    pub mode: EditMode,
    pub motion: PathBuf,
    pub constraints: Option<PathBuf>,
    pub keep_ranges: Option<String>,
    pub genre: Option<String>,
    pub beats: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

/// Parse `a..b,c..d` frame ranges. `all` keeps the whole clip; an empty
/// string keeps nothing.
pub fn parse_ranges(text: &str, frames: usize) -> Result<Vec<Range<usize>>> {
    let text = text.trim();
    if text == "all" {
        return Ok(vec![0..frames]);
    }
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|r| {
            let (a, b) = r
                .split_once("..")
                .ok_or_else(|| Error::Usage(format!("range `{r}` is not start..end")))?;
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Usage(format!("bad range bound in `{r}`")));
            Ok(parse(a)?..parse(b)?)
        })
        .collect()
}

pub fn edit(a: &EditArgs) -> Result<RunLog> {
    match (a.mode, &a.constraints, &a.keep_ranges) {
        (EditMode::Spatial, None, _) => return Err(Error::Usage("spatial editing needs --constraints".into())),
        (EditMode::Spatial, Some(_), Some(_)) => {
            return Err(Error::Usage("--keep-ranges belongs to temporal editing".into()))
        }
        (EditMode::Temporal, _, None) => return Err(Error::Usage("temporal editing needs --keep-ranges".into())),
        (EditMode::Temporal, Some(_), Some(_)) => {
            return Err(Error::Usage("--constraints belongs to spatial editing".into()))
        }
        _ => {}
    }
    let genre = parse_genre(&a.genre)?;
    let music = a.beats.as_ref().map(io::read_beats).transpose()?;
    let motion = io::read_motion(&a.motion)?;
    let models = load_models(&a.checkpoint)?;
    let mut rng = rng_for(a.seed, &[tag("edit")]);
    let mut log = RunLog::default();
    let out = match a.mode {
        EditMode::Spatial => {
            let c = io::read_constraint(a.constraints.as_ref().unwrap())?;
            let b = bundle(&a.config, genre, music, true);
            let e = edit_spatial(
                &models,
                &motion,
                &c,
                &b,
                a.config.s_total,
                a.config.temperature,
                a.config.itto,
                &mut rng,
            )?;
            log.push("joint_dist_pre", format!("{:.6}", e.joint_dist_pre));
            log.push("joint_dist_post", format!("{:.6}", e.joint_dist_post));
            e.motion
        }
        EditMode::Temporal => {
            let keep = parse_ranges(a.keep_ranges.as_ref().unwrap(), motion.frames())?;
            let b = bundle(&a.config, genre, music, true);
            let m = edit_temporal(&models, &motion, &keep, &b, a.config.s_total, a.config.temperature, &mut rng)?;
            let ranges: Vec<String> = keep.iter().map(|r| format!("{}..{}", r.start, r.end)).collect();
            log.push("keep", ranges.join(","));
            m
        }
    };
    io::write_motion(&a.out, &out)?;
    log.push("frames", out.frames());
    log.push("seed", a.seed);
    write_log(&a.out, &a.config, &log)?;
    Ok(log)
}

/// One segment of a stitch request.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSpec {
    pub genre: Option<String>,
    pub frames: usize,
    pub beats: Option<PathBuf>,
}

/// Parse a segment file: one segment per line as whitespace-separated
/// `genre=<name> frames=<n> beats=<path>` fields (`frames` required).
/// Relative beat paths resolve against `base`; `#` starts a comment.
pub fn parse_segments(text: &str, base: &Path) -> Result<Vec<SegmentSpec>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| Error::Format(format!("segment line {}: {m}", i + 1));
        let (mut genre, mut frames, mut beats) = (None, None, None);
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("`{field}` is not key=value")))?;
            match k {
                "genre" => genre = Some(v.to_string()),
                "frames" => frames = Some(v.parse::<usize>().map_err(|_| bad(format!("bad frame count `{v}`")))?),
                "beats" => beats = Some(base.join(v)),
                _ => return Err(bad(format!("unknown field `{k}`"))),
            }
        }
        let frames = frames.ok_or_else(|| bad("missing frames".into()))?;
        if frames == 0 {
            return Err(bad("frames must be positive".into()));
        }
        out.push(SegmentSpec { genre, frames, beats });
    }
    if out.is_empty() {
        return Err(Error::Format("segment file lists no segments".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StitchArgs {
    pub checkpoint: PathBuf,
    pub config: Config,
    pub segments: PathBuf,
    pub overlap: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn stitch(a: &StitchArgs) -> Result<RunLog> {
    let text = fs::read_to_string(&a.segments).map_err(|e| Error::io(&a.segments, e))?;
    let base = a.segments.parent().unwrap_or(Path::new("."));
    let specs = parse_segments(&text, base)?;
    let mut bundles = Vec::with_capacity(specs.len());
    for s in &specs {
        let music = s.beats.as_ref().map(io::read_beats).transpose()?;
        let genre = parse_genre(&s.genre)?;
        bundles.push(bundle(&a.config, genre, music, true));
    }
    let frames: Vec<usize> = specs.iter().map(|s| s.frames).collect();
    let models = load_models(&a.checkpoint)?;
    let mut rng = rng_for(a.seed, &[tag("stitch")]);
    let m = generate_long(
        &models,
        &bundles,
        &frames,
        a.overlap,
        a.config.s_total,
        a.config.temperature,
        &mut rng,
    )?;
    io::write_motion(&a.out, &m)?;
    let mut log = RunLog::default();
    log.push("segments", specs.len());
    log.push("frames", m.frames());
    let j: Vec<String> = junction_frames(&frames).iter().map(ToString::to_string).collect();
    log.push("junctions", j.join(","));
    log.push("seed", a.seed);
    write_log(&a.out, &a.config, &log)?;
    Ok(log)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalArgs {
    pub gen: PathBuf,
    pub reference: PathBuf,
    /// Directory of beat files named after the generated clips.
    pub beats: Option<PathBuf>,
    pub report: PathBuf,
    pub config: Config,
}

fn read_motions(dir: &Path) -> Result<Vec<(String, MotionSequence)>> {
    data::list_files(dir, MOTION_EXT)?
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, io::read_motion(&p)?))
        })
        .collect()
}

/// Metric report at `report` and per-clip CSV at `<report>.clips.csv`.
pub fn eval(a: &EvalArgs) -> Result<EvalReport> {
    let gen = read_motions(&a.gen)?;
    let reference: Vec<MotionSequence> = read_motions(&a.reference)?.into_iter().map(|(_, m)| m).collect();
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::EmptySequence);
    }
    let beats = gen
        .iter()
        .map(|(name, _)| match &a.beats {
            Some(dir) => {
                let p = dir.join(format!("{name}.{BEATS_EXT}"));
                p.exists().then(|| io::read_beats(&p)).transpose()
            }
            None => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&gen, &reference, &beats, &Skeleton::desk())?;
    let header = a.config.header();
    write_text(&a.report, &format!("{header}{}", report.to_text()))?;
    write_text(&sidecar(&a.report, "clips.csv"), &format!("{header}{}", report.clips_csv()))?;
    Ok(report)
}
