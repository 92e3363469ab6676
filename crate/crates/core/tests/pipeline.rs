use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use masked_motion::error::Error;
use masked_motion::metrics::REPORT_KEYS;
use masked_motion::motion::{io, PoseConstraint, Skeleton};
use masked_motion::pipeline::commands::{
    self, parse_ranges, parse_segments, round_frames, sidecar, EditArgs, EditMode, EvalArgs, GenDataArgs, GenerateArgs,
    StitchArgs, TrainArgs,
};
use masked_motion::pipeline::{Checkpoint, Config, Section, Stage};
use masked_motion::sampler::IttoRule;
use masked_motion::tensor::Tensor;
use tempfile::TempDir;

const TINY: &str = "
seed=3
data.holdout=1
data.offsets=1
tokenizer.hidden=16
tokenizer.code_dim=8
tokenizer.codebook_size=16
tokenizer.steps=6
tokenizer.batch=2
tokenizer.window=32
tokenizer.warmup=2
tokenizer.reset_every=3
model.width=16
model.layers=1
model.heads=2
model.ffn=32
model.max_len=32
t2m.steps=4
t2m.batch=2
t2m.warmup=1
music.steps=2
music.batch=2
pose.steps=2
pose.batch=2
residual.steps=2
residual.batch=2
sample.s_total=4
itto.iters=3
";

fn tiny() -> Config {
    Config::parse(TINY).unwrap()
}

fn data_args(out: &Path) -> GenDataArgs {
    GenDataArgs {
        out: out.to_path_buf(),
        seed: 7,
        genres: vec!["hiphop".into(), "house".into()],
        clips: 3,
        seconds: 4.0,
        force: false,
    }
}

fn train_args(stage: Stage, data: &Path, out: &Path) -> TrainArgs {
    TrainArgs {
        stage,
        config: tiny(),
        data: data.to_path_buf(),
        out: out.to_path_buf(),
        resume: None,
        loss_csv: None,
    }
}

/// A corpus and a checkpoint with every stage trained on the tiny config.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn ckpt(&self) -> PathBuf {
        self.dir.path().join("model.dmsk")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        commands::gen_data(&data_args(&data)).unwrap();
        let ck = dir.path().join("model.dmsk");
        for stage in Stage::ALL {
            commands::train(&train_args(stage, &data, &ck)).unwrap();
        }
        Fixture { dir }
    })
}

#[test]
fn config_parses_and_echoes_every_key() {
    let c = tiny();
    assert_eq!(c.tokenizer_train.steps, 6);
    assert_eq!(c.model.width, 16);
    let text = c.to_text();
    for k in Config::keys() {
        assert!(text.contains(&format!("\n{k}=")) || text.starts_with(&format!("{k}=")), "{k}");
    }
    assert_eq!(Config::parse(&text).unwrap(), c);
    assert!(c.header().lines().all(|l| l.starts_with("# ")));
    assert!(matches!(Config::parse("bogus.key=1"), Err(Error::Config(_))));
    assert!(matches!(Config::parse("seed=1\nseed=2"), Err(Error::Config(_))));
    assert!(matches!(Config::parse("seed=x"), Err(Error::Config(_))));
    assert!(matches!(Config::parse("model.heads=3"), Err(Error::Config(_))));
    assert!(matches!(Config::parse("tokenizer.layers=3"), Err(Error::Config(_))));
    let c = Config::parse("itto.rule=gradient\nitto.quantized=false # literal update").unwrap();
    assert_eq!((c.itto.rule, c.itto.quantized), (IttoRule::Gradient, false));
    assert_eq!(c.get("itto.rule").as_deref(), Some("gradient"));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let mut ck = Checkpoint::new();
    let mut s = Section::new("demo");
    s.push("w", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-8, -0.0]).unwrap());
    s.push_meta("config", vec![4.0, 5.0]);
    ck.put(s);
    ck.put(Section::new("empty"));
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.require("demo").unwrap().meta("config").unwrap(), &[4.0, 5.0]);
    assert!(matches!(back.require("missing"), Err(Error::Prerequisite(_))));
    for i in [0, 9, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[i] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))), "byte {i}");
    }
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
    assert!(matches!(Checkpoint::load("/nonexistent/x.dmsk"), Err(Error::Checkpoint(_))));
}

#[test]
fn trained_checkpoint_reloads_byte_identically() {
    let f = fixture();
    let bytes = fs::read(f.ckpt()).unwrap();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.to_bytes(), bytes);
    for stage in Stage::ALL {
        ck.require(stage.section()).unwrap();
        ck.require(&stage.state_section()).unwrap();
    }
}

#[test]
fn stages_require_their_prerequisites() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fresh.dmsk");
    for stage in [Stage::T2m, Stage::Music, Stage::Pose, Stage::Residual] {
        let e = commands::train(&train_args(stage, &f.data(), &out)).unwrap_err();
        assert!(matches!(e, Error::Prerequisite(_)), "{stage}: {e}");
        assert_eq!(e.exit_code(), 4);
    }
    assert!(!out.exists());
    assert!(matches!("vae".parse::<Stage>(), Err(Error::Usage(_))));
}

fn loss_rows(path: &Path) -> Vec<(u64, String)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let (s, v) = l.split_once(',').unwrap();
            (s.parse().unwrap(), v.to_string())
        })
        .collect()
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.dmsk");
    let part = dir.path().join("part.dmsk");
    for stage in [Stage::Tokenizer, Stage::T2m] {
        commands::train(&train_args(stage, &f.data(), &full)).unwrap();
        let mut short = train_args(stage, &f.data(), &part);
        match stage {
            Stage::Tokenizer => short.config.tokenizer_train.steps = 3,
            _ => short.config.t2m.steps = 2,
        }
        commands::train(&short).unwrap();
        let mut rest = train_args(stage, &f.data(), &part);
        rest.resume = Some(part.clone());
        let s = commands::train(&rest).unwrap();
        assert_eq!(s.steps_run, if stage == Stage::Tokenizer { 3 } else { 2 });
        let a = loss_rows(&sidecar(&full, &format!("{stage}.loss.csv")));
        let b = loss_rows(&s.loss_csv);
        assert_eq!(&a[a.len() - b.len()..], &b[..], "{stage}");
        assert!(a.windows(2).all(|w| w[1].0 == w[0].0 + 1));
        assert_eq!(fs::read(&full).unwrap(), fs::read(&part).unwrap(), "{stage}");
    }
}

#[test]
fn loss_csv_carries_the_config_header() {
    let f = fixture();
    let text = fs::read_to_string(sidecar(&f.ckpt(), "tokenizer.loss.csv")).unwrap();
    assert!(text.starts_with("# seed=3\n"));
    assert!(text.contains("# tokenizer.steps=6\n"));
    assert!(text.contains("\nstep,loss\n0,"));
    assert_eq!(loss_rows(&sidecar(&f.ckpt(), "tokenizer.loss.csv")).len(), 6);
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_deterministic_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(commands::gen_data(&data_args(&a)).unwrap(), 6);
    commands::gen_data(&data_args(&b)).unwrap();
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 13);
    assert_eq!(fa, fb);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 7);
    assert!(matches!(commands::gen_data(&data_args(&a)), Err(Error::Usage(_))));
    let mut force = data_args(&a);
    force.force = true;
    force.seed = 8;
    commands::gen_data(&force).unwrap();
    assert_ne!(files(&a), fb);
}

fn generate_args(f: &Fixture, out: &Path, seed: u64) -> GenerateArgs {
    GenerateArgs {
        checkpoint: f.ckpt(),
        config: tiny(),
        beats: Some(f.data().join("beats/house_000.dbea")),
        genre: Some("house".into()),
        frames: Some(42),
        seed,
        out: out.to_path_buf(),
        trace: Some(sidecar(out, "trace.csv")),
        unconditional: false,
    }
}

#[test]
fn generate_rounds_frames_and_repeats_exactly() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.dmot"), dir.path().join("b.dmot"));
    let log = commands::generate(&generate_args(f, &a, 11)).unwrap();
    assert_eq!(log.value("frames"), Some("44"));
    assert!(log.value("warning").is_some());
    commands::generate(&generate_args(f, &b, 11)).unwrap();
    assert_eq!(io::read_motion(&a).unwrap().frames(), 44);
    for suffix in ["", "log", "trace.csv"] {
        let p = |x: &Path| if suffix.is_empty() { x.to_path_buf() } else { sidecar(x, suffix) };
        assert_eq!(fs::read(p(&a)).unwrap(), fs::read(p(&b)).unwrap(), "{suffix}");
    }
    let trace = fs::read_to_string(sidecar(&a, "trace.csv")).unwrap();
    assert!(trace.starts_with("# seed=3\n"));
    assert!(trace.contains("step,position,confidence,committed\n"));
    let c = commands::generate(&generate_args(f, &dir.path().join("c.dmot"), 12)).unwrap();
    assert_eq!(c.value("seed"), Some("12"));
    assert_ne!(fs::read(&a).unwrap(), fs::read(dir.path().join("c.dmot")).unwrap());
    assert_eq!(round_frames(40), 40);
    let mut bad = generate_args(f, &dir.path().join("d.dmot"), 1);
    bad.beats = None;
    bad.genre = None;
    assert!(matches!(commands::generate(&bad), Err(Error::Usage(_))));
    bad.genre = Some("waltz".into());
    assert!(matches!(commands::generate(&bad), Err(Error::UnknownGenre(_))));
}

#[test]
fn edits_and_stitching_run_from_files() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let motion = f.data().join("motion/hiphop_001.dmot");
    let m = io::read_motion(&motion).unwrap();
    let c = PoseConstraint::joints_everywhere(&m, &Skeleton::desk(), &[0, 3]).unwrap();
    let cpath = dir.path().join("c.dcon");
    io::write_constraint(&cpath, &c).unwrap();
    let args = |mode, out: &str| EditArgs {
        checkpoint: f.ckpt(),
        config: tiny(),
        mode,
        motion: motion.clone(),
        constraints: (mode == EditMode::Spatial).then(|| cpath.clone()),
        keep_ranges: (mode == EditMode::Temporal).then(|| "0..20,60..80".to_string()),
        genre: Some("hiphop".into()),
        beats: None,
        seed: 2,
        out: dir.path().join(out),
    };
    let log = commands::edit(&args(EditMode::Spatial, "s.dmot")).unwrap();
    let pre: f64 = log.value("joint_dist_pre").unwrap().parse().unwrap();
    let post: f64 = log.value("joint_dist_post").unwrap().parse().unwrap();
    assert!(post <= pre + 1e-6);
    let log = commands::edit(&args(EditMode::Temporal, "t.dmot")).unwrap();
    assert_eq!(log.value("keep"), Some("0..20,60..80"));
    assert_eq!(io::read_motion(dir.path().join("t.dmot")).unwrap().frames(), m.frames());
    let mut wrong = args(EditMode::Temporal, "x.dmot");
    wrong.constraints = Some(cpath.clone());
    assert!(matches!(commands::edit(&wrong), Err(Error::Usage(_))));

    let seg = dir.path().join("segments.txt");
    fs::write(&seg, "genre=hiphop frames=40\n# second\ngenre=house frames=36 beats=b.dbea\n").unwrap();
    fs::copy(f.data().join("beats/house_000.dbea"), dir.path().join("b.dbea")).unwrap();
    let s = StitchArgs {
        checkpoint: f.ckpt(),
        config: tiny(),
        segments: seg,
        overlap: 2,
        seed: 4,
        out: dir.path().join("long.dmot"),
    };
    let log = commands::stitch(&s).unwrap();
    assert_eq!((log.value("frames"), log.value("junctions")), (Some("76"), Some("40")));
}

#[test]
fn eval_of_the_reference_against_itself() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.txt");
    let r = commands::eval(&EvalArgs {
        gen: f.data().join("motion"),
        reference: f.data().join("motion"),
        beats: Some(f.data().join("beats")),
        report: report.clone(),
        config: tiny(),
    })
    .unwrap();
    assert!(r.fid_k.abs() < 1e-6 && r.fid_g.abs() < 1e-6, "{} {}", r.fid_k, r.fid_g);
    let text = fs::read_to_string(&report).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    let keys: Vec<&str> = body.iter().map(|l| l.split_once('=').unwrap().0).collect();
    assert_eq!(keys, REPORT_KEYS);
    let clips = fs::read_to_string(sidecar(&report, "clips.csv")).unwrap();
    assert_eq!(clips.lines().filter(|l| !l.starts_with('#')).count(), 7);
}

#[test]
fn range_and_segment_parsing() {
    assert_eq!(parse_ranges("all", 30).unwrap(), vec![0..30]);
    assert_eq!(parse_ranges(" 0..4, 10..12 ", 30).unwrap(), vec![0..4, 10..12]);
    assert!(parse_ranges("", 30).unwrap().is_empty());
    assert!(matches!(parse_ranges("3-5", 30), Err(Error::Usage(_))));
    assert!(matches!(parse_ranges("a..5", 30), Err(Error::Usage(_))));
    let base = Path::new("/music");
    let segs = parse_segments("genre=house frames=40 beats=x.dbea\n\nframes=8 # tail\n", base).unwrap();
    assert_eq!(segs.len(), 2);
    assert_eq!(segs[0].beats.as_deref(), Some(Path::new("/music/x.dbea")));
    assert_eq!((segs[1].genre.clone(), segs[1].frames), (None, 8));
    for bad in ["genre=house", "frames=0", "frames=4 tempo=3", "frames", ""] {
        assert!(matches!(parse_segments(bad, base), Err(Error::Format(_))), "{bad}");
    }
}

fn dmsk(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dmsk")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn binary_exit_codes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let ck = f.ckpt().to_string_lossy().into_owned();
    let data = f.data().to_string_lossy().into_owned();

    assert_eq!(dmsk(&["gen-data", "--out", &p("d"), "--clips", "2", "--seconds", "4"]).0, 0);
    assert_eq!(dmsk(&["gen-data", "--out", &p("d"), "--clips", "2", "--seconds", "4"]).0, 2);
    assert_eq!(dmsk(&["gen-data", "--out", &p("e"), "--genres", "waltz"]).0, 3);
    assert_eq!(dmsk(&["frobnicate"]).0, 2);
    assert_eq!(dmsk(&["train", "vae", "--data", &data, "--out", &p("m")]).0, 2);

    fs::write(p("bad.cfg"), "nope=1\n").unwrap();
    fs::write(p("tiny.cfg"), TINY).unwrap();
    assert_eq!(dmsk(&["train", "tokenizer", "--config", &p("bad.cfg"), "--data", &data, "--out", &p("m")]).0, 2);
    assert_eq!(dmsk(&["train", "t2m", "--config", &p("tiny.cfg"), "--data", &data, "--out", &p("m")]).0, 4);
    assert_eq!(dmsk(&["generate", "--checkpoint", &ck, "--frames", "16", "--out", &p("g")]).0, 2);
    assert_eq!(dmsk(&["generate", "--checkpoint", &p("none"), "--genre", "house", "--frames", "16", "--out", &p("g")]).0, 4);

    fs::write(p("junk.dmsk"), b"not a checkpoint").unwrap();
    assert_eq!(dmsk(&["generate", "--checkpoint", &p("junk.dmsk"), "--genre", "house", "--frames", "16", "--out", &p("g")]).0, 4);

    let (code, err) = dmsk(&["generate", "--checkpoint", &ck, "--config", &p("tiny.cfg"), "--genre", "house", "--frames", "18", "--out", &p("g.dmot")]);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("rounded up"));
    let out = Command::new(env!("CARGO_BIN_EXE_dmsk"))
        .env("DMSK_THREADS", "zero")
        .args(["eval", "--gen", &data, "--ref", &data, "--report", &p("r")])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    fs::create_dir(p("empty")).unwrap();
    assert_eq!(dmsk(&["eval", "--gen", &p("empty"), "--ref", &format!("{data}/motion"), "--report", &p("r")]).0, 3);
}
