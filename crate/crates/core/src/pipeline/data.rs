//! Corpus directories: `manifest.csv` plus one motion and one beat file per
//! clip under `motion/` and `beats/`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::motion::{genre_id, io, synth_corpus, Clip, Corpus, CorpusSpec, Skeleton, GENRES};

pub const MANIFEST: &str = "manifest.csv";
pub const MOTION_DIR: &str = "motion";
pub const BEATS_DIR: &str = "beats";
pub const MOTION_EXT: &str = "dmot";
pub const BEATS_EXT: &str = "dbea";

pub fn motion_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(MOTION_DIR).join(format!("{name}.{MOTION_EXT}"))
}

pub fn beats_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(BEATS_DIR).join(format!("{name}.{BEATS_EXT}"))
}

fn is_nonempty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Manifest text: a `# key=value` header describing the request, then
/// `clip,genre,index,frames,tempo` rows.
pub fn manifest_text(spec: &CorpusSpec, corpus: &Corpus) -> String {
    let mut out = format!(
        "# seed={}\n# genres={}\n# clips={}\n# seconds={}\n# fps={}\nclip,genre,index,frames,tempo\n",
        spec.seed,
        spec.genres.join(","),
        spec.clips_per_genre,
        spec.clip_seconds,
        spec.fps
    );
    for c in &corpus.clips {
        out.push_str(&format!(
            "{},{},{},{},{:.4}\n",
            c.name(),
            GENRES[c.genre],
            c.index,
            c.motion.frames(),
            c.tempo()
        ));
    }
    out
}

/// Synthesize a corpus and write it under `out`.
pub fn write_corpus(out: &Path, spec: &CorpusSpec, skel: &Skeleton, force: bool) -> Result<Corpus> {
    if spec.clips_per_genre == 0 {
        return Err(Error::Usage("--clips must be at least 1".into()));
    }
    if spec.genres.is_empty() {
        return Err(Error::Usage("--genres must name at least one genre".into()));
    }
    if is_nonempty_dir(out) && !force {
        return Err(Error::Usage(format!("{} exists and is not empty; pass --force", out.display())));
    }
    let corpus = synth_corpus(spec, skel)?;
    for sub in [MOTION_DIR, BEATS_DIR] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for c in &corpus.clips {
        io::write_motion(motion_path(out, &c.name()), &c.motion)?;
        io::write_beats(beats_path(out, &c.name()), &c.beats)?;
    }
    let m = out.join(MANIFEST);
    fs::write(&m, manifest_text(spec, &corpus)).map_err(|e| Error::io(&m, e))?;
    Ok(corpus)
}

/// Read a corpus directory written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let m = dir.join(MANIFEST);
    let text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    if rows.next() != Some("clip,genre,index,frames,tempo") {
        return Err(Error::Format(format!("{} lacks the manifest header", m.display())));
    }
    let mut clips = Vec::new();
    for (i, row) in rows.enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Format(format!("manifest row {} has {} columns", i + 1, cols.len())));
        }
        let bad = |what: &str| Error::Format(format!("manifest row {}: bad {what}", i + 1));
        let genre = genre_id(cols[1])?;
        let index: usize = cols[2].parse().map_err(|_| bad("index"))?;
        let frames: usize = cols[3].parse().map_err(|_| bad("frames"))?;
        let motion = io::read_motion(motion_path(dir, cols[0]))?;
        let beats = io::read_beats(beats_path(dir, cols[0]))?;
        if motion.frames() != frames || beats.frames() != frames {
            return Err(Error::Format(format!("clip {} does not match its manifest length", cols[0])));
        }
        clips.push(Clip {
            genre,
            index,
            motion,
            beats,
        });
    }
    if clips.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(Corpus { clips })
}

/// Files with extension `ext` in `dir`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}
