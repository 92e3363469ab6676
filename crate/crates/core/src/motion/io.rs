//! Little-endian binary formats for motion (`DMOT`), beat tracks (`DBEA`)
//! and pose constraints (`DPOS`).

use std::fs;
use std::path::Path;

use super::{BeatTrack, MotionSequence, PoseConstraint, MUSIC_DIM};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{} needs {n} more bytes at offset {}, {} left",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }

    pub(crate) fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != magic {
            return Err(Error::Format(format!(
                "expected {} magic, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(m)
            )));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported {} version {v}", self.what)));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} has {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn encode_motion(seq: &MotionSequence) -> Result<Vec<u8>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut out = Vec::with_capacity(20 + seq.data().len() * 4);
    out.extend_from_slice(b"DMOT");
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, seq.fps());
    put_u32(&mut out, to_u32(seq.frames(), "frame count")?);
    put_u32(&mut out, to_u32(seq.dim(), "feature width")?);
    put_f32s(&mut out, seq.data());
    Ok(out)
}

pub fn decode_motion(buf: &[u8]) -> Result<MotionSequence> {
    let mut r = Reader::new(buf, "motion file");
    r.header(b"DMOT")?;
    let fps = r.u32()?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let data = r.f32s(n * d)?;
    r.finish()?;
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    MotionSequence::new(fps, d, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_beats(track: &BeatTrack) -> Result<Vec<u8>> {
    if track.frames() == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = Vec::new();
    out.extend_from_slice(b"DBEA");
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, track.fps());
    put_u32(&mut out, to_u32(track.frames(), "frame count")?);
    put_u32(&mut out, MUSIC_DIM as u32);
    put_u32(&mut out, to_u32(track.beat_times().len(), "beat count")?);
    for t in track.beat_times() {
        out.extend_from_slice(&t.to_le_bytes());
    }
    put_f32s(&mut out, track.features());
    Ok(out)
}

pub fn decode_beats(buf: &[u8]) -> Result<BeatTrack> {
    let mut r = Reader::new(buf, "beat file");
    r.header(b"DBEA")?;
    let fps = r.u32()?;
    let n = r.u32()? as usize;
    let fm = r.u32()? as usize;
    if fm != MUSIC_DIM {
        return Err(Error::Format(format!("beat file has {fm} music channels, expected {MUSIC_DIM}")));
    }
    let count = r.u32()? as usize;
    let beats = r.f64s(count)?;
    let features = r.f32s(n * fm)?;
    r.finish()?;
    BeatTrack::new(fps, beats, features).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_constraint(c: &PoseConstraint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(b"DPOS");
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, to_u32(c.frames(), "frame count")?);
    put_u32(&mut out, to_u32(c.joints(), "joint count")?);
    put_f32s(&mut out, c.positions());
    out.extend(c.valid().iter().map(|&v| v as u8));
    Ok(out)
}

pub fn decode_constraint(buf: &[u8]) -> Result<PoseConstraint> {
    let mut r = Reader::new(buf, "constraint file");
    r.header(b"DPOS")?;
    let n = r.u32()? as usize;
    let j = r.u32()? as usize;
    let pos = r.f32s(n * j * 3)?;
    let flags = r.take(n * j)?;
    r.finish()?;
    if flags.iter().any(|&b| b > 1) {
        return Err(Error::Format("validity flags must be 0 or 1".into()));
    }
    PoseConstraint::new(n, j, pos, flags.iter().map(|&b| b == 1).collect()).map_err(|e| Error::Format(e.to_string()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_motion(path: impl AsRef<Path>, seq: &MotionSequence) -> Result<()> {
    write_bytes(path.as_ref(), &encode_motion(seq)?)
}

pub fn read_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    decode_motion(&read_bytes(path.as_ref())?)
}

pub fn write_beats(path: impl AsRef<Path>, track: &BeatTrack) -> Result<()> {
    write_bytes(path.as_ref(), &encode_beats(track)?)
}

pub fn read_beats(path: impl AsRef<Path>) -> Result<BeatTrack> {
    decode_beats(&read_bytes(path.as_ref())?)
}

pub fn write_constraint(path: impl AsRef<Path>, c: &PoseConstraint) -> Result<()> {
    write_bytes(path.as_ref(), &encode_constraint(c)?)
}

pub fn read_constraint(path: impl AsRef<Path>) -> Result<PoseConstraint> {
    decode_constraint(&read_bytes(path.as_ref())?)
}
