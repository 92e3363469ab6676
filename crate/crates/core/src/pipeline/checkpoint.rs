//! `DMSK` checkpoint container: named sections of named f32 tensors followed
//! by a CRC32 of everything before it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::motion::io::{put_f32s, put_u32, Reader};
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DMSK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Prefix of tensors that describe a model rather than hold its weights.
pub const META_PREFIX: &str = "meta.";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            tensors: Vec::new(),
        }
    }

    pub fn with_params(name: impl Into<String>, params: &ParamSet) -> Self {
        let mut s = Self::new(name);
        for (n, t) in params.iter() {
            s.push(n, Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("shape already valid"));
        }
        s
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn push_meta(&mut self, key: &str, values: Vec<f32>) {
        let n = values.len();
        self.push(format!("{META_PREFIX}{key}"), Tensor::new(vec![n], values).expect("1-D"));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta(&self, key: &str) -> Result<&[f32]> {
        self.get(&format!("{META_PREFIX}{key}"))
            .map(Tensor::data)
            .ok_or_else(|| Error::Checkpoint(format!("section {} lacks {key}", self.name)))
    }

    /// Every non-meta tensor as a parameter set, in stored order.
    pub fn params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (n, t) in &self.tensors {
            if !n.starts_with(META_PREFIX) {
                p.add(n.clone(), t.clone());
            }
        }
        p
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<Section>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::Prerequisite(format!("checkpoint has no `{name}` section")))
    }

    /// Insert or replace a section; replacement keeps the original position.
    pub fn put(&mut self, section: Section) {
        match self.sections.iter_mut().find(|s| s.name == section.name) {
            Some(s) => *s = section,
            None => self.sections.push(section),
        }
    }

    pub fn remove(&mut self, name: &str) {
        self.sections.retain(|s| s.name != name);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, self.sections.len() as u32);
        let put_str = |out: &mut Vec<u8>, s: &str| {
            put_u32(out, s.len() as u32);
            out.extend_from_slice(s.as_bytes());
        };
        for s in &self.sections {
            put_str(&mut out, &s.name);
            put_u32(&mut out, s.tensors.len() as u32);
            for (name, t) in &s.tensors {
                put_str(&mut out, name);
                put_u32(&mut out, t.shape().len() as u32);
                for &d in t.shape() {
                    put_u32(&mut out, d as u32);
                }
                put_f32s(&mut out, t.data());
            }
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        Self::parse(buf).map_err(|e| match e {
            Error::Checkpoint(_) => e,
            other => Error::Checkpoint(other.to_string()),
        })
    }

    fn parse(buf: &[u8]) -> Result<Self> {
        if buf.len() < 16 {
            return Err(Error::Checkpoint("file too short for a checkpoint".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let mut r = Reader::new(body, "checkpoint");
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a DMSK checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint("CRC mismatch".into()));
        }
        let read_str = |r: &mut Reader<'_>| -> Result<String> {
            let n = r.u32()? as usize;
            String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
        };
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let name = read_str(&mut r)?;
            if ck.section(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate section `{name}`")));
            }
            let tensors = r.u32()?;
            let mut s = Section::new(name);
            for _ in 0..tensors {
                let tname = read_str(&mut r)?;
                let ndim = r.u32()? as usize;
                let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                let n = n.ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
                let data = r.f32s(n)?;
                s.push(tname, Tensor::new(shape, data)?);
            }
            ck.sections.push(s);
        }
        r.finish()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&buf)
    }
}
