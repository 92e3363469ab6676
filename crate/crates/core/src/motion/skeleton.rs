use crate::error::{Error, Result};
use crate::tensor::FkSpec;

/// Frame rate of every sequence in the corpus.
pub const FPS: u32 = 20;

/// Kinematic tree with rest offsets in meters, z up.
///
/// Rest offsets are relative to the parent joint. Pose features store
/// positions relative to the root, so FK only needs the root trajectory; the
/// tree is kept for validation, rest poses and the geometric metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    names: Vec<&'static str>,
    parents: Vec<Option<usize>>,
    rest_offsets: Vec<[f32; 3]>,
    feet: (usize, usize),
    root_rest: [f32; 3],
}

pub mod joint {
    pub const PELVIS: usize = 0;
    pub const SPINE: usize = 1;
    pub const HEAD: usize = 2;
    pub const L_SHOULDER: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const L_HAND: usize = 5;
    pub const R_SHOULDER: usize = 6;
    pub const R_ELBOW: usize = 7;
    pub const R_HAND: usize = 8;
    pub const L_KNEE: usize = 9;
    pub const L_FOOT: usize = 10;
    pub const R_KNEE: usize = 11;
    pub const R_FOOT: usize = 12;
}

impl Skeleton {
    /// The 13-joint desk skeleton. Hip joints are folded into the pelvis, so
    /// each knee hangs directly off the root.
    pub fn desk() -> Self {
        let table: [(&str, Option<usize>, [f32; 3]); 13] = [
            ("pelvis", None, [0.0, 0.0, 0.0]),
            ("spine", Some(0), [0.0, 0.0, 0.30]),
            ("head", Some(1), [0.0, 0.0, 0.25]),
            ("l_shoulder", Some(1), [0.18, 0.0, 0.05]),
            ("l_elbow", Some(3), [0.0, 0.0, -0.28]),
            ("l_hand", Some(4), [0.0, 0.0, -0.25]),
            ("r_shoulder", Some(1), [-0.18, 0.0, 0.05]),
            ("r_elbow", Some(6), [0.0, 0.0, -0.28]),
            ("r_hand", Some(7), [0.0, 0.0, -0.25]),
            ("l_knee", Some(0), [0.10, 0.0, -0.45]),
            ("l_foot", Some(9), [0.0, 0.0, -0.45]),
            ("r_knee", Some(0), [-0.10, 0.0, -0.45]),
            ("r_foot", Some(11), [0.0, 0.0, -0.45]),
        ];
        let s = Self {
            names: table.iter().map(|t| t.0).collect(),
            parents: table.iter().map(|t| t.1).collect(),
            rest_offsets: table.iter().map(|t| t.2).collect(),
            feet: (joint::L_FOOT, joint::R_FOOT),
            root_rest: [0.0, 0.0, 0.92],
        };
        s.validate().expect("desk skeleton is well formed");
        s
    }

    pub fn new(
        names: Vec<&'static str>,
        parents: Vec<Option<usize>>,
        rest_offsets: Vec<[f32; 3]>,
        feet: (usize, usize),
        root_rest: [f32; 3],
    ) -> Result<Self> {
        let s = Self {
            names,
            parents,
            rest_offsets,
            feet,
            root_rest,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let j = self.parents.len();
        if j < 2 || self.names.len() != j || self.rest_offsets.len() != j {
            return Err(Error::Parameter("skeleton tables disagree in length".into()));
        }
        if self.parents[0].is_some() {
            return Err(Error::Parameter("joint 0 must be the root".into()));
        }
        for (i, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                _ => return Err(Error::Parameter(format!("joint {i} needs a parent with a lower index"))),
            }
        }
        if self.rest_offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite rest offset".into()));
        }
        for f in [self.feet.0, self.feet.1] {
            if f >= j || self.parents.contains(&Some(f)) {
                return Err(Error::Parameter(format!("foot joint {f} must be a leaf")));
            }
        }
        Ok(())
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    pub fn name(&self, j: usize) -> &str {
        self.names[j]
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn rest_offset(&self, j: usize) -> [f32; 3] {
        self.rest_offsets[j]
    }

    pub fn feet(&self) -> (usize, usize) {
        self.feet
    }

    /// World position of the root in the first frame of every sequence.
    pub fn root_rest(&self) -> [f32; 3] {
        self.root_rest
    }

    /// Pose-feature width `3 + 3*(J-1) + 2`.
    pub fn feature_dim(&self) -> usize {
        3 + 3 * (self.joints() - 1) + 2
    }

    pub fn fk_spec(&self, fps: u32) -> FkSpec {
        FkSpec {
            joints: self.joints(),
            fps: fps as f32,
            origin: self.root_rest,
        }
    }

    /// Rest-pose joint positions relative to the root (offsets composed
    /// down the tree).
    pub fn rest_local_positions(&self) -> Vec<[f32; 3]> {
        let mut out = vec![[0.0f32; 3]; self.joints()];
        for j in 1..self.joints() {
            let p = out[self.parents[j].unwrap()];
            let o = self.rest_offsets[j];
            out[j] = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
        }
        out
    }
}
