//! Skeleton, pose features, beat tracks, the procedural corpus and their
//! file formats.

mod beats;
mod constraint;
mod corpus;
pub mod io;
mod sequence;
mod skeleton;

pub use beats::{music_features, BeatTrack, MUSIC_DIM};
pub use constraint::PoseConstraint;
pub use corpus::{genre_id, synth_clip, synth_corpus, Clip, Corpus, CorpusSpec, GENRES};
pub use sequence::{derive_kinematics, finite_difference, forward_kinematics, mpjpe, MotionSequence};
pub use skeleton::{joint, Skeleton, FPS};
