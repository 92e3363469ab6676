//! Evaluation metrics: beat alignment, physical plausibility, Frechet
//! distances on kinematic and geometric features, diversity, and the
//! statistical tests used to compare them.

mod beats;
mod features;
mod fid;
mod physics;
mod report;
mod stats;

pub use beats::{beat_align_score, extract_dance_beats, speed_envelope, BAS_SIGMA_FRAMES};
pub use features::{geometric_features, kinematic_features, GEOMETRIC_DIM, GEOMETRIC_PREDICATES};
pub use fid::{diversity, fid, frechet_distance, GaussianSummary};
pub use physics::{foot_skating_ratio, pfc, FSR_CONTACT_HEIGHT, FSR_SLIDE_SPEED};
pub use report::{bas_against, evaluate, joint_distance, ClipScores, EvalReport, REPORT_KEYS};
pub use stats::{median, sign_test_p, welch_t_test};
