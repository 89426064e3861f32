//! Appearance-based loop closure detection and geometric proximity
//! detection.

mod bayes;
mod transform;
mod vocabulary;

pub use bayes::{HypothesisFilter, TransitionModel};
pub use transform::{
    detect_proximity, estimate_loop_transform, match_descriptors, ransac_rigid, LoopParams, LoopRejection,
    RansacResult,
};
pub use vocabulary::{likelihood, Descriptor, Likelihood, Vocabulary, WordId};
