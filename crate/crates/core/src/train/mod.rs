//! Desk-scale training on synthetic click tracks.

mod synth;
mod targets;
mod trainer;

pub use synth::{gen_click_track, gen_corpus, CorpusSpec, SynthOptions, SyntheticClip};
pub use targets::{frame_targets, multitask_loss, tempo_target, FrameTargets};
pub use trainer::{
    evaluate_loss, examples_from_clip, train, Example, Plateau, TrainConfig, TrainError,
    TrainReport,
};
