//! Motion data: clips, file formats, augmentation, trajectories, gait
//! features, synthetic walking and episode sampling.

pub mod augment;
pub mod bvh;
mod clip;
pub mod container;
pub mod gait;
pub mod sampler;
pub mod spline;
pub mod synth;

pub use augment::{downsample_all_phases, mirror, prune_constant_joints, random_rotate, rotate_about_vertical, spin_root, SwapMap};
pub use bvh::{load_bvh, parse_bvh, save_bvh, write_bvh};
pub use clip::MotionClip;
pub use container::{load_clip, load_dataset, save_clip, save_dataset};
pub use gait::{extract_gait_features, GaitFeatures};
pub use sampler::{Episode, EpisodeSampler};
pub use spline::{fit_spline, TrajectorySpline, Vec2};
pub use synth::{synth_chain, synth_corpus, synth_gait, GaitParams};
