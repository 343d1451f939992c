//! Pose, pace and control networks.

pub mod checkpoint;
pub mod encoder;
pub mod generate;
pub mod layers;
pub mod pace;
pub mod pose;

pub use checkpoint::Checkpoint;
pub use encoder::{ControlEncoder, ControlFrame};
pub use generate::{generate_locomotion, locomotion_sequence, speed_profile, GenerateConfig, LocomotionSequence};
pub use pace::{pace_sample, PaceNetwork, PaceNetworkConfig, PaceOutput, PaceSample, PaceVariant};
pub use pose::{Backbone, ConvOutput, Mode, PoseNetwork, PoseNetworkConfig, StepOutput, Stepper};
