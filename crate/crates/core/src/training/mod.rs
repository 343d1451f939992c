//! Losses, optimizer, schedules and training loops.

pub mod adam;
pub mod locomotion;
pub mod losses;
pub mod pace;
pub mod pose;
pub mod schedule;

pub use adam::{Adam, AdamConfig, StepInfo};
pub use locomotion::{find_feet, prepare_locomotion, LocomotionData};
pub use losses::LossKind;
pub use pace::{load_pace_network, pace_checkpoint, train_pace, PaceTrainConfig};
pub use pose::{
    euler_targets, load_pose_network, scheduled_sampling_rollout, EpochLog, PoseDataset, PoseSequence, PoseTrainer, Rollout, TrainConfig,
};
pub use schedule::Schedule;
