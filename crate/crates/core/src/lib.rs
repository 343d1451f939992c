//! Quaternion-based human motion modeling.
//!
//! The crate is organized bottom-up: [`rotmath`] holds the rotation
//! parameterizations, [`kinematics`] the skeleton and forward kinematics,
//! [`autodiff`] a small reverse-mode tape that differentiates both, and the
//! remaining modules build data handling, networks, training and evaluation
//! on top.

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod kinematics;
pub mod models;
pub mod motiondata;
pub mod rng;
pub mod rotmath;
pub mod training;

pub use error::{Error, Result};
