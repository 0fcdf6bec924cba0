//! Sliding-window state estimation (placeholder while modules land).

use nalgebra::{UnitQuaternion, Vector3};

use crate::imu::ImuBias;

/// Per-frame navigation state: pose, velocity, and IMU biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub bias: ImuBias,
    pub timestamp: f64,
}

impl NavState {
    pub fn origin(timestamp: f64) -> Self {
        Self {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            bias: ImuBias::zero(),
            timestamp,
        }
    }
}

pub struct SlidingWindow;
