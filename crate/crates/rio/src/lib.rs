//! Tightly-coupled 4D radar-inertial odometry.
//!
//! The pipeline fuses three residual families in a sliding-window nonlinear
//! least-squares problem:
//!
//! * IMU pre-integration residuals between consecutive radar frames,
//! * Doppler velocity residuals over static radar points, spatially weighted
//!   so that densely and sparsely populated directions constrain the velocity
//!   estimate evenly,
//! * point-to-point residuals between world landmarks and radar detections,
//!   with correspondences found by matching 2D distance/RCS histogram
//!   descriptors.
//!
//! A deterministic measurement simulator ([`sim`]) generates worlds, ground
//! truth trajectories, IMU streams, and labeled radar scans, and doubles as
//! the test oracle. The [`pipeline`] module drives full dataset runs; [`io`]
//! and [`config`] own the on-disk formats.

pub mod config;
pub mod doppler;
pub mod estimator;
pub mod eval;
pub mod geom;
pub mod imu;
pub mod io;
pub mod lgc;
pub mod pipeline;
pub mod preprocess;
pub mod sim;
mod solver;
pub mod spatial;

pub use estimator::{NavState, SlidingWindow};
pub use geom::Pose;
pub use imu::{ImuBias, ImuSample, PreintegratedImu};
pub use preprocess::{RadarPoint, RadarScan};
