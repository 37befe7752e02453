//! Visual-inertial odometry with marginalization, non-linear factor recovery
//! and global keyframe mapping, plus a synthetic scenario generator used to
//! verify it.

pub mod camera;
pub mod datasets;
pub mod estimator;
pub mod flow;
pub mod geom;
pub mod imu;
pub mod linalg;
pub mod mapper;
pub mod nfr;
pub mod sim;
