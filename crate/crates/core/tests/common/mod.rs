#![allow(dead_code)]

pub mod estimator;
pub mod flow;
pub mod imu;
pub mod jacobians;
pub mod mapper;
pub mod nfr;
