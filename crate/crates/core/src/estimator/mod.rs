//! Fixed-lag visual-inertial smoother over a window of pose-only keyframes
//! and recent full states, with a Schur-complement marginalization prior
//! kept consistent by first-estimate Jacobians.

mod marg;
mod prior;
mod reproj;
mod solver;
#[cfg(test)]
mod testutil;
mod vio;
mod window;

pub use marg::{gauge_directions, keyframe_decision, KeyframeMarginalizationEvent, MargCase};
pub use prior::{MargPrior, PriorError};
pub use reproj::{
    huber, reprojection_error, reprojection_residual, triangulate_stereo, Landmark, Observation,
    ReprojectionJacobians,
};
pub use solver::{
    linearize, linearize_factors, optimize, window_energy, FactorSet, Linearization,
    OptimizeReport, SolverParams,
};
pub use vio::{run_vio, StepOutput, Vio, VioOutput, VioParams};
pub use window::{BiasWalk, Frame, GaugePrior, ImuFactor, WindowState};

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Pose3;

pub type FrameId = u64;
pub type LandmarkId = u64;

/// Frame variable of the window. Biases are stacked `[ba, bg]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    Pose(FrameId),
    Vel(FrameId),
    Bias(FrameId),
}

impl Var {
    pub fn dim(&self) -> usize {
        match self {
            Var::Pose(_) | Var::Bias(_) => 6,
            Var::Vel(_) => 3,
        }
    }

    pub fn frame(&self) -> FrameId {
        match *self {
            Var::Pose(f) | Var::Vel(f) | Var::Bias(f) => f,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VarValue {
    Pose(Pose3),
    Vel(Vector3<f64>),
    Bias(Vector6<f64>),
}

impl VarValue {
    /// `self [-] lin` in the tangent space used by the increments.
    pub fn boxminus(&self, lin: &VarValue) -> Result<Vec<f64>, EstimatorError> {
        match (self, lin) {
            (VarValue::Pose(a), VarValue::Pose(b)) => Ok(a.boxminus(b).as_slice().to_vec()),
            (VarValue::Vel(a), VarValue::Vel(b)) => Ok((a - b).as_slice().to_vec()),
            (VarValue::Bias(a), VarValue::Bias(b)) => Ok((a - b).as_slice().to_vec()),
            _ => Err(EstimatorError::Internal("variable kind mismatch".into())),
        }
    }
}

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("non-finite residual in {0}")]
    NonFinite(String),
    #[error("singular reduced system: {0}")]
    Singular(String),
    #[error("internal inconsistency: {0}")]
    Internal(String),
    #[error(transparent)]
    Imu(#[from] crate::imu::ImuError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("dataset: {0}")]
    Dataset(String),
}
