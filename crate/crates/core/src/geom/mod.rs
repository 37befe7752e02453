//! Manifold arithmetic: rotations, rigid poses, stereographic bearings, the
//! component-wise (+)/(-) operators on composite states and a central
//! difference Jacobian used as the reference for every analytic Jacobian in
//! the crate.
//!
//! Rotation increments are applied on the left, `R (+) xi = Exp(xi) R`.
//! Every other component (translations, velocities, biases, bearing
//! coordinates, inverse distances) is Euclidean.

mod bearing;
mod pose;
mod so3;

pub use bearing::{bearing_decode, bearing_jacobian, BearingParam};
pub use pose::Pose3;
pub use so3::{
    hat, left_jacobian, left_jacobian_inv, right_jacobian, so3_exp, so3_log, vee, Rot3, SMALL_ANGLE,
};

use nalgebra::{DMatrix, DVector, Vector2, Vector3, Vector6};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("increment block has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("component kinds differ: {a:?} vs {b:?}")]
    KindMismatch { a: VarKind, b: VarKind },
    #[error("non-finite residual while perturbing block {block}")]
    NonFinite { block: usize },
    #[error("matrix is not a rotation (orthonormality error {orth_err:e}, det {det})")]
    NotARotation { orth_err: f64, det: f64 },
}

/// Kind of a state component; determines its increment dimension and the
/// (+) operator used on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum VarKind {
    Rotation,
    Translation,
    Velocity,
    Bias,
    Pose,
    Bearing,
    InvDist,
    /// Accelerometer and gyroscope biases stacked `[ba, bg]`.
    BiasPair,
    /// Bearing and inverse distance stacked `[u, v, d]`.
    Landmark,
}

impl VarKind {
    pub fn dim(self) -> usize {
        match self {
            VarKind::Rotation | VarKind::Translation | VarKind::Velocity | VarKind::Bias => 3,
            VarKind::Pose | VarKind::BiasPair => 6,
            VarKind::Bearing => 2,
            VarKind::InvDist => 1,
            VarKind::Landmark => 3,
        }
    }
}

/// One variable of a composite state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StateComponent {
    Rotation(Rot3),
    Translation(Vector3<f64>),
    Velocity(Vector3<f64>),
    Bias(Vector3<f64>),
    Pose(Pose3),
    Bearing(BearingParam),
    InvDist(f64),
}

impl StateComponent {
    pub fn kind(&self) -> VarKind {
        match self {
            StateComponent::Rotation(_) => VarKind::Rotation,
            StateComponent::Translation(_) => VarKind::Translation,
            StateComponent::Velocity(_) => VarKind::Velocity,
            StateComponent::Bias(_) => VarKind::Bias,
            StateComponent::Pose(_) => VarKind::Pose,
            StateComponent::Bearing(_) => VarKind::Bearing,
            StateComponent::InvDist(_) => VarKind::InvDist,
        }
    }

    pub fn dim(&self) -> usize {
        self.kind().dim()
    }

    pub fn boxplus(&self, xi: &[f64]) -> Result<StateComponent, GeomError> {
        let expected = self.dim();
        if xi.len() != expected {
            return Err(GeomError::DimensionMismatch {
                expected,
                got: xi.len(),
            });
        }
        let v3 = || Vector3::new(xi[0], xi[1], xi[2]);
        Ok(match self {
            StateComponent::Rotation(r) => StateComponent::Rotation(r.boxplus(&v3())),
            StateComponent::Translation(t) => StateComponent::Translation(t + v3()),
            StateComponent::Velocity(t) => StateComponent::Velocity(t + v3()),
            StateComponent::Bias(t) => StateComponent::Bias(t + v3()),
            StateComponent::Pose(p) => {
                StateComponent::Pose(p.boxplus(&Vector6::from_column_slice(xi)))
            }
            StateComponent::Bearing(b) => {
                StateComponent::Bearing(b.boxplus(&Vector2::new(xi[0], xi[1])))
            }
            StateComponent::InvDist(d) => StateComponent::InvDist(d + xi[0]),
        })
    }

    pub fn boxminus(&self, other: &StateComponent) -> Result<DVector<f64>, GeomError> {
        use StateComponent::*;
        let v = match (self, other) {
            (Rotation(a), Rotation(b)) => DVector::from_column_slice(a.boxminus(b).as_slice()),
            (Translation(a), Translation(b)) | (Velocity(a), Velocity(b)) | (Bias(a), Bias(b)) => {
                DVector::from_column_slice((a - b).as_slice())
            }
            (Pose(a), Pose(b)) => DVector::from_column_slice(a.boxminus(b).as_slice()),
            (Bearing(a), Bearing(b)) => DVector::from_vec(vec![a.u - b.u, a.v - b.v]),
            (InvDist(a), InvDist(b)) => DVector::from_element(1, a - b),
            _ => {
                return Err(GeomError::KindMismatch {
                    a: self.kind(),
                    b: other.kind(),
                })
            }
        };
        Ok(v)
    }
}

/// One block of an increment vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutBlock<K> {
    pub key: K,
    pub kind: VarKind,
    pub offset: usize,
    pub dim: usize,
}

/// Ordered map from variables to contiguous segments of an increment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout<K> {
    blocks: Vec<LayoutBlock<K>>,
    total: usize,
}

impl<K> Default for Layout<K> {
    fn default() -> Self {
        Self {
            blocks: Vec::new(),
            total: 0,
        }
    }
}

impl<K: Clone + PartialEq> Layout<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_kinds(items: impl IntoIterator<Item = (K, VarKind)>) -> Self {
        let mut l = Self::new();
        for (k, kind) in items {
            l.push(k, kind);
        }
        l
    }

    /// Appends a block and returns its offset.
    pub fn push(&mut self, key: K, kind: VarKind) -> usize {
        let offset = self.total;
        let dim = kind.dim();
        self.blocks.push(LayoutBlock {
            key,
            kind,
            offset,
            dim,
        });
        self.total += dim;
        offset
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[LayoutBlock<K>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn find(&self, key: &K) -> Option<&LayoutBlock<K>> {
        self.blocks.iter().find(|b| &b.key == key)
    }

    pub fn offset_of(&self, key: &K) -> Option<usize> {
        self.find(key).map(|b| b.offset)
    }

    pub fn contains(&self, key: &K) -> bool {
        self.find(key).is_some()
    }
}

/// Stacked increment together with the layout that gives it meaning.
#[derive(Clone, Debug)]
pub struct Increment<K> {
    pub layout: Layout<K>,
    pub values: DVector<f64>,
}

impl<K: Clone + PartialEq> Increment<K> {
    pub fn new(layout: Layout<K>, values: DVector<f64>) -> Result<Self, GeomError> {
        if values.len() != layout.total_dim() {
            return Err(GeomError::DimensionMismatch {
                expected: layout.total_dim(),
                got: values.len(),
            });
        }
        Ok(Self { layout, values })
    }

    pub fn block(&self, key: &K) -> Option<&[f64]> {
        self.layout
            .find(key)
            .map(|b| &self.values.as_slice()[b.offset..b.offset + b.dim])
    }
}

/// `s (+) xi` applied component-wise.
pub fn state_boxplus(s: &[StateComponent], xi: &[f64]) -> Result<Vec<StateComponent>, GeomError> {
    let total: usize = s.iter().map(|c| c.dim()).sum();
    if total != xi.len() {
        return Err(GeomError::DimensionMismatch {
            expected: total,
            got: xi.len(),
        });
    }
    let mut off = 0;
    s.iter()
        .map(|c| {
            let d = c.dim();
            let r = c.boxplus(&xi[off..off + d]);
            off += d;
            r
        })
        .collect()
}

pub fn state_boxminus(
    a: &[StateComponent],
    b: &[StateComponent],
) -> Result<DVector<f64>, GeomError> {
    let mut out = Vec::new();
    for (x, y) in a.iter().zip(b) {
        out.extend_from_slice(x.boxminus(y)?.as_slice());
    }
    Ok(DVector::from_vec(out))
}

pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Central-difference Jacobian of a vector residual with respect to the
/// stacked increment of `s`, perturbing each block through its own (+).
pub fn numeric_jacobian<F>(f: F, s: &[StateComponent], h: f64) -> Result<DMatrix<f64>, GeomError>
where
    F: Fn(&[StateComponent]) -> DVector<f64>,
{
    let r0 = f(s);
    let n: usize = s.iter().map(|c| c.dim()).sum();
    let mut jac = DMatrix::zeros(r0.len(), n);
    let mut col = 0;
    for (bi, comp) in s.iter().enumerate() {
        for k in 0..comp.dim() {
            let mut xi = vec![0.0; comp.dim()];
            let mut probe = |sign: f64| -> Result<DVector<f64>, GeomError> {
                xi[k] = sign * h;
                let mut sp = s.to_vec();
                sp[bi] = comp.boxplus(&xi)?;
                let r = f(&sp);
                if r.iter().any(|v| !v.is_finite()) || r.len() != r0.len() {
                    return Err(GeomError::NonFinite { block: bi });
                }
                Ok(r)
            };
            let rp = probe(1.0)?;
            let rm = probe(-1.0)?;
            jac.set_column(col, &((rp - rm) / (2.0 * h)));
            col += 1;
        }
    }
    Ok(jac)
}

/// Relative deviation used by all Jacobian checks:
/// `max|A - N| / (1 + max|A|)`.
pub fn jacobian_deviation(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).amax() / (1.0 + analytic.amax())
}
