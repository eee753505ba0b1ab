//! Rays, vector refraction and analytic cover traversal.

mod cover;
mod surface;

pub use cover::{trace_through_cover, CoverSurfacePair, CoverTraversal};
pub use surface::{intersect, BicubicFigure, Figure, ParametricSurface, SurfaceBase};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;
use crate::vec3::Vec3;

/// Tolerance used for unit-length preconditions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("total internal reflection")]
    TotalInternalReflection,
    #[error("ray misses the surface")]
    Miss,
    #[error("intersection did not converge (residual {residual:.3e} m after {iterations} iterations)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalized(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.origin.to_array().iter().all(|v| v.is_finite());
        finite && (self.direction.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }
}

/// Intersection record; `normal` faces the medium the ray arrives from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub distance: f64,
    pub point: Vec3,
    pub normal: Vec3,
}

/// Vector Snell refraction.
///
/// `normal` must face the incident medium and `eta` is the ratio of the
/// incident index to the transmitted index. The transmitted direction is
/// `eta * r + (eta * c1 - c2) * n` with `c1 = -<n, r>` and
/// `c2 = sqrt(1 - eta^2 (1 - c1^2))`.
pub fn refract<T: Real>(incident: Vec3<T>, normal: Vec3<T>, eta: T) -> Result<Vec3<T>, GeometryError> {
    let ri = incident.re().norm();
    let rn = normal.re().norm();
    if (ri - 1.0).abs() > UNIT_TOLERANCE || (rn - 1.0).abs() > UNIT_TOLERANCE {
        return Err(GeometryError::InvalidInput(format!(
            "refract expects unit vectors (|r| = {ri}, |n| = {rn})"
        )));
    }
    if !(eta.re() > 0.0) {
        return Err(GeometryError::InvalidInput(format!("eta must be positive, got {}", eta.re())));
    }
    let c1 = -normal.dot(incident);
    if !(c1.re() > 0.0) {
        return Err(GeometryError::InvalidInput(
            "normal must face the incident medium".to_string(),
        ));
    }
    let k = -(eta * eta) * (-(c1 * c1) + 1.0) + 1.0;
    if k.re() < 0.0 {
        return Err(GeometryError::TotalInternalReflection);
    }
    let c2 = k.sqrt();
    Ok(incident.scale(eta) + normal.scale(eta * c1 - c2))
}
