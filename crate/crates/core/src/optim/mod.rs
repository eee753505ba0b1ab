//! Losses, gradients, the training loop and the finite-difference checker.
//!
//! The reverse pass is assembled per block: the volume renderer, the MLP and
//! the plane fit have hand-written adjoints, while the small geometric pieces
//! (camera lifting, field head, refractions) are differentiated in forward
//! mode with [`crate::real::Dual`] and contracted with the incoming adjoint.

mod adam;
mod batch;
mod gradcheck;
mod model;
mod train;

pub use adam::Adam;
pub use batch::{evaluate_batch, render_view, BatchOptions, BatchResult, Patch, TrainState, TrainingData};
pub use gradcheck::{grad_check, grad_check_piecewise, relative_error, GradCheckReport};
pub use model::{trace_exit, ExitTrace, RayModel, SurfaceTrace, TraceGrad};
pub use train::{holdout_psnr, train, write_loss_log, LogRow, TrainConfig, TrainError, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{field_eval, fit_local_normals, FieldError, FieldPrediction, RefractiveFieldModel, SurfaceIndex};
use crate::geometry::Ray;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("batch size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub photometric: f64,
    pub normal_consistency: f64,
    pub total: f64,
    pub flagged_ray_fraction: f64,
}

impl LossReport {
    pub fn new(photometric: f64, normal_consistency: f64, lambda_normals: f64, flagged_ray_fraction: f64) -> Self {
        Self {
            photometric,
            normal_consistency,
            total: photometric + lambda_normals * normal_consistency,
            flagged_ray_fraction,
        }
    }
}

/// Sum of squared RGB residuals over the batch.
pub fn photometric_loss(rendered: &[[f64; 3]], reference: &[[f64; 3]]) -> Result<f64, OptimError> {
    if rendered.len() != reference.len() {
        return Err(OptimError::SizeMismatch(rendered.len(), reference.len()));
    }
    Ok(rendered
        .iter()
        .zip(reference)
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>())
        .sum())
}

/// `|fitted - predicted|^2` for one neighborhood and surface.
pub fn normal_patch_term(fitted: crate::Vec3, predicted: crate::Vec3) -> f64 {
    let d = fitted - predicted;
    d.dot(d)
}

/// Normal-consistency loss over 3x3 ray patches (row-major, center at
/// index 4), both surfaces. Degenerate neighborhoods contribute nothing.
pub fn normal_consistency_loss(field: &RefractiveFieldModel, patches: &[[Ray; 9]]) -> f64 {
    let mut total = 0.0;
    for rays in patches {
        let preds: [FieldPrediction; 9] = std::array::from_fn(|k| field_eval(field, &rays[k]));
        for surface in [SurfaceIndex::First, SurfaceIndex::Second] {
            match fit_local_normals(&preds, rays, surface) {
                Ok(fitted) => {
                    let predicted = match surface {
                        SurfaceIndex::First => preds[4].n1,
                        SurfaceIndex::Second => preds[4].n2,
                    };
                    total += normal_patch_term(fitted, predicted);
                }
                Err(FieldError::Degenerate) => {}
                Err(_) => unreachable!("plane fitting only fails on degenerate input"),
            }
        }
    }
    total
}
