//! Configuration, metrics, experiment orchestration and artifact writing.

mod experiment;
mod gradsuite;
mod io;
mod metrics;

pub use experiment::{
    ablate, config_hash, file_hash, evaluate_holdout, exit_ray_angular_error, load_state, run_experiment, save_state, simulate_from_config,
    window_means, AblationHead, AblationRow, ExperimentConfig, ExperimentOutcome, FormatVersions, GridInit, ModeFlags, RunManifest,
    StateFile,
};
pub use gradsuite::{gradient_suite, GradSuiteConfig, GradSuiteEntry};
pub use io::{evaluate_dirs, read_camera_list, render_cameras, write_metric_report};
pub use metrics::{mse, psnr, ssim, ImageMetrics, MetricError, MetricReport, PSNR_CAP_DB};

use thiserror::Error;

use crate::camera::CameraError;
use crate::field::FieldError;
use crate::geometry::GeometryError;
use crate::optim::TrainError;
use crate::radiance::RadianceError;
use crate::simulator::SimulationError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("simulation: {0}")]
    Simulation(#[from] SimulationError),
    #[error("training: {0}")]
    Training(#[from] TrainError),
    #[error("rendering: {0}")]
    Radiance(#[from] RadianceError),
    #[error("field: {0}")]
    Field(#[from] FieldError),
    #[error("camera: {0}")]
    Camera(#[from] CameraError),
    #[error("metrics: {0}")]
    Metric(#[from] MetricError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse error class used for reporting and process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Malformed or out-of-range configuration and inputs.
    Config,
    /// Missing files, unreadable or malformed datasets and checkpoints.
    Data,
    /// Divergence, non-convergence and other numerical failures.
    Numerical,
}

impl ErrorCategory {
    pub fn label(self) -> &'static str {
        match self {
            Self::Config => "config",
            Self::Data => "data",
            Self::Numerical => "numerical",
        }
    }
}

fn geometry_category(e: &GeometryError) -> ErrorCategory {
    match e {
        GeometryError::InvalidInput(_) => ErrorCategory::Config,
        _ => ErrorCategory::Numerical,
    }
}

fn camera_category(e: &CameraError) -> ErrorCategory {
    match e {
        CameraError::Io(_) => ErrorCategory::Data,
        CameraError::NoConvergence | CameraError::Behind => ErrorCategory::Numerical,
        _ => ErrorCategory::Config,
    }
}

fn radiance_category(e: &RadianceError) -> ErrorCategory {
    match e {
        RadianceError::Checkpoint(_) | RadianceError::Io(_) => ErrorCategory::Data,
        RadianceError::Camera(c) => camera_category(c),
        RadianceError::Geometry(g) => geometry_category(g),
        _ => ErrorCategory::Config,
    }
}

impl HarnessError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Self::Config(_) => ErrorCategory::Config,
            Self::Simulation(e) => match e {
                SimulationError::InvalidScene(_) | SimulationError::InvalidConfig(_) => ErrorCategory::Config,
                SimulationError::Io(_) | SimulationError::Format(_) => ErrorCategory::Data,
                SimulationError::Radiance(r) => radiance_category(r),
                SimulationError::Camera(c) => camera_category(c),
                SimulationError::Geometry(g) => geometry_category(g),
            },
            Self::Training(e) => match e {
                TrainError::InvalidConfig(_) => ErrorCategory::Config,
                TrainError::Data(_) => ErrorCategory::Data,
                TrainError::NonFiniteLoss { .. } => ErrorCategory::Numerical,
                TrainError::Radiance(r) => radiance_category(r),
            },
            Self::Radiance(e) => radiance_category(e),
            Self::Field(e) => match e {
                FieldError::Degenerate => ErrorCategory::Numerical,
                FieldError::Checkpoint(_) | FieldError::Io(_) => ErrorCategory::Data,
            },
            Self::Camera(e) => camera_category(e),
            Self::Metric(_) | Self::Io(_) => ErrorCategory::Data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_follow_the_source() {
        assert_eq!(HarnessError::Config("x".into()).category(), ErrorCategory::Config);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(HarnessError::Io(io).category(), ErrorCategory::Data);
        let e = HarnessError::Radiance(RadianceError::Geometry(GeometryError::TotalInternalReflection));
        assert_eq!(e.category(), ErrorCategory::Numerical);
        let e = HarnessError::Training(TrainError::InvalidConfig("lr".into()));
        assert_eq!(e.category(), ErrorCategory::Config);
    }
}
