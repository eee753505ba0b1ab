use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::Adam;
use super::batch::{evaluate_batch, render_view, BatchOptions, Patch, TrainState, TrainingData};
use super::model::RayModel;
use super::LossReport;
use crate::camera::CAMERA_PARAMS;
use crate::harness::psnr;
use crate::radiance::{stratified_parameters, RadianceError, SamplingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub warmup_iters: usize,
    pub total_iters: usize,
    pub rays_per_batch: usize,
    pub lr_grid: f64,
    pub lr_field: f64,
    pub lr_camera: f64,
    pub lambda_normals: f64,
    pub index_inside: f64,
    pub index_outside: f64,
    pub seed: u64,
    /// Whether the shared camera offsets are optimized after warm-up.
    pub optimize_camera: bool,
    /// Held-out PSNR is logged every this many iterations (0 disables).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_iters: 500,
            total_iters: 3000,
            rays_per_batch: 1024,
            lr_grid: 5e-3,
            lr_field: 1e-4,
            lr_camera: 1e-5,
            lambda_normals: 0.1,
            index_inside: 1.49,
            index_outside: 1.0,
            seed: 0,
            optimize_camera: true,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.warmup_iters > self.total_iters {
            return bad("warmup_iters exceeds total_iters");
        }
        if !(self.lr_grid > 0.0 && self.lr_field > 0.0 && self.lr_camera > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.rays_per_batch < 9 {
            return bad("rays_per_batch must be at least 9");
        }
        if !(self.index_inside > 0.0 && self.index_outside > 0.0) {
            return bad("indices must be positive");
        }
        if !(self.lambda_normals >= 0.0) {
            return bad("lambda_normals must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub iter: usize,
    pub report: LossReport,
    pub photometric_per_ray: f64,
    pub psnr_holdout: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRow>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss {
        iter: usize,
        last_good: Box<TrainState>,
        log: Vec<LogRow>,
    },
    #[error(transparent)]
    Radiance(#[from] RadianceError),
}

fn check_data(data: &TrainingData<'_>) -> Result<(), TrainError> {
    if data.images.len() != data.cameras.len() {
        return Err(TrainError::Data(format!(
            "{} images for {} cameras",
            data.images.len(),
            data.cameras.len()
        )));
    }
    for (i, (img, cam)) in data.images.iter().zip(data.cameras).enumerate() {
        if img.width != cam.width || img.height != cam.height || img.width < 3 || img.height < 3 {
            return Err(TrainError::Data(format!("view {i}: image size does not match its camera")));
        }
    }
    if data.train_views.is_empty() || data.train_views.iter().chain(data.holdout_views).any(|&v| v >= data.images.len()) {
        return Err(TrainError::Data("empty or out-of-range split".into()));
    }
    Ok(())
}

/// Mean held-out PSNR (dB) of `state`.
pub fn holdout_psnr(state: &TrainState, data: &TrainingData<'_>, ts: &[f64], deltas: &[f64], min_t: f64) -> Option<f64> {
    if data.holdout_views.is_empty() {
        return None;
    }
    let sum: f64 = data
        .holdout_views
        .iter()
        .map(|&v| {
            let (img, _) = render_view(state, &data.cameras[v], ts, deltas, min_t);
            psnr(&img, &data.images[v], 1.0).expect("matching sizes")
        })
        .sum();
    Some(sum / data.holdout_views.len() as f64)
}

/// Warm-up then joint optimization.
///
/// During the first `warmup_iters` iterations only the grid is updated; the
/// ray model and camera offsets stay bitwise unchanged. Afterwards all groups
/// are updated with their own Adam state. Camera offsets are projected onto
/// their admissible ball after every step and grid colors onto `[0, 1]`.
pub fn train(
    data: &TrainingData<'_>,
    initial: TrainState,
    config: &TrainConfig,
    sampling: &SamplingConfig,
    mut hook: Option<&mut dyn FnMut(usize, &TrainState)>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_data(data)?;
    let mut state = initial;
    let mut log = Vec::new();
    if config.total_iters == 0 {
        return Ok(TrainOutcome { state, log });
    }
    let (ts, deltas) = stratified_parameters(sampling.near, sampling.far, sampling.n_samples, false, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grid_opt = Adam::new(state.grid.params().len(), config.lr_grid);
    let mut model_opt = Adam::new(state.model.params().len(), config.lr_field);
    let mut camera_opt = Adam::new(CAMERA_PARAMS, config.lr_camera);
    let n_patches = config.rays_per_batch / 9;
    let has_model = !matches!(state.model, RayModel::Identity);

    for iter in 0..config.total_iters {
        let joint = iter >= config.warmup_iters;
        let patches: Vec<Patch> = (0..n_patches)
            .map(|_| {
                let view = data.train_views[rng.gen_range(0..data.train_views.len())];
                let cam = &data.cameras[view];
                Patch {
                    view,
                    col: rng.gen_range(0..cam.width - 2),
                    row: rng.gen_range(0..cam.height - 2),
                }
            })
            .collect();
        let (jt, jd);
        let (ts_i, deltas_i) = if sampling.jitter {
            let seed = config.seed ^ (iter as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            (jt, jd) = stratified_parameters(sampling.near, sampling.far, sampling.n_samples, true, seed)?;
            (&jt[..], &jd[..])
        } else {
            (&ts[..], &deltas[..])
        };
        let opts = BatchOptions {
            ts: ts_i,
            deltas: deltas_i,
            min_transmittance: sampling.min_transmittance,
            lambda_normals: config.lambda_normals,
            photometric_weight: 1.0,
            normal_weight: config.lambda_normals,
            grad_grid: true,
            grad_model: joint && has_model,
            grad_camera: joint && config.optimize_camera,
        };
        let result = evaluate_batch(&state, data, &patches, &opts);
        let finite = result.report.total.is_finite()
            && result.grid_grad.iter().all(|g| g.is_finite())
            && result.model_grad.iter().all(|g| g.is_finite())
            && result.camera_grad.iter().all(|g| g.is_finite());
        if !finite {
            return Err(TrainError::NonFiniteLoss {
                iter,
                last_good: Box::new(state),
                log,
            });
        }
        grid_opt.step(state.grid.params_mut(), &result.grid_grad);
        state.grid.project_colors();
        if opts.grad_model {
            model_opt.step(state.model.params_mut(), &result.model_grad);
        }
        if opts.grad_camera {
            camera_opt.step(&mut state.camera_offsets, &result.camera_grad);
            project_camera_offsets(&mut state.camera_offsets, data);
        }
        let last = iter + 1 == config.total_iters;
        let psnr_holdout = if config.eval_every > 0 && ((iter + 1) % config.eval_every == 0 || last) {
            holdout_psnr(&state, data, &ts, &deltas, sampling.min_transmittance)
        } else {
            None
        };
        log.push(LogRow {
            iter,
            report: result.report,
            photometric_per_ray: result.report.photometric / result.rays.max(1) as f64,
            psnr_holdout,
        });
        if let Some(h) = hook.as_mut() {
            h(iter, &state);
        }
    }
    Ok(TrainOutcome { state, log })
}

fn project_camera_offsets(offsets: &mut [f64; CAMERA_PARAMS], data: &TrainingData<'_>) {
    let mut intr = data.cameras[0].intrinsics;
    intr.set_deltas([offsets[0], offsets[1], offsets[2], offsets[3]]);
    intr.project_offsets();
    offsets[..4].copy_from_slice(&intr.deltas());
}

/// Writes the loss log as CSV.
pub fn write_loss_log(path: &Path, log: &[LogRow]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "iter,photometric,normal_consistency,total,flagged_fraction,psnr_holdout,photometric_per_ray"
    )?;
    for r in log {
        let psnr = r.psnr_holdout.map(|p| format!("{p:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:e},{:e},{:e},{},{},{:e}",
            r.iter,
            r.report.photometric,
            r.report.normal_consistency,
            r.report.total,
            r.report.flagged_ray_fraction,
            psnr,
            r.photometric_per_ray
        )?;
    }
    out.flush()
}
