use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::MetricReport;
use super::HarnessError;
use crate::camera::{CameraModel, CAMERA_PARAMS};
use crate::field::{read_field_checkpoint, FIELD_FORMAT_VERSION, write_field_checkpoint, FieldConfig, RayOffsetField, RefractiveFieldModel, StoredField};
use crate::optim::{render_view, trace_exit, train, write_loss_log, LogRow, RayModel, TrainConfig, TrainError, TrainState};
use crate::radiance::{
    read_grid_checkpoint, stratified_parameters, GRID_FORMAT_VERSION, write_grid_checkpoint, Aabb, Image, RadianceGrid, SamplingConfig,
};
use crate::simulator::{simulate_capture, voxelize, CaptureDataset, CoverConfig, DatasetManifest, DATASET_FORMAT_VERSION, RigConfig, SceneSpec};
use crate::vec3::Vec3;

/// Ray model used when the refractive field is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationHead {
    RayOffset,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeFlags {
    pub enable_refractive_field: bool,
    pub enable_warmup: bool,
    pub enable_camera_offsets: bool,
    pub ablation_head: AblationHead,
}

impl Default for ModeFlags {
    fn default() -> Self {
        Self {
            enable_refractive_field: true,
            enable_warmup: true,
            enable_camera_offsets: true,
            ablation_head: AblationHead::RayOffset,
        }
    }
}

/// Initial state of the trained grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridInit {
    pub resolution: usize,
    pub half_extent: f64,
    pub density_scale: f64,
    /// Physical density every voxel starts with (1/m).
    pub density: f64,
    pub rgb: [f64; 3],
}

impl Default for GridInit {
    fn default() -> Self {
        Self {
            resolution: 64,
            half_extent: 0.5,
            density_scale: 50.0,
            density: 0.5,
            rgb: [0.5; 3],
        }
    }
}

impl GridInit {
    pub fn build(&self) -> Result<RadianceGrid, HarnessError> {
        let mut grid = RadianceGrid::vacuum([self.resolution; 3], Aabb::cube(self.half_extent), self.density_scale)?;
        for v in 0..grid.voxel_count() {
            grid.set_voxel(v, self.density, self.rgb);
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Scene voxelized for simulation; the default desk scene when absent.
    pub scene: Option<SceneSpec>,
    pub scene_resolution: usize,
    pub rig: RigConfig,
    pub cover: CoverConfig,
    pub sampling: SamplingConfig,
    pub holdout_every: usize,
    pub grid: GridInit,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub modes: ModeFlags,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 0,
            scene: None,
            scene_resolution: 64,
            rig: RigConfig::default(),
            cover: CoverConfig::default(),
            sampling: SamplingConfig::default(),
            holdout_every: 8,
            grid: GridInit::default(),
            field: FieldConfig::default(),
            train: TrainConfig::default(),
            modes: ModeFlags::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Training config after applying the mode flags.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train;
        if !self.modes.enable_warmup {
            t.warmup_iters = 0;
        }
        t.optimize_camera = self.modes.enable_camera_offsets;
        t.index_inside = self.field.index_inside;
        t.index_outside = self.field.index_outside;
        t
    }

    pub fn initial_model(&self) -> RayModel {
        if self.modes.enable_refractive_field {
            RayModel::Refractive(RefractiveFieldModel::new(self.field))
        } else {
            match self.modes.ablation_head {
                AblationHead::RayOffset => RayModel::RayOffset(RayOffsetField::new(self.field)),
                AblationHead::Identity => RayModel::Identity,
            }
        }
    }

    pub fn initial_state(&self) -> Result<TrainState, HarnessError> {
        Ok(TrainState {
            grid: self.grid.build()?,
            model: self.initial_model(),
            camera_offsets: [0.0; CAMERA_PARAMS],
        })
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String, HarnessError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Hex SHA-256 of the serialized configuration.
pub fn config_hash(config: &ExperimentConfig) -> Result<String, HarnessError> {
    Ok(hex::encode(Sha256::digest(config.to_toml()?.as_bytes())))
}

/// Voxelizes the configured scene and renders the rig through the cover.
pub fn simulate_from_config(config: &ExperimentConfig) -> Result<CaptureDataset, HarnessError> {
    let scene = config
        .scene
        .clone()
        .unwrap_or_else(|| SceneSpec::default_desk(config.scene_resolution));
    let grid = voxelize(&scene)?;
    let cameras = config.rig.cameras()?;
    let cover = config.cover.build()?;
    let mut data = simulate_capture(
        &grid,
        cover.as_ref(),
        &cameras,
        &config.sampling,
        config.seed,
        config.holdout_every,
    )?;
    data.manifest = DatasetManifest::new(config.seed, &config_hash(config)?);
    Ok(data)
}

/// How a run's state is stored next to `grid.bin` and `field.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub model: String,
    pub camera_offsets: [f64; CAMERA_PARAMS],
    pub sampling: SamplingConfig,
}

pub fn save_state(dir: &Path, state: &TrainState, sampling: &SamplingConfig) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_grid_checkpoint(&dir.join("grid.bin"), &state.grid)?;
    let stored = match &state.model {
        RayModel::Identity => None,
        RayModel::Refractive(m) => Some(StoredField::Geometric(m.clone())),
        RayModel::RayOffset(m) => Some(StoredField::RayOffset(m.clone())),
    };
    if let Some(s) = stored {
        write_field_checkpoint(&dir.join("field.bin"), &s)?;
    }
    let file = StateFile {
        model: state.model.name().to_string(),
        camera_offsets: state.camera_offsets,
        sampling: *sampling,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| HarnessError::Config(e.to_string()))?;
    std::fs::write(dir.join("state.json"), text)?;
    Ok(())
}

pub fn load_state(dir: &Path) -> Result<(TrainState, SamplingConfig), HarnessError> {
    let text = std::fs::read_to_string(dir.join("state.json"))?;
    let file: StateFile = serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let grid = read_grid_checkpoint(&dir.join("grid.bin"))?;
    let model = match file.model.as_str() {
        "identity" => RayModel::Identity,
        "refractive" | "ray_offset" => match read_field_checkpoint(&dir.join("field.bin"))? {
            StoredField::Geometric(m) if file.model == "refractive" => RayModel::Refractive(m),
            StoredField::RayOffset(m) if file.model == "ray_offset" => RayModel::RayOffset(m),
            _ => return Err(HarnessError::Config("field checkpoint does not match state.json".into())),
        },
        other => return Err(HarnessError::Config(format!("unknown model kind {other:?}"))),
    };
    Ok((
        TrainState {
            grid,
            model,
            camera_offsets: file.camera_offsets,
        },
        file.sampling,
    ))
}

/// Provenance written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub crate_version: String,
    pub config_hash: String,
    pub dataset_config_hash: String,
    pub seed: u64,
    pub model: String,
    pub holdout: Vec<usize>,
    pub formats: FormatVersions,
}

/// On-disk format versions of the artifacts a run reads and writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVersions {
    pub dataset: u32,
    pub grid: u32,
    pub field: u32,
}

impl FormatVersions {
    pub fn current() -> Self {
        Self {
            dataset: DATASET_FORMAT_VERSION,
            grid: GRID_FORMAT_VERSION,
            field: FIELD_FORMAT_VERSION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricReport,
    pub log: Vec<LogRow>,
    pub state: TrainState,
    /// Held-out renders as `(view, image)`.
    pub renders: Vec<(usize, Image)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(std::fs::write(path, text)?)
}

/// Renders held-out views of `state` and scores them against the dataset.
pub fn evaluate_holdout(
    state: &TrainState,
    data: &CaptureDataset,
    sampling: &SamplingConfig,
) -> Result<(MetricReport, Vec<(usize, Image)>), HarnessError> {
    let (ts, deltas) = stratified_parameters(sampling.near, sampling.far, sampling.n_samples, false, 0)?;
    let renders: Vec<(usize, Image)> = data
        .holdout
        .iter()
        .map(|&v| (v, render_view(state, &data.cameras[v], &ts, &deltas, sampling.min_transmittance).0))
        .collect();
    let report = MetricReport::evaluate(renders.iter().map(|(v, img)| (*v, img, &data.images[*v])))?;
    Ok((report, renders))
}

/// Trains on `data` and evaluates the held-out views. With `out`, writes
/// `config.toml`, `manifest.json`, `loss.csv`, `report.json`, the state
/// checkpoint under `checkpoint/`, and per held-out view the render, the
/// reference, a 4x amplified absolute-difference map and all three side by
/// side under `renders/`.
/// On a non-finite loss the last good state is checkpointed before the error
/// is returned.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &CaptureDataset,
    out: Option<&Path>,
) -> Result<ExperimentOutcome, HarnessError> {
    let train_views = data.train_views();
    let training = data.training_data(&train_views);
    let initial = config.initial_state()?;
    let tc = config.effective_train();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), config.to_toml()?)?;
        write_json(
            &dir.join("manifest.json"),
            &RunManifest {
                name: config.name.clone(),
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: config_hash(config)?,
                dataset_config_hash: data.manifest.config_hash.clone(),
                seed: tc.seed,
                model: initial.model.name().to_string(),
                holdout: data.holdout.clone(),
                formats: FormatVersions::current(),
            },
        )?;
    }
    let outcome = match train(&training, initial, &tc, &config.sampling, None) {
        Ok(o) => o,
        Err(TrainError::NonFiniteLoss { iter, last_good, log }) => {
            if let Some(dir) = out {
                save_state(&dir.join("checkpoint"), &last_good, &config.sampling)?;
                write_loss_log(&dir.join("loss.csv"), &log)?;
            }
            return Err(TrainError::NonFiniteLoss { iter, last_good, log }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let (report, renders) = evaluate_holdout(&outcome.state, data, &config.sampling)?;
    if let Some(dir) = out {
        save_state(&dir.join("checkpoint"), &outcome.state, &config.sampling)?;
        write_loss_log(&dir.join("loss.csv"), &outcome.log)?;
        write_json(&dir.join("report.json"), &report)?;
        let rdir = dir.join("renders");
        std::fs::create_dir_all(&rdir)?;
        for (v, img) in &renders {
            img.write_png(&rdir.join(format!("view_{v:03}_render.png")))?;
            data.images[*v].write_png(&rdir.join(format!("view_{v:03}_reference.png")))?;
            let diff = img.abs_diff(&data.images[*v], 4.0);
            diff.write_png(&rdir.join(format!("view_{v:03}_diff.png")))?;
            if let Some(side) = Image::hstack(&[img, &data.images[*v], &diff]) {
                side.write_png(&rdir.join(format!("view_{v:03}_side_by_side.png")))?;
            }
        }
    }
    Ok(ExperimentOutcome {
        report,
        log: outcome.log,
        state: outcome.state,
        renders,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Full method, no refractive field, no warm-up; same data and seed.
/// Writes each run under `out/<name>/` and the summary table as
/// `ablation.csv` and `ablation.json`.
pub fn ablate(
    config: &ExperimentConfig,
    data: &CaptureDataset,
    out: Option<&Path>,
) -> Result<Vec<(AblationRow, ExperimentOutcome)>, HarnessError> {
    let mut variants = Vec::new();
    let mut full = config.clone();
    full.modes.enable_refractive_field = true;
    full.modes.enable_warmup = true;
    variants.push(("full", full.clone()));
    let mut no_field = full.clone();
    no_field.modes.enable_refractive_field = false;
    variants.push(("no_refractive_field", no_field));
    let mut no_warmup = full;
    no_warmup.modes.enable_warmup = false;
    variants.push(("no_warmup", no_warmup));

    let mut rows = Vec::new();
    for (name, mut cfg) in variants {
        cfg.name = format!("{}-{name}", config.name);
        let sub = out.map(|d| d.join(name));
        let outcome = run_experiment(&cfg, data, sub.as_deref())?;
        rows.push((
            AblationRow {
                name: name.to_string(),
                psnr: outcome.report.psnr,
                ssim: outcome.report.ssim,
            },
            outcome,
        ));
    }
    if let Some(dir) = out {
        let mut csv = String::from("name,psnr,ssim\n");
        for (r, _) in &rows {
            csv.push_str(&format!("{},{:.4},{:.5}\n", r.name, r.psnr, r.ssim));
        }
        std::fs::write(dir.join("ablation.csv"), csv)?;
        let table: Vec<&AblationRow> = rows.iter().map(|(r, _)| r).collect();
        write_json(&dir.join("ablation.json"), &table)?;
    }
    Ok(rows)
}

/// Mean angle in degrees between the exit directions predicted by `state`
/// for `camera` and a ground-truth world-frame exit map, over the centered
/// window covering `fraction` of each image axis. Pixels missing on either
/// side are ignored; returns `None` when none remain.
pub fn exit_ray_angular_error(
    state: &TrainState,
    camera: &CameraModel,
    exit_map: &[[f64; 6]],
    fraction: f64,
) -> Option<f64> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let margin = |n: usize| ((n as f64 * (1.0 - fraction) / 2.0).round() as usize).min(n / 2);
    let (mx, my) = (margin(w), margin(h));
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in my..h - my {
        for col in mx..w - mx {
            let m = exit_map[row * w + col];
            if m.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let t = trace_exit(
                &state.model,
                camera,
                &state.camera_offsets,
                CameraModel::pixel_center(col as u32, row as u32),
                false,
            );
            if t.tir {
                continue;
            }
            let truth = camera.pose.to_camera_dir(Vec3::new(m[3], m[4], m[5])).normalized();
            let cos = t.exit.direction.normalized().dot(truth).clamp(-1.0, 1.0);
            sum += cos.acos().to_degrees();
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Means of `values` over consecutive non-overlapping windows; a trailing
/// partial window is dropped.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    values
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}
