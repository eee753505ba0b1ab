//! On-disk dataset layout:
//!
//! ```text
//! manifest.json            seed, versions, split, per-view flagged counts
//! cover.json               ground-truth cover (camera frame), if any
//! images/view_NNN.png      8-bit RGB
//! images/view_NNN.bin      little-endian f32 RGB, row-major
//! cameras/view_NNN.json    camera files
//! exit_rays/view_NNN.bin   little-endian f64, six per pixel (origin, direction)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::camera::{read_camera_file, write_camera_file, CameraModel};
use crate::geometry::CoverSurfacePair;
use crate::optim::TrainingData;
use crate::radiance::Image;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub crate_version: String,
    pub seed: u64,
    /// Hex SHA-256 of the configuration that produced the dataset.
    pub config_hash: String,
}

impl DatasetManifest {
    pub fn new(seed: u64, config_hash: &str) -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureDataset {
    pub images: Vec<Image>,
    pub cameras: Vec<CameraModel>,
    pub cover: Option<CoverSurfacePair>,
    pub holdout: Vec<usize>,
    /// Per view, world-frame exit rays (six values per pixel).
    pub exit_rays: Option<Vec<Vec<[f64; 6]>>>,
    pub flagged: Vec<usize>,
    pub manifest: DatasetManifest,
}

impl CaptureDataset {
    pub fn train_views(&self) -> Vec<usize> {
        (0..self.images.len()).filter(|i| !self.holdout.contains(i)).collect()
    }

    pub fn training_data<'a>(&'a self, train_views: &'a [usize]) -> TrainingData<'a> {
        TrainingData {
            images: &self.images,
            cameras: &self.cameras,
            train_views,
            holdout_views: &self.holdout,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    #[serde(flatten)]
    manifest: DatasetManifest,
    n_views: usize,
    holdout: Vec<usize>,
    flagged: Vec<usize>,
    has_exit_rays: bool,
}

fn view_name(i: usize) -> String {
    format!("view_{i:03}")
}

fn json_err(e: serde_json::Error) -> SimulationError {
    SimulationError::Format(e.to_string())
}

pub fn write_dataset(dir: &Path, data: &CaptureDataset) -> Result<(), SimulationError> {
    for sub in ["images", "cameras", "exit_rays"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let file = ManifestFile {
        manifest: data.manifest.clone(),
        n_views: data.images.len(),
        holdout: data.holdout.clone(),
        flagged: data.flagged.clone(),
        has_exit_rays: data.exit_rays.is_some(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&file).map_err(json_err)?)?;
    if let Some(c) = &data.cover {
        std::fs::write(dir.join("cover.json"), serde_json::to_string_pretty(c).map_err(json_err)?)?;
    }
    for (i, (img, cam)) in data.images.iter().zip(&data.cameras).enumerate() {
        let name = view_name(i);
        img.write_png(&dir.join("images").join(format!("{name}.png")))?;
        img.write_raw(&dir.join("images").join(format!("{name}.bin")))?;
        write_camera_file(&dir.join("cameras").join(format!("{name}.json")), cam)?;
        if let Some(maps) = &data.exit_rays {
            let bytes: Vec<u8> = maps[i].iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
            std::fs::write(dir.join("exit_rays").join(format!("{name}.bin")), bytes)?;
        }
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<CaptureDataset, SimulationError> {
    let file: ManifestFile =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?).map_err(json_err)?;
    if file.manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(SimulationError::Format(format!(
            "unsupported dataset version {}",
            file.manifest.format_version
        )));
    }
    let cover_path = dir.join("cover.json");
    let cover = if cover_path.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(cover_path)?).map_err(json_err)?)
    } else {
        None
    };
    let mut images = Vec::new();
    let mut cameras = Vec::new();
    let mut exit_rays = file.has_exit_rays.then(Vec::new);
    for i in 0..file.n_views {
        let name = view_name(i);
        let cam = read_camera_file(&dir.join("cameras").join(format!("{name}.json")))?;
        let raw = dir.join("images").join(format!("{name}.bin"));
        let img = if raw.exists() {
            Image::read_raw(&raw, cam.width, cam.height)?
        } else {
            Image::read_png(&dir.join("images").join(format!("{name}.png")))?
        };
        if let Some(maps) = exit_rays.as_mut() {
            let bytes = std::fs::read(dir.join("exit_rays").join(format!("{name}.bin")))?;
            if bytes.len() != 48 * cam.width as usize * cam.height as usize {
                return Err(SimulationError::Format(format!("{name}: exit-ray map has wrong size")));
            }
            let vals: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            maps.push(vals.chunks_exact(6).map(|c| std::array::from_fn(|k| c[k])).collect());
        }
        images.push(img);
        cameras.push(cam);
    }
    Ok(CaptureDataset {
        images,
        cameras,
        cover,
        holdout: file.holdout,
        exit_rays,
        flagged: file.flagged,
        manifest: file.manifest,
    })
}
