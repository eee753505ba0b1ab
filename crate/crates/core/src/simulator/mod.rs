//! Synthetic captures: voxelized primitive scenes, orbit trajectories and
//! renders through the analytic cover.

mod dataset;

pub use dataset::{read_dataset, write_dataset, CaptureDataset, DatasetManifest, DATASET_FORMAT_VERSION};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraModel, Pose};
use crate::geometry::{trace_through_cover, BicubicFigure, CoverSurfacePair, Figure, GeometryError, Ray};
use crate::radiance::{render_ray, stratified_parameters, Aabb, Image, RadianceError, RadianceGrid, SamplingConfig};
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Radiance(#[from] RadianceError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_size: Vec3 },
}

impl Shape {
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Shape::Sphere { center, radius } => (p - center).norm_squared() <= radius * radius,
            Shape::Box { center, half_size } => {
                let d = p - center;
                d.x.abs() <= half_size.x && d.y.abs() <= half_size.y && d.z.abs() <= half_size.z
            }
        }
    }

    fn extent(&self) -> (Vec3, Vec3) {
        match *self {
            Shape::Sphere { center, radius } => {
                let r = Vec3::new(radius, radius, radius);
                (center - r, center + r)
            }
            Shape::Box { center, half_size } => (center - half_size, center + half_size),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub rgb: [f64; 3],
    /// Physical density (1/m).
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub density_scale: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimulationError> {
        for (i, p) in self.primitives.iter().enumerate() {
            let (lo, hi) = p.shape.extent();
            let inside = (0..3).all(|a| lo[a] >= self.bounds.min[a] - 1e-12 && hi[a] <= self.bounds.max[a] + 1e-12);
            if !inside {
                return Err(SimulationError::InvalidScene(format!("primitive {i} leaves the bounds")));
            }
            if !(p.density >= 0.0) || p.rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(SimulationError::InvalidScene(format!("primitive {i} has invalid density or color")));
            }
        }
        Ok(())
    }

    /// Desk-scale test scene: a checkered floor tile field, colored spheres
    /// and boxes inside the unit cube.
    pub fn default_desk(resolution: usize) -> Self {
        let mut primitives = Vec::new();
        let tiles = 8;
        let tile = 0.9 / tiles as f64;
        for i in 0..tiles {
            for j in 0..tiles {
                let light = (i + j) % 2 == 0;
                let rgb = if light { [0.9, 0.85, 0.7] } else { [0.15, 0.2, 0.35] };
                primitives.push(Primitive {
                    shape: Shape::Box {
                        center: Vec3::new(-0.45 + (i as f64 + 0.5) * tile, -0.45 + (j as f64 + 0.5) * tile, -0.42),
                        half_size: Vec3::new(tile / 2.0, tile / 2.0, 0.04),
                    },
                    rgb,
                    density: 200.0,
                });
            }
        }
        let solids = [
            (Shape::Sphere { center: Vec3::new(0.0, 0.0, -0.15), radius: 0.22 }, [0.85, 0.2, 0.15]),
            (Shape::Sphere { center: Vec3::new(0.28, -0.25, -0.25), radius: 0.12 }, [0.2, 0.75, 0.3]),
            (
                Shape::Box { center: Vec3::new(-0.25, 0.25, -0.2), half_size: Vec3::new(0.1, 0.1, 0.18) },
                [0.95, 0.8, 0.1],
            ),
            (
                Shape::Box { center: Vec3::new(-0.22, -0.28, -0.3), half_size: Vec3::new(0.08, 0.12, 0.08) },
                [0.3, 0.4, 0.95],
            ),
            (Shape::Sphere { center: Vec3::new(0.0, 0.0, 0.12), radius: 0.08 }, [0.95, 0.95, 0.95]),
            (Shape::Sphere { center: Vec3::new(0.3, 0.3, -0.28), radius: 0.1 }, [0.7, 0.2, 0.8]),
        ];
        for (shape, rgb) in solids {
            primitives.push(Primitive {
                shape,
                rgb,
                density: 200.0,
            });
        }
        Self {
            primitives,
            resolution: [resolution; 3],
            bounds: Aabb::cube(0.5),
            density_scale: 50.0,
        }
    }
}

/// Voxel centers take the values of the last primitive containing them.
pub fn voxelize(spec: &SceneSpec) -> Result<RadianceGrid, SimulationError> {
    spec.validate()?;
    let mut grid = RadianceGrid::vacuum(spec.resolution, spec.bounds, spec.density_scale)?;
    let [nx, ny, nz] = spec.resolution;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let c = grid.voxel_center(i, j, k);
                if let Some(p) = spec.primitives.iter().rev().find(|p| p.shape.contains(c)) {
                    let idx = grid.index(i, j, k);
                    grid.set_voxel(idx, p.density, p.rgb);
                }
            }
        }
    }
    Ok(grid)
}

/// Poses evenly spaced in azimuth around `center`, looking at it with +z up.
/// `elevation` is in radians.
pub fn orbit_trajectory(center: Vec3, radius: f64, n_views: usize, elevation: f64) -> Result<Vec<Pose>, SimulationError> {
    if !(radius > 0.0) || n_views == 0 {
        return Err(SimulationError::InvalidConfig("radius must be positive and n_views at least 1".into()));
    }
    (0..n_views)
        .map(|i| {
            let az = 2.0 * std::f64::consts::PI * i as f64 / n_views as f64;
            let eye = center
                + Vec3::new(
                    radius * elevation.cos() * az.cos(),
                    radius * elevation.cos() * az.sin(),
                    radius * elevation.sin(),
                );
            Ok(Pose::look_at(eye, center, Vec3::Z)?)
        })
        .collect()
}

/// Cover construction parameters, all in the camera frame (+z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverConfig {
    pub enabled: bool,
    /// Axial position of the common sphere center (m).
    pub center_z: f64,
    pub base_radius: f64,
    pub thickness: f64,
    pub index: f64,
    pub aperture_radius: f64,
    pub figure_amplitude: f64,
    pub figure_nodes: usize,
    pub figure_half_extent: f64,
    pub figure_seed: u64,
}

impl Default for CoverConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            center_z: -0.01,
            base_radius: 0.06,
            thickness: 0.003,
            index: 1.49,
            aperture_radius: 0.05,
            figure_amplitude: 0.0005,
            figure_nodes: 16,
            figure_half_extent: 0.065,
            figure_seed: 7,
        }
    }
}

impl CoverConfig {
    pub fn build(&self) -> Result<Option<CoverSurfacePair>, SimulationError> {
        if !self.enabled {
            return Ok(None);
        }
        let figure = if self.figure_amplitude > 0.0 {
            Figure::Bicubic(BicubicFigure::random(
                self.figure_half_extent,
                self.figure_nodes,
                self.figure_amplitude,
                self.figure_seed,
            ))
        } else {
            Figure::Flat
        };
        Ok(Some(CoverSurfacePair::spherical_shell(
            self.center_z,
            self.base_radius,
            self.thickness,
            self.index,
            self.aperture_radius,
            figure,
        )?))
    }
}

/// A cover whose two media have the same index bends nothing and is skipped.
pub fn cover_is_inert(cover: &CoverSurfacePair) -> bool {
    cover.index_inside == cover.index_outside
}

/// Ground-truth exit ray of `pixel` in the camera frame, or `None` if the
/// cover could not be traversed.
pub fn ground_truth_exit(camera: &CameraModel, cover: Option<&CoverSurfacePair>, pixel: [f64; 2]) -> Option<Ray> {
    let local = Ray {
        origin: Vec3::ZERO,
        direction: camera.lift_local_f64(pixel),
    };
    match cover {
        Some(c) if !cover_is_inert(c) => trace_through_cover(&local, c).ok().map(|t| t.ray()),
        _ => Some(local),
    }
}

/// One simulated view.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedView {
    pub image: Image,
    /// World-frame exit rays, six values per pixel (origin, direction); NaN
    /// for flagged pixels.
    pub exit_rays: Vec<[f64; 6]>,
    pub flagged: usize,
}

fn pixel_seed(seed: u64, view: usize, index: usize) -> u64 {
    seed ^ ((view as u64) << 40) ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Renders one view pixel by pixel through the ground-truth cover.
pub fn simulate_view(
    grid: &RadianceGrid,
    cover: Option<&CoverSurfacePair>,
    camera: &CameraModel,
    view_index: usize,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<SimulatedView, SimulationError> {
    let (ts, deltas) = stratified_parameters(sampling.near, sampling.far, sampling.n_samples, false, 0)?;
    let view = grid.view();
    let w = camera.width as usize;
    let h = camera.height as usize;
    let rows: Vec<(Vec<f32>, Vec<[f64; 6]>, usize)> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut colors = vec![0.0f32; 3 * w];
            let mut exits = vec![[f64::NAN; 6]; w];
            let mut flagged = 0;
            for col in 0..w {
                let pixel = CameraModel::pixel_center(col as u32, row as u32);
                let Some(local) = ground_truth_exit(camera, cover, pixel) else {
                    flagged += 1;
                    continue;
                };
                let world = Ray {
                    origin: camera.pose.to_world_point(local.origin),
                    direction: camera.pose.to_world_dir(local.direction),
                };
                let jittered;
                let (t, d) = if sampling.jitter {
                    jittered = stratified_parameters(
                        sampling.near,
                        sampling.far,
                        sampling.n_samples,
                        true,
                        pixel_seed(seed, view_index, row * w + col),
                    )
                    .expect("validated range");
                    (&jittered.0[..], &jittered.1[..])
                } else {
                    (&ts[..], &deltas[..])
                };
                let r = render_ray(&view, &world, t, d, sampling.min_transmittance);
                for c in 0..3 {
                    colors[3 * col + c] = r.rgb[c] as f32;
                }
                let o = world.origin.to_array();
                let dd = world.direction.to_array();
                exits[col] = [o[0], o[1], o[2], dd[0], dd[1], dd[2]];
            }
            (colors, exits, flagged)
        })
        .collect();
    let mut image = Image::new(camera.width, camera.height);
    let mut exit_rays = Vec::with_capacity(w * h);
    let mut flagged = 0;
    for (row, (colors, exits, f)) in rows.into_iter().enumerate() {
        image.data[3 * w * row..3 * w * (row + 1)].copy_from_slice(&colors);
        exit_rays.extend(exits);
        flagged += f;
    }
    Ok(SimulatedView {
        image,
        exit_rays,
        flagged,
    })
}

/// Every `every`-th view, starting at 0.
pub fn holdout_indices(n_views: usize, every: usize) -> Vec<usize> {
    if every == 0 {
        return Vec::new();
    }
    (0..n_views).step_by(every).collect()
}

/// Renders all cameras into a dataset.
pub fn simulate_capture(
    grid: &RadianceGrid,
    cover: Option<&CoverSurfacePair>,
    cameras: &[CameraModel],
    sampling: &SamplingConfig,
    seed: u64,
    holdout_every: usize,
) -> Result<CaptureDataset, SimulationError> {
    if let Some(c) = cover {
        c.validate()?;
    }
    for cam in cameras {
        cam.validate()?;
    }
    let mut images = Vec::with_capacity(cameras.len());
    let mut exit_rays = Vec::with_capacity(cameras.len());
    let mut flagged = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let v = simulate_view(grid, cover, cam, i, sampling, seed)?;
        images.push(v.image);
        exit_rays.push(v.exit_rays);
        flagged.push(v.flagged);
    }
    Ok(CaptureDataset {
        images,
        cameras: cameras.to_vec(),
        cover: cover.cloned(),
        holdout: holdout_indices(cameras.len(), holdout_every),
        exit_rays: Some(exit_rays),
        flagged,
        manifest: DatasetManifest::new(seed, ""),
    })
}

/// Orbit rig settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub n_views: usize,
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub orbit_radius: f64,
    pub elevation_deg: f64,
    pub target: Vec3,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            n_views: 24,
            width: 128,
            height: 128,
            fov_deg: 50.0,
            orbit_radius: 1.6,
            elevation_deg: 20.0,
            target: Vec3::new(0.0, 0.0, -0.2),
        }
    }
}

impl RigConfig {
    pub fn cameras(&self) -> Result<Vec<CameraModel>, SimulationError> {
        let focal = self.width as f64 / 2.0 / (self.fov_deg.to_radians() / 2.0).tan();
        orbit_trajectory(self.target, self.orbit_radius, self.n_views, self.elevation_deg.to_radians())?
            .into_iter()
            .map(|pose| Ok(CameraModel::pinhole(focal, self.width, self.height, pose)?))
            .collect()
    }
}
