//! Voxel radiance grid, stratified sampling along exit rays, volumetric
//! rendering and alpha compositing.

mod grid;
mod image;

pub use grid::{
    query_grid, read_grid_checkpoint, softplus, write_grid_checkpoint, Aabb, GridCheckpointHeader, GridSample,
    GridView, RadianceGrid, Stencil, GRID_FORMAT_VERSION, VACUUM_RAW,
};
pub use image::Image;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{lift_pixel_to_ray, CameraError, CameraModel};
use crate::field::{refract_via_field, RefractiveFieldModel};
use crate::geometry::{GeometryError, Ray};
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum RadianceError {
    #[error("invalid sampling range: near {near} must be below far {far}")]
    InvalidRange { near: f64, far: f64 },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("length mismatch: {0} alphas vs {1} colors")]
    LengthMismatch(usize, usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Distances along the exit ray, measured from its origin (m).
    pub near: f64,
    pub far: f64,
    pub n_samples: usize,
    pub jitter: bool,
    /// Compositing stops once transmittance falls below this value; 0 keeps
    /// every sample.
    pub min_transmittance: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            near: 0.6,
            far: 2.6,
            n_samples: 128,
            jitter: false,
            min_transmittance: 0.0,
        }
    }
}

/// Ordered samples along a ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub ts: Vec<f64>,
    pub positions: Vec<Vec3>,
    pub deltas: Vec<f64>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }
}

/// Ray parameters and interval lengths for `n` strata over `[near, far]`.
pub fn stratified_parameters(
    near: f64,
    far: f64,
    n: usize,
    jitter: bool,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), RadianceError> {
    if !(near >= 0.0 && near < far) {
        return Err(RadianceError::InvalidRange { near, far });
    }
    if n == 0 {
        return Err(RadianceError::NoSamples);
    }
    let step = (far - near) / n as f64;
    let ts: Vec<f64> = if jitter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| near + (i as f64 + rng.gen::<f64>()) * step).collect()
    } else {
        (0..n).map(|i| near + (i as f64 + 0.5) * step).collect()
    };
    let deltas = (0..n)
        .map(|i| if i + 1 < n { ts[i + 1] - ts[i] } else { step })
        .collect();
    Ok((ts, deltas))
}

pub fn sample_along_ray(
    exit_ray: &Ray,
    near: f64,
    far: f64,
    n_samples: usize,
    jitter: bool,
    seed: u64,
) -> Result<RaySamples, RadianceError> {
    let (ts, deltas) = stratified_parameters(near, far, n_samples, jitter, seed)?;
    let positions = ts.iter().map(|&t| exit_ray.at(t)).collect();
    Ok(RaySamples { ts, positions, deltas })
}

/// Volumetric rendering of explicit per-sample densities, intervals and colors.
pub fn composite_volumetric(sigmas: &[f64], deltas: &[f64], colors: &[[f64; 3]]) -> [f64; 3] {
    let mut out = [0.0; 3];
    let mut optical_depth = 0.0f64;
    for ((s, d), c) in sigmas.iter().zip(deltas).zip(colors) {
        let t = (-optical_depth).exp();
        let w = t * -(-s * d).exp_m1();
        for ch in 0..3 {
            out[ch] += w * c[ch];
        }
        optical_depth += s * d;
    }
    out
}

/// Front-to-back compositing of ordered opacities.
pub fn alpha_composite(alphas: &[f64], colors: &[[f64; 3]]) -> Result<[f64; 3], RadianceError> {
    if alphas.len() != colors.len() {
        return Err(RadianceError::LengthMismatch(alphas.len(), colors.len()));
    }
    let mut out = [0.0; 3];
    let mut t = 1.0;
    for (a, c) in alphas.iter().zip(colors) {
        for ch in 0..3 {
            out[ch] += t * a * c[ch];
        }
        t *= 1.0 - a;
    }
    Ok(out)
}

pub fn render_volumetric(samples: &RaySamples, grid: &RadianceGrid) -> [f64; 3] {
    let view = grid.view();
    let (sigmas, colors): (Vec<f64>, Vec<[f64; 3]>) = samples
        .positions
        .iter()
        .map(|p| {
            let s = view.query(*p);
            (s.sigma, s.rgb)
        })
        .unzip();
    composite_volumetric(&sigmas, &samples.deltas, &colors)
}

#[derive(Debug, Clone, Copy)]
struct SampleRecord {
    t: f64,
    delta: f64,
    sigma: f64,
    /// Interpolated color before clamping.
    raw_rgb: [f64; 3],
}

impl SampleRecord {
    fn rgb(&self) -> [f64; 3] {
        self.raw_rgb.map(|c| c.clamp(0.0, 1.0))
    }
}

/// Forward record of one rendered ray, reused by [`RayRender::backward`].
#[derive(Debug, Clone)]
pub struct RayRender {
    pub rgb: [f64; 3],
    /// Identifies the smooth piece of the render as a function of the ray:
    /// changes whenever a sample moves to another interpolation cell,
    /// crosses the grid boundary or a color clamp switches.
    pub regime: u64,
    ray: Ray,
    records: Vec<SampleRecord>,
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x100_0000_01b3)
}

/// Renders `ray` with precomputed sample parameters.
pub fn render_ray(view: &GridView<'_>, ray: &Ray, ts: &[f64], deltas: &[f64], min_transmittance: f64) -> RayRender {
    let mut rgb = [0.0; 3];
    let mut optical_depth = 0.0f64;
    let mut records = Vec::with_capacity(ts.len());
    let mut regime = 0xcbf2_9ce4_8422_2325u64;
    for (&t, &delta) in ts.iter().zip(deltas) {
        let (sigma, raw_rgb) = match view.stencil(ray.at(t)) {
            None => {
                regime = mix(regime, u64::MAX);
                (0.0, [0.0; 3])
            }
            Some(s) => {
                let (sigma, c) = view.evaluate(&s);
                let clamp_bits = c
                    .iter()
                    .enumerate()
                    .fold(0u64, |b, (i, v)| b | (((*v < 0.0) as u64) << (2 * i)) | (((*v > 1.0) as u64) << (2 * i + 1)));
                let cell = (s.cell[0] as u64) << 42 | (s.cell[1] as u64) << 21 | s.cell[2] as u64;
                regime = mix(mix(regime, cell), clamp_bits);
                (sigma, c)
            }
        };
        let rec = SampleRecord {
            t,
            delta,
            sigma,
            raw_rgb,
        };
        let trans = (-optical_depth).exp();
        let w = trans * -(-sigma * delta).exp_m1();
        let c = rec.rgb();
        for ch in 0..3 {
            rgb[ch] += w * c[ch];
        }
        optical_depth += sigma * delta;
        records.push(rec);
        if (-optical_depth).exp() < min_transmittance {
            break;
        }
    }
    RayRender {
        rgb,
        regime: mix(regime, records.len() as u64),
        ray: *ray,
        records,
    }
}

/// Gradients produced by [`RayRender::backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayGradient {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl RayRender {
    /// Back-propagates `grad_rgb`. Grid parameter gradients are appended to
    /// `grid_grads` as `(parameter index, value)` pairs; when `want_ray` is
    /// set the gradient with respect to the ray origin and direction is
    /// returned as well.
    pub fn backward(
        &self,
        view: &GridView<'_>,
        grad_rgb: [f64; 3],
        grid_grads: &mut Vec<(usize, f64)>,
        want_ray: bool,
    ) -> RayGradient {
        let g = grad_rgb;
        let total = g[0] * self.rgb[0] + g[1] * self.rgb[1] + g[2] * self.rgb[2];
        let grid = view.grid;
        let v = grid.voxel_count();
        let params = grid.params();
        let mut prefix = 0.0;
        let mut optical_depth = 0.0f64;
        let mut out = RayGradient {
            origin: Vec3::ZERO,
            direction: Vec3::ZERO,
        };
        for rec in &self.records {
            let trans = (-optical_depth).exp();
            let alpha = -(-rec.sigma * rec.delta).exp_m1();
            let w = trans * alpha;
            let c = rec.rgb();
            let gc_dot = g[0] * c[0] + g[1] * c[1] + g[2] * c[2];
            prefix += w * gc_dot;
            let next_trans = trans * (1.0 - alpha);
            optical_depth += rec.sigma * rec.delta;
            let g_sigma = rec.delta * (next_trans * gc_dot - (total - prefix));
            let g_color: [f64; 3] =
                std::array::from_fn(|ch| if (0.0..=1.0).contains(&rec.raw_rgb[ch]) { w * g[ch] } else { 0.0 });
            let p = self.ray.at(rec.t);
            let Some(s) = view.stencil(p) else { continue };
            let mut g_pos = Vec3::ZERO;
            for k in 0..8 {
                let vox = s.voxels[k];
                let wk = s.weights[k];
                if wk != 0.0 {
                    if g_sigma != 0.0 {
                        grid_grads.push((vox, g_sigma * wk * grid.density_derivative(vox)));
                    }
                    for (ch, gc) in g_color.iter().enumerate() {
                        if *gc != 0.0 {
                            grid_grads.push((v + 3 * vox + ch, gc * wk));
                        }
                    }
                }
                if want_ray {
                    let dv = g_sigma * view.sigma(vox)
                        + (0..3).map(|ch| g_color[ch] * params[v + 3 * vox + ch]).sum::<f64>();
                    g_pos += s.weight_grads[k] * dv;
                }
            }
            if want_ray {
                out.origin += g_pos;
                out.direction += g_pos * rec.t;
            }
        }
        out
    }
}

/// Outcome of rendering one pixel through a cover model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRender {
    pub rgb: [f64; 3],
    /// Set when the ray could not be traced and rendered as background.
    pub flagged: bool,
}

/// Full forward path for one pixel: lift in the camera frame, bend through
/// the field (which is rigid with the camera), sample and render.
pub fn render_pixel(
    pixel: [f64; 2],
    camera: &CameraModel,
    field: &RefractiveFieldModel,
    grid: &RadianceGrid,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<PixelRender, RadianceError> {
    let world = lift_pixel_to_ray(pixel, camera)?;
    let local = Ray {
        origin: Vec3::ZERO,
        direction: camera.pose.to_camera_dir(world.direction),
    };
    let exit = match refract_via_field(&local, field, field.config.index_inside, field.config.index_outside) {
        Ok(e) => e.ray,
        Err(GeometryError::TotalInternalReflection) => {
            return Ok(PixelRender {
                rgb: [0.0; 3],
                flagged: true,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let exit_world = Ray {
        origin: camera.pose.to_world_point(exit.origin),
        direction: camera.pose.to_world_dir(exit.direction),
    };
    let samples = sample_along_ray(&exit_world, sampling.near, sampling.far, sampling.n_samples, sampling.jitter, seed)?;
    let view = grid.view();
    let r = render_ray(&view, &exit_world, &samples.ts, &samples.deltas, sampling.min_transmittance);
    Ok(PixelRender {
        rgb: r.rgb,
        flagged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    #[test]
    fn midpoint_strata() {
        let r = Ray::new(Vec3::ZERO, Vec3::Z);
        let s = sample_along_ray(&r, 0.0, 4.0, 4, false, 0).unwrap();
        assert_eq!(s.ts, vec![0.5, 1.5, 2.5, 3.5]);
        assert_eq!(s.deltas, vec![1.0; 4]);
        let one = sample_along_ray(&r, 0.0, 4.0, 1, false, 0).unwrap();
        assert_eq!(one.ts, vec![2.0]);
        assert!(matches!(
            sample_along_ray(&r, 2.0, 2.0, 4, false, 0),
            Err(RadianceError::InvalidRange { .. })
        ));
    }

    #[test]
    fn jittered_samples_stay_in_strata_and_repeat() {
        let r = Ray::new(Vec3::ZERO, Vec3::Z);
        let a = sample_along_ray(&r, 1.0, 3.0, 16, true, 9).unwrap();
        let b = sample_along_ray(&r, 1.0, 3.0, 16, true, 9).unwrap();
        assert_eq!(a, b);
        for (i, t) in a.ts.iter().enumerate() {
            let lo = 1.0 + i as f64 * 0.125;
            assert!(*t >= lo && *t <= lo + 0.125);
        }
        assert!(a.deltas.iter().all(|d| *d > 0.0));
    }

    #[test]
    fn opaque_and_empty_cases() {
        let c = composite_volumetric(&[50.0], &[1.0], &[[1.0, 0.5, 0.25]]);
        for (a, b) in c.iter().zip([1.0, 0.5, 0.25]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(composite_volumetric(&[0.0, 0.0], &[1.0, 1.0], &[[1.0; 3], [1.0; 3]]), [0.0; 3]);
    }

    #[test]
    fn two_sample_hand_evaluation() {
        let c = composite_volumetric(&[2f64.ln(), 50.0], &[1.0, 1.0], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!((c[0] - 0.5).abs() < 1e-6 && (c[1] - 0.5).abs() < 1e-6 && c[2].abs() < 1e-12);
    }

    #[test]
    fn alpha_composite_examples() {
        assert_eq!(alpha_composite(&[1.0], &[[0.2, 0.4, 0.6]]).unwrap(), [0.2, 0.4, 0.6]);
        assert_eq!(
            alpha_composite(&[0.5, 1.0], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap(),
            [0.5, 0.5, 0.0]
        );
        assert_eq!(alpha_composite(&[0.0, 0.0], &[[1.0; 3], [0.5; 3]]).unwrap(), [0.0; 3]);
        assert!(matches!(
            alpha_composite(&[0.5], &[]),
            Err(RadianceError::LengthMismatch(1, 0))
        ));
    }

    proptest! {
        #[test]
        fn volumetric_equals_alpha_compositing(
            n in 1usize..=32,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sigmas: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 20.0).collect();
            let deltas: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 0.2 + 1e-3).collect();
            let colors: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let alphas: Vec<f64> = sigmas.iter().zip(&deltas).map(|(s, d)| 1.0 - (-s * d).exp()).collect();
            let a = composite_volumetric(&sigmas, &deltas, &colors);
            let b = alpha_composite(&alphas, &colors).unwrap();
            for ch in 0..3 {
                prop_assert!((a[ch] - b[ch]).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a[ch]));
            }
        }
    }
}
