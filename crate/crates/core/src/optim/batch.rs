use rayon::prelude::*;

use super::model::{trace_exit, ExitTrace, RayModel, TraceGrad};
use super::LossReport;
use crate::camera::{CameraModel, CAMERA_PARAMS};
use crate::field::fit_plane;
use crate::geometry::Ray;
use crate::radiance::{render_ray, GridView, Image, RadianceGrid};
use crate::vec3::Vec3;

/// Patches evaluated sequentially by one parallel task.
const CHUNK_PATCHES: usize = 8;

/// Captured views with their cameras and split.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub images: &'a [Image],
    pub cameras: &'a [CameraModel],
    pub train_views: &'a [usize],
    pub holdout_views: &'a [usize],
}

/// Everything the optimizer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub grid: RadianceGrid,
    pub model: RayModel,
    /// Offsets shared by every camera, in [`CameraModel::offsets`] order.
    pub camera_offsets: [f64; CAMERA_PARAMS],
}

/// 3x3 pixel neighborhood with top-left pixel `(col, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub view: usize,
    pub col: u32,
    pub row: u32,
}

impl Patch {
    pub fn pixels(&self) -> [[f64; 2]; 9] {
        std::array::from_fn(|k| CameraModel::pixel_center(self.col + (k % 3) as u32, self.row + (k / 3) as u32))
    }
}

/// What a batch evaluation computes.
#[derive(Debug, Clone, Copy)]
pub struct BatchOptions<'a> {
    pub ts: &'a [f64],
    pub deltas: &'a [f64],
    pub min_transmittance: f64,
    pub lambda_normals: f64,
    /// Weights of the differentiated objective
    /// `photometric_weight * photometric + normal_weight * normal_consistency`.
    pub photometric_weight: f64,
    pub normal_weight: f64,
    pub grad_grid: bool,
    pub grad_model: bool,
    pub grad_camera: bool,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub report: LossReport,
    pub rays: usize,
    /// Empty unless requested.
    pub grid_grad: Vec<f64>,
    pub model_grad: Vec<f64>,
    pub camera_grad: [f64; CAMERA_PARAMS],
    /// Changes when any ray leaves its smooth regime (see [`crate::radiance::RayRender::regime`]).
    pub regime: u64,
}

impl BatchResult {
    pub fn objective(&self, opts: &BatchOptions<'_>) -> f64 {
        opts.photometric_weight * self.report.photometric + opts.normal_weight * self.report.normal_consistency
    }
}

struct Accum {
    photometric: f64,
    normal: f64,
    flagged: usize,
    rays: usize,
    grid_pairs: Vec<(usize, f64)>,
    model_grad: Vec<f64>,
    camera_grad: [f64; CAMERA_PARAMS],
    regime: u64,
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x100_0000_01b3).rotate_left(7)
}

fn eval_patch(
    state: &TrainState,
    data: &TrainingData<'_>,
    view: &GridView<'_>,
    patch: &Patch,
    opts: &BatchOptions<'_>,
    acc: &mut Accum,
) {
    let cam = &data.cameras[patch.view];
    let img = &data.images[patch.view];
    let trace_grad = opts.grad_model || opts.grad_camera;
    let pixels = patch.pixels();
    let traces: Vec<ExitTrace> = pixels
        .iter()
        .map(|p| trace_exit(&state.model, cam, &state.camera_offsets, *p, trace_grad))
        .collect();
    let mut grads = [TraceGrad::default(); 9];
    let mut renders = Vec::with_capacity(9);
    let any_tir = traces.iter().any(|t| t.tir);
    for (k, t) in traces.iter().enumerate() {
        acc.rays += 1;
        if t.tir || t.repairs != 0 {
            acc.flagged += 1;
        }
        acc.regime = mix(acc.regime, (t.tir as u64) << 8 | t.repairs as u64);
        let reference = img.get(patch.col + (k % 3) as u32, patch.row + (k / 3) as u32);
        if t.tir {
            acc.photometric += reference.iter().map(|r| r * r).sum::<f64>();
            renders.push(None);
            continue;
        }
        let world = Ray {
            origin: cam.pose.to_world_point(t.exit.origin),
            direction: cam.pose.to_world_dir(t.exit.direction),
        };
        let r = render_ray(view, &world, opts.ts, opts.deltas, opts.min_transmittance);
        acc.regime = mix(acc.regime, r.regime);
        let resid: [f64; 3] = std::array::from_fn(|c| r.rgb[c] - reference[c]);
        acc.photometric += resid.iter().map(|x| x * x).sum::<f64>();
        renders.push(Some((r, resid)));
    }

    if let (RayModel::Refractive(_), false) = (&state.model, any_tir) {
        let surfaces: Vec<_> = traces.iter().map(|t| t.surfaces.expect("refractive trace")).collect();
        for second in [false, true] {
            let points: Vec<Vec3> = surfaces.iter().map(|s| if second { s.x2 } else { s.x1 }).collect();
            let Ok(fit) = fit_plane(&points, Vec3::ZERO) else {
                acc.regime = mix(acc.regime, 0xdead);
                continue;
            };
            acc.regime = mix(acc.regime, (fit.sign > 0.0) as u64);
            let predicted = if second { surfaces[4].n2 } else { surfaces[4].n1 };
            let diff = fit.normal - predicted;
            acc.normal += diff.dot(diff);
            if trace_grad && opts.normal_weight != 0.0 {
                let g = diff * (2.0 * opts.normal_weight);
                let gp = fit.backward(&points, g);
                for (k, gk) in gp.iter().enumerate() {
                    if second {
                        grads[k].x2 += *gk;
                    } else {
                        grads[k].x1 += *gk;
                    }
                }
                if second {
                    grads[4].n2 += -g;
                } else {
                    grads[4].n1 += -g;
                }
            }
        }
    }

    for (k, rendered) in renders.iter().enumerate() {
        if let Some((r, resid)) = rendered {
            let g_rgb = resid.map(|x| 2.0 * opts.photometric_weight * x);
            let before = acc.grid_pairs.len();
            let rg = r.backward(view, g_rgb, &mut acc.grid_pairs, trace_grad);
            if !opts.grad_grid {
                acc.grid_pairs.truncate(before);
            }
            if trace_grad {
                grads[k].exit_origin += cam.pose.to_camera_dir(rg.origin);
                grads[k].exit_dir += cam.pose.to_camera_dir(rg.direction);
            }
        }
    }
    if trace_grad {
        for (t, g) in traces.iter().zip(&grads) {
            let mg = if opts.grad_model {
                Some(acc.model_grad.as_mut_slice())
            } else {
                None
            };
            let cg = t.backward(&state.model, g, mg);
            if opts.grad_camera {
                for (a, b) in acc.camera_grad.iter_mut().zip(cg) {
                    *a += b;
                }
            }
        }
    }
}

/// Losses and gradients over a batch of patches.
///
/// Patches are split into fixed chunks evaluated in parallel; partial sums
/// are reduced in chunk order so the result does not depend on scheduling.
pub fn evaluate_batch(
    state: &TrainState,
    data: &TrainingData<'_>,
    patches: &[Patch],
    opts: &BatchOptions<'_>,
) -> BatchResult {
    let view = state.grid.view();
    let n_model = if opts.grad_model { state.model.params().len() } else { 0 };
    let partials: Vec<Accum> = patches
        .par_chunks(CHUNK_PATCHES)
        .map(|chunk| {
            let mut acc = Accum {
                photometric: 0.0,
                normal: 0.0,
                flagged: 0,
                rays: 0,
                grid_pairs: Vec::new(),
                model_grad: vec![0.0; n_model],
                camera_grad: [0.0; CAMERA_PARAMS],
                regime: 0,
            };
            for p in chunk {
                eval_patch(state, data, &view, p, opts, &mut acc);
            }
            acc
        })
        .collect();

    let mut photometric = 0.0;
    let mut normal = 0.0;
    let mut flagged = 0;
    let mut rays = 0;
    let mut regime = 0u64;
    let mut grid_grad = if opts.grad_grid {
        vec![0.0; state.grid.params().len()]
    } else {
        Vec::new()
    };
    let mut model_grad = vec![0.0; n_model];
    let mut camera_grad = [0.0; CAMERA_PARAMS];
    for a in &partials {
        photometric += a.photometric;
        normal += a.normal;
        flagged += a.flagged;
        rays += a.rays;
        regime = mix(regime, a.regime);
        for &(i, g) in &a.grid_pairs {
            grid_grad[i] += g;
        }
        for (m, g) in model_grad.iter_mut().zip(&a.model_grad) {
            *m += g;
        }
        for (c, g) in camera_grad.iter_mut().zip(a.camera_grad) {
            *c += g;
        }
    }
    BatchResult {
        report: LossReport::new(
            photometric,
            normal,
            opts.lambda_normals,
            if rays == 0 { 0.0 } else { flagged as f64 / rays as f64 },
        ),
        rays,
        grid_grad,
        model_grad,
        camera_grad,
        regime,
    }
}

/// Renders a full view with the current state; returns the image and the
/// number of background-flagged pixels.
pub fn render_view(
    state: &TrainState,
    camera: &CameraModel,
    ts: &[f64],
    deltas: &[f64],
    min_transmittance: f64,
) -> (Image, usize) {
    let view = state.grid.view();
    let w = camera.width as usize;
    let mut img = Image::new(camera.width, camera.height);
    let flagged: usize = img
        .data
        .par_chunks_mut(3 * w)
        .enumerate()
        .map(|(row, line)| {
            let mut flagged = 0;
            for col in 0..w {
                let pixel = CameraModel::pixel_center(col as u32, row as u32);
                let t = trace_exit(&state.model, camera, &state.camera_offsets, pixel, false);
                if t.tir {
                    flagged += 1;
                    continue;
                }
                let world = Ray {
                    origin: camera.pose.to_world_point(t.exit.origin),
                    direction: camera.pose.to_world_dir(t.exit.direction),
                };
                let r = render_ray(&view, &world, ts, deltas, min_transmittance);
                for c in 0..3 {
                    line[3 * col + c] = r.rgb[c] as f32;
                }
            }
            flagged
        })
        .sum();
    (img, flagged)
}
