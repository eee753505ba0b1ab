//! Finite-difference checks of every hand-written or forward-mode gradient
//! path, on randomized inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::{CameraModel, CAMERA_PARAMS};
use crate::field::{FieldConfig, RayOffsetField, RefractiveFieldModel};
use crate::geometry::{refract, Ray};
use crate::optim::{
    evaluate_batch, grad_check_piecewise, trace_exit, BatchOptions, GradCheckReport, Patch, RayModel, TraceGrad,
    TrainState, TrainingData,
};
use crate::radiance::{render_ray, stratified_parameters, Aabb, Image, RadianceGrid};
use crate::real::{Dual, Real};
use crate::simulator::RigConfig;
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradSuiteConfig {
    pub seed: u64,
    /// Minimum number of probes per check.
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            probes: 100,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradSuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn empty_report() -> GradCheckReport {
    GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: None,
        checked: 0,
        skipped: 0,
        passed: true,
    }
}

fn merge(acc: &mut GradCheckReport, r: GradCheckReport) {
    if r.checked > 0 && (acc.worst_parameter.is_none() || r.max_relative_error > acc.max_relative_error) {
        acc.max_relative_error = r.max_relative_error;
        acc.worst_parameter = r.worst_parameter;
    }
    acc.checked += r.checked;
    acc.skipped += r.skipped;
    acc.passed &= r.passed;
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

fn weighted<T: Real>(v: Vec3<T>, w: Vec3) -> T {
    v.x * w.x + v.y * w.y + v.z * w.z
}

/// `w . refract(normalize(d), normalize(n), eta)` with respect to the raw
/// seven inputs.
fn check_refract(cfg: &GradSuiteConfig, rng: &mut ChaCha8Rng) -> GradCheckReport {
    let mut acc = empty_report();
    while acc.checked + acc.skipped < cfg.probes {
        let d = random_unit(rng);
        let mut n = random_unit(rng);
        if n.dot(d) > 0.0 {
            n = -n;
        }
        let eta = rng.gen_range(0.5..2.0);
        if refract(d, n, eta).is_err() || n.dot(d) > -0.05 {
            continue;
        }
        let w = random_unit(rng);
        let p = [d.x, d.y, d.z, n.x, n.y, n.z, eta];
        let eval = |q: &[f64]| -> (f64, u64) {
            let d = Vec3::new(q[0], q[1], q[2]).normalized();
            let n = Vec3::new(q[3], q[4], q[5]).normalized();
            match refract(d, n, q[6]) {
                Ok(t) => (weighted(t, w), 0),
                Err(_) => (0.0, 1),
            }
        };
        let v: [Dual<7>; 7] = std::array::from_fn(|i| Dual::variable(p[i], i));
        let dd = Vec3::new(v[0], v[1], v[2]).normalized();
        let nn = Vec3::new(v[3], v[4], v[5]).normalized();
        let t = refract(dd, nn, v[6]).expect("checked above");
        let analytic = weighted(t, w).eps;
        merge(
            &mut acc,
            grad_check_piecewise(eval, &p, &analytic, &[0, 1, 2, 3, 4, 5, 6], cfg.step, cfg.tolerance),
        );
    }
    acc
}

fn random_offsets(rng: &mut ChaCha8Rng) -> [f64; CAMERA_PARAMS] {
    std::array::from_fn(|_| rng.gen_range(-0.02..0.02))
}

fn test_camera(width: u32) -> CameraModel {
    RigConfig {
        n_views: 1,
        width,
        height: width,
        ..RigConfig::default()
    }
    .cameras()
    .expect("valid rig")
    .remove(0)
}

fn random_model(geometric: bool, rng: &mut ChaCha8Rng) -> RayModel {
    let config = FieldConfig {
        seed: rng.gen(),
        ..FieldConfig::default()
    };
    let amp = 0.01;
    if geometric {
        let mut m = RefractiveFieldModel::new(config);
        m.net.mlp.randomize_output_layer(amp, rng.gen());
        RayModel::Refractive(m)
    } else {
        let mut m = RayOffsetField::new(config);
        m.net.mlp.randomize_output_layer(amp, rng.gen());
        RayModel::RayOffset(m)
    }
}

fn pick(rng: &mut ChaCha8Rng, pool: &[usize], n: usize) -> Vec<usize> {
    let mut pool = pool.to_vec();
    let mut out = Vec::new();
    while out.len() < n && !pool.is_empty() {
        out.push(pool.swap_remove(rng.gen_range(0..pool.len())));
    }
    out
}

/// Weighted sum of every traced quantity with respect to model parameters
/// and camera offsets.
fn check_trace(cfg: &GradSuiteConfig, rng: &mut ChaCha8Rng, geometric: bool) -> GradCheckReport {
    let camera = test_camera(64);
    let mut acc = empty_report();
    while acc.checked + acc.skipped < cfg.probes {
        let model = random_model(geometric, rng);
        let offsets = random_offsets(rng);
        let pixel = [rng.gen_range(1.0..63.0), rng.gen_range(1.0..63.0)];
        let tg = TraceGrad {
            exit_origin: random_unit(rng),
            exit_dir: random_unit(rng),
            x1: random_unit(rng),
            x2: random_unit(rng),
            n1: random_unit(rng),
            n2: random_unit(rng),
        };
        let n_model = model.params().len();
        let mut params = model.params().to_vec();
        params.extend_from_slice(&offsets);
        let eval = |q: &[f64]| -> (f64, u64) {
            let mut m = model.clone();
            m.params_mut().copy_from_slice(&q[..n_model]);
            let off: [f64; CAMERA_PARAMS] = std::array::from_fn(|i| q[n_model + i]);
            let t = trace_exit(&m, &camera, &off, pixel, false);
            let mut f = weighted(t.exit.direction, tg.exit_dir);
            if let Some(s) = t.surfaces {
                f += weighted(t.exit.origin, tg.exit_origin)
                    + weighted(s.x1, tg.x1)
                    + weighted(s.x2, tg.x2)
                    + weighted(s.n1, tg.n1)
                    + weighted(s.n2, tg.n2);
            }
            (f, (t.tir as u64) << 8 | t.repairs as u64)
        };
        let t = trace_exit(&model, &camera, &offsets, pixel, true);
        if t.tir {
            continue;
        }
        let mut analytic = vec![0.0; n_model];
        let g_cam = t.backward(&model, &tg, Some(&mut analytic));
        analytic.extend_from_slice(&g_cam);
        let mut probes = pick(rng, &(0..n_model).collect::<Vec<_>>(), 16);
        probes.extend(n_model..n_model + CAMERA_PARAMS);
        merge(
            &mut acc,
            grad_check_piecewise(eval, &params, &analytic, &probes, cfg.step, cfg.tolerance),
        );
    }
    acc
}

fn random_grid(rng: &mut ChaCha8Rng, resolution: usize) -> RadianceGrid {
    let mut grid = RadianceGrid::vacuum([resolution; 3], Aabb::cube(0.5), 5.0).expect("valid grid");
    for v in 0..grid.voxel_count() {
        let rgb = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
        // Moderate densities keep every voxel visible, so gradients stay
        // well above the round-off floor of central differences.
        grid.set_voxel(v, rng.gen_range(0.5..4.0), rgb);
    }
    grid
}

/// `w . rgb` of one rendered ray with respect to grid parameters and the
/// ray origin and direction.
fn check_render_ray(cfg: &GradSuiteConfig, rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (ts, deltas) = stratified_parameters(0.6, 2.6, 48, false, 0).expect("valid range");
    let mut acc = empty_report();
    while acc.checked + acc.skipped < cfg.probes {
        let grid = random_grid(rng, 6);
        let origin = random_unit(rng) * 1.6;
        let target = Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
        let dir = (target - origin).normalized();
        let w = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n_grid = grid.params().len();
        let mut params = grid.params().to_vec();
        params.extend_from_slice(&origin.to_array());
        params.extend_from_slice(&dir.to_array());
        let eval = |q: &[f64]| -> (f64, u64) {
            let mut g = grid.clone();
            g.params_mut().copy_from_slice(&q[..n_grid]);
            let ray = Ray {
                origin: Vec3::new(q[n_grid], q[n_grid + 1], q[n_grid + 2]),
                direction: Vec3::new(q[n_grid + 3], q[n_grid + 4], q[n_grid + 5]),
            };
            let r = render_ray(&g.view(), &ray, &ts, &deltas, 0.0);
            (w[0] * r.rgb[0] + w[1] * r.rgb[1] + w[2] * r.rgb[2], r.regime)
        };
        let view = grid.view();
        let r = render_ray(&view, &Ray { origin, direction: dir }, &ts, &deltas, 0.0);
        let mut pairs = Vec::new();
        let rg = r.backward(&view, w, &mut pairs, true);
        let mut analytic = vec![0.0; n_grid];
        for (i, g) in &pairs {
            analytic[*i] += g;
        }
        analytic.extend_from_slice(&rg.origin.to_array());
        analytic.extend_from_slice(&rg.direction.to_array());
        let mut touched: Vec<usize> = pairs.iter().map(|(i, _)| *i).collect();
        touched.sort_unstable();
        touched.dedup();
        let mut probes = pick(rng, &touched, 24);
        probes.extend(n_grid..n_grid + 6);
        merge(
            &mut acc,
            grad_check_piecewise(eval, &params, &analytic, &probes, cfg.step, cfg.tolerance),
        );
    }
    acc
}

struct BatchFixture {
    images: Vec<Image>,
    cameras: Vec<CameraModel>,
    train: Vec<usize>,
}

fn batch_fixture(rng: &mut ChaCha8Rng) -> BatchFixture {
    let cameras = RigConfig {
        n_views: 3,
        width: 20,
        height: 20,
        ..RigConfig::default()
    }
    .cameras()
    .expect("valid rig");
    let images = cameras
        .iter()
        .map(|c| {
            let mut img = Image::new(c.width, c.height);
            for v in &mut img.data {
                *v = rng.gen_range(0.0..1.0);
            }
            img
        })
        .collect();
    BatchFixture {
        images,
        cameras,
        train: vec![0, 1, 2],
    }
}

/// Photometric (`photometric = true`) or normal-consistency objective of a
/// batch with respect to the grid, the model and the camera offsets.
fn check_loss(cfg: &GradSuiteConfig, rng: &mut ChaCha8Rng, photometric: bool) -> GradCheckReport {
    let fx = batch_fixture(rng);
    let data = TrainingData {
        images: &fx.images,
        cameras: &fx.cameras,
        train_views: &fx.train,
        holdout_views: &[],
    };
    let (ts, deltas) = stratified_parameters(0.6, 2.6, 32, false, 0).expect("valid range");
    let opts = BatchOptions {
        ts: &ts,
        deltas: &deltas,
        min_transmittance: 0.0,
        lambda_normals: 1.0,
        photometric_weight: if photometric { 1.0 } else { 0.0 },
        normal_weight: if photometric { 0.0 } else { 1.0 },
        grad_grid: true,
        grad_model: true,
        grad_camera: true,
    };
    let mut acc = empty_report();
    while acc.checked + acc.skipped < cfg.probes {
        let state = TrainState {
            grid: random_grid(rng, 8),
            model: random_model(true, rng),
            camera_offsets: random_offsets(rng),
        };
        let patches: Vec<Patch> = (0..3)
            .map(|_| Patch {
                view: rng.gen_range(0..3),
                col: rng.gen_range(0..18),
                row: rng.gen_range(0..18),
            })
            .collect();
        let n_grid = state.grid.params().len();
        let n_model = state.model.params().len();
        let mut params = state.grid.params().to_vec();
        params.extend_from_slice(state.model.params());
        params.extend_from_slice(&state.camera_offsets);
        let eval = |q: &[f64]| -> (f64, u64) {
            let mut s = state.clone();
            s.grid.params_mut().copy_from_slice(&q[..n_grid]);
            s.model.params_mut().copy_from_slice(&q[n_grid..n_grid + n_model]);
            s.camera_offsets = std::array::from_fn(|i| q[n_grid + n_model + i]);
            let r = evaluate_batch(&s, &data, &patches, &opts);
            (r.objective(&opts), r.regime)
        };
        let r = evaluate_batch(&state, &data, &patches, &opts);
        let mut analytic = r.grid_grad.clone();
        analytic.extend_from_slice(&r.model_grad);
        analytic.extend_from_slice(&r.camera_grad);
        let mut probes = Vec::new();
        if photometric {
            // Voxels reached by some sample: their gradient entries are written.
            let touched: Vec<usize> = (0..n_grid).filter(|&i| r.grid_grad[i] != 0.0).collect();
            probes.extend(pick(rng, &touched, 12));
        }
        probes.extend(pick(rng, &(n_grid..n_grid + n_model).collect::<Vec<_>>(), 16));
        probes.extend(n_grid + n_model..n_grid + n_model + CAMERA_PARAMS);
        merge(
            &mut acc,
            grad_check_piecewise(eval, &params, &analytic, &probes, cfg.step, cfg.tolerance),
        );
    }
    acc
}

/// Runs every check; each entry covers at least `cfg.probes` probes.
pub fn gradient_suite(cfg: &GradSuiteConfig) -> Vec<GradSuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut push = |name: &str, report| {
        out.push(GradSuiteEntry {
            name: name.to_string(),
            report,
        })
    };
    push("refract", check_refract(cfg, &mut rng));
    push("field_trace", check_trace(cfg, &mut rng, true));
    push("offset_trace", check_trace(cfg, &mut rng, false));
    push("render_ray", check_render_ray(cfg, &mut rng));
    push("photometric_loss", check_loss(cfg, &mut rng, true));
    push("normal_consistency_loss", check_loss(cfg, &mut rng, false));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let cfg = GradSuiteConfig {
            seed: 11,
            probes: 20,
            ..GradSuiteConfig::default()
        };
        for e in gradient_suite(&cfg) {
            assert!(e.report.passed && e.report.checked > 0, "{}: {:?}", e.name, e.report);
        }
    }
}
