//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`); the process exits non-zero
//! when any criterion fails. Criteria 5 to 7 train full desk-scale models
//! and take tens of minutes on one core.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use covertrace::geometry::{refract, trace_through_cover, CoverSurfacePair, CoverTraversal, GeometryError, Ray};
use covertrace::harness::{
    ablate, exit_ray_angular_error, gradient_suite, psnr, run_experiment, simulate_from_config, ssim, window_means,
    AblationHead, ExperimentConfig, ExperimentOutcome, GradSuiteConfig, PSNR_CAP_DB,
};
use covertrace::radiance::{alpha_composite, composite_volumetric, Image};
use covertrace::simulator::{read_dataset, write_dataset, CaptureDataset};
use covertrace::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SNELL_TOL: f64 = 1e-9;
const SLAB_TOL: f64 = 1e-9;
const COMPOSITE_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_PROBES: usize = 100;
const ABLATION_GAP_DB: f64 = 2.0;
const ANGULAR_TOL_DEG: f64 = 0.5;
const NORMAL_WINDOW: usize = 100;
const NO_HARM_TOL_DB: f64 = 0.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
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

fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
    (a - b).max_abs() <= tol
}

fn snell_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();

    // Index ratio one and normal incidence leave the direction unchanged.
    for _ in 0..1000 {
        let d = random_unit(&mut rng);
        let mut n = random_unit(&mut rng);
        if n.dot(d) >= 0.0 {
            n = -n;
        }
        if n.dot(d).abs() < 1e-6 {
            continue;
        }
        if !close(refract(d, n, 1.0).unwrap(), d, SNELL_TOL) {
            failures.push("eta = 1");
            break;
        }
        let eta = rng.gen_range(0.3..3.0);
        if !close(refract(-n, n, eta).unwrap(), -n, SNELL_TOL) {
            failures.push("normal incidence");
            break;
        }
    }

    // 45 degrees from air into glass of index 1.5.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let t = refract(Vec3::new(s, 0.0, s), Vec3::new(0.0, 0.0, -1.0), 1.0 / 1.5).unwrap();
    let sin_t = s / 1.5;
    let oracle = Vec3::new(sin_t, 0.0, (1.0 - sin_t * sin_t).sqrt());
    if !close(t, oracle, SNELL_TOL) || !close(t, Vec3::new(0.4714045, 0.0, 0.8819171), 1e-7) {
        failures.push("45 degree case");
    }

    // Glass to air: total internal reflection exactly beyond the critical angle.
    let critical = (1.0f64 / 1.5).asin();
    for k in 0..100 {
        let phi = k as f64 * 0.0628;
        for (theta, expect_tir) in [(critical + 1e-6, true), (critical - 1e-6, false)] {
            let d = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let r = refract(d, Vec3::new(0.0, 0.0, -1.0), 1.5);
            if matches!(r, Err(GeometryError::TotalInternalReflection)) != expect_tir {
                failures.push("critical angle");
            }
        }
    }

    // Reversibility and coplanarity.
    let mut checked = 0;
    while checked < 1000 {
        let d = random_unit(&mut rng);
        let mut n = random_unit(&mut rng);
        if n.dot(d) >= 0.0 {
            n = -n;
        }
        let eta = rng.gen_range(0.4..2.5);
        let Ok(t) = refract(d, n, eta) else { continue };
        checked += 1;
        let back = refract(-t, -n, 1.0 / eta).unwrap();
        if !close(back, -d, SNELL_TOL) {
            failures.push("reversibility");
            break;
        }
        if d.cross(n).dot(t).abs() > SNELL_TOL {
            failures.push("coplanarity");
            break;
        }
    }
    failures.dedup();
    if failures.is_empty() {
        check(true, format!("identity, 45 deg {:?}, TIR at {:.4} rad, 1000 reversible/coplanar", t.to_array(), critical))
    } else {
        check(false, format!("failed: {}", failures.join(", ")))
    }
}

fn slab_invariance() -> Outcome {
    let (front, thickness, index) = (0.02, 0.003, 1.5);
    let slab = CoverSurfacePair::flat_slab(front, thickness, index, 1.0).unwrap();
    let displacement = |theta_i: f64| {
        let theta_t = (theta_i.sin() / index).asin();
        thickness * (theta_i - theta_t).sin() / theta_t.cos()
    };
    let lateral = |ray: &Ray, exit: &Ray| {
        let v = exit.origin - ray.origin;
        (v - ray.direction * v.dot(ray.direction)).norm()
    };
    let reference = {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ray = Ray::new(Vec3::ZERO, Vec3::new(s, 0.0, s));
        let exit = trace_through_cover(&ray, &slab).unwrap().ray();
        lateral(&ray, &exit)
    };
    if (reference - displacement(std::f64::consts::FRAC_PI_4)).abs() > SLAB_TOL || (reference - 0.0009875).abs() > 1e-7 {
        return check(false, format!("reference displacement {reference}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_dir, mut worst_shift) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let theta = rng.gen_range(0.0..1.2f64);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let origin = Vec3::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01), 0.0);
        let ray = Ray::new(origin, Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        match trace_through_cover(&ray, &slab) {
            Ok(CoverTraversal::Refracted { exit, .. }) => {
                worst_dir = worst_dir.max((exit.direction - ray.direction).max_abs());
                worst_shift = worst_shift.max((lateral(&ray, &exit) - displacement(theta)).abs());
            }
            other => return check(false, format!("ray not refracted: {other:?}")),
        }
    }
    check(
        worst_dir <= SLAB_TOL && worst_shift <= SLAB_TOL,
        format!("reference {reference:.7} m, max direction error {worst_dir:.1e}, max displacement error {worst_shift:.1e}"),
    )
}

fn compositing_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=32);
        let sigmas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..50.0)).collect();
        let deltas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.2)).collect();
        let colors: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0))).collect();
        let alphas: Vec<f64> = sigmas.iter().zip(&deltas).map(|(s, d)| 1.0 - (-s * d).exp()).collect();
        let a = composite_volumetric(&sigmas, &deltas, &colors);
        let b = alpha_composite(&alphas, &colors).unwrap();
        for c in 0..3 {
            worst = worst.max((a[c] - b[c]).abs());
        }
    }
    check(worst <= COMPOSITE_TOL, format!("1000 instances, max difference {worst:.1e}"))
}

fn gradient_contract() -> Outcome {
    let cfg = GradSuiteConfig {
        seed: 0,
        probes: GRAD_PROBES,
        step: GRAD_STEP,
        tolerance: GRAD_TOL,
    };
    let entries = gradient_suite(&cfg);
    let pass = entries
        .iter()
        .all(|e| e.report.passed && e.report.checked >= GRAD_PROBES);
    let detail = entries
        .iter()
        .map(|e| format!("{} {:.1e} ({} probes)", e.name, e.report.max_relative_error, e.report.checked))
        .collect::<Vec<_>>()
        .join(", ");
    check(pass, detail)
}

/// Desk-scale configuration shared by the training criteria.
fn desk_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    ExperimentConfig::load(&path).expect("configs/desk.toml")
}

struct Ablation {
    data: CaptureDataset,
    full: ExperimentOutcome,
    psnr: [f64; 3],
    ssim: [f64; 3],
}

fn run_ablation(dir: &Path) -> Ablation {
    let cfg = desk_config();
    let data = simulate_from_config(&cfg).expect("simulation");
    write_dataset(&dir.join("dataset"), &data).expect("dataset write");
    let mut rows = ablate(&cfg, &data, Some(&dir.join("runs"))).expect("ablation");
    let psnr = [rows[0].0.psnr, rows[1].0.psnr, rows[2].0.psnr];
    let ssim = [rows[0].0.ssim, rows[1].0.ssim, rows[2].0.ssim];
    let full = rows.swap_remove(0).1;
    Ablation { data, full, psnr, ssim }
}

fn end_to_end(ab: &Ablation, elapsed: Duration) -> Outcome {
    let [a, b, c] = ab.psnr;
    let gap = a - b;
    check(
        gap >= ABLATION_GAP_DB && c < a && elapsed.as_secs_f64() < 3600.0,
        format!(
            "holdout PSNR full {a:.2} dB, no refractive field {b:.2} dB (gap {gap:+.2}, need >= {ABLATION_GAP_DB}), no warm-up {c:.2} dB; SSIM {:.3}/{:.3}/{:.3}",
            ab.ssim[0], ab.ssim[1], ab.ssim[2]
        ),
    )
}

fn geometry_recovery(ab: &Ablation, dir: &Path) -> Outcome {
    // Ground truth comes from the exit-ray maps stored with the dataset.
    let stored = read_dataset(&dir.join("dataset")).expect("dataset read");
    let maps = stored.exit_rays.expect("exit-ray maps");
    let view = ab.data.train_views()[0];
    let angle = exit_ray_angular_error(&ab.full.state, &stored.cameras[view], &maps[view], 0.5).unwrap_or(f64::NAN);
    let warmup = desk_config().train.warmup_iters;
    let normals: Vec<f64> = ab.full.log[warmup..].iter().map(|r| r.report.normal_consistency).collect();
    let windows = window_means(&normals, NORMAL_WINDOW);
    let increases = windows.windows(2).filter(|w| w[1] > w[0]).count();
    let shown: Vec<String> = windows.iter().map(|w| format!("{w:.2e}")).collect();
    check(
        angle < ANGULAR_TOL_DEG && increases == 0,
        format!(
            "mean angular error {angle:.3} deg (need < {ANGULAR_TOL_DEG}); normal-loss window means {} with {increases} increases",
            shown.join(" ")
        ),
    )
}

fn no_harm(dir: &Path) -> Outcome {
    let mut cfg = desk_config();
    cfg.cover.index = 1.0;
    let data = simulate_from_config(&cfg).expect("simulation");
    let full = run_experiment(&cfg, &data, Some(&dir.join("eta1_full"))).expect("full run");
    cfg.modes.enable_refractive_field = false;
    cfg.modes.ablation_head = AblationHead::Identity;
    let plain = run_experiment(&cfg, &data, Some(&dir.join("eta1_plain"))).expect("plain run");
    let diff = full.report.psnr - plain.report.psnr;
    check(
        diff.abs() <= NO_HARM_TOL_DB,
        format!(
            "eta = 1 holdout PSNR with field {:.2} dB, without {:.2} dB (difference {diff:+.2}, need |.| <= {NO_HARM_TOL_DB})",
            full.report.psnr, plain.report.psnr
        ),
    )
}

fn constant(v: f32, size: u32) -> Image {
    let mut img = Image::new(size, size);
    img.data.fill(v);
    img
}

fn metric_units() -> Outcome {
    let mut failures = Vec::new();
    let a = constant(0.3, 16);
    let b = constant(0.4, 16);
    let mse = (0.4f32 as f64 - 0.3f32 as f64).powi(2);
    let p = psnr(&a, &b, 1.0).unwrap();
    if (p - 10.0 * (1.0 / mse).log10()).abs() > 1e-9 || (p - 20.0).abs() > 1e-5 {
        failures.push(format!("offset 0.1 gives {p}"));
    }
    if psnr(&a, &a, 1.0).unwrap() != PSNR_CAP_DB {
        failures.push("identical images not capped".into());
    }
    if psnr(&constant(0.0, 16), &constant(1.0, 16), 1.0).unwrap().abs() > 1e-12 {
        failures.push("unit offset is not 0 dB".into());
    }
    let mut pattern = Image::new(32, 32);
    for r in 0..32 {
        for c in 0..32 {
            let v = if (r / 4 + c / 4) % 2 == 0 { 1.0 } else { 0.0 };
            pattern.set(c, r, [v; 3]);
        }
    }
    let s = ssim(&pattern, &pattern).unwrap();
    if (s - 1.0).abs() > 1e-9 {
        failures.push(format!("ssim(a, a) = {s}"));
    }
    let mut negative = pattern.clone();
    for v in &mut negative.data {
        *v = 1.0 - *v;
    }
    if ssim(&pattern, &negative).unwrap() >= 0.0 {
        failures.push("negative image not anticorrelated".into());
    }
    let (mu_a, mu_b) = (0.5f64, 0.6f32 as f64);
    let luminance = (2.0 * mu_a * mu_b + 1e-4) / (mu_a * mu_a + mu_b * mu_b + 1e-4);
    let shifted = ssim(&constant(0.5, 16), &constant(0.6, 16)).unwrap();
    if (shifted - luminance).abs() > 1e-9 || shifted >= 1.0 {
        failures.push(format!("constant shift {shifted} vs {luminance}"));
    }
    if failures.is_empty() {
        check(true, format!("psnr 0.1 offset {p:.6} dB, cap {PSNR_CAP_DB} dB, ssim(a, a) {s:.12}"))
    } else {
        check(false, failures.join("; "))
    }
}

fn report(id: usize, name: &str, budget: Option<f64>, start: Instant, out: Outcome, results: &mut Vec<bool>) {
    let secs = start.elapsed().as_secs_f64();
    let in_budget = budget.map_or(true, |b| secs < b);
    let pass = out.pass && in_budget;
    let budget_note = budget.map(|b| format!(" (budget {b:.0} s)")).unwrap_or_default();
    println!(
        "criterion {id} {name}: {} | {} | {secs:.2} s{budget_note}",
        if pass { "PASS" } else { "FAIL" },
        out.detail
    );
    results.push(pass);
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let work = tempfile::tempdir().expect("temp dir");

    let t = Instant::now();
    report(1, "snell_suite", Some(1.0), t, snell_suite(), &mut results);
    let t = Instant::now();
    report(2, "slab_invariance", Some(1.0), t, slab_invariance(), &mut results);
    let t = Instant::now();
    report(3, "compositing_equivalence", Some(1.0), t, compositing_equivalence(), &mut results);
    let t = Instant::now();
    report(4, "gradient_contract", Some(120.0), t, gradient_contract(), &mut results);

    let t = Instant::now();
    let ab = run_ablation(work.path());
    let elapsed = t.elapsed();
    report(5, "end_to_end_recovery", None, t, end_to_end(&ab, elapsed), &mut results);
    let t = Instant::now();
    report(6, "geometry_recovery", None, t, geometry_recovery(&ab, work.path()), &mut results);
    let t = Instant::now();
    report(7, "no_harm_control", Some(1800.0), t, no_harm(work.path()), &mut results);
    let t = Instant::now();
    report(8, "metric_units", None, t, metric_units(), &mut results);

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
