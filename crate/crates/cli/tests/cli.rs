use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
seed = 3
scene_resolution = 16
holdout_every = 4

[rig]
n_views = 4
width = 24
height = 24

[sampling]
n_samples = 24

[grid]
resolution = 12

[train]
warmup_iters = 4
total_iters = 12
rays_per_batch = 72
eval_every = 0
"#;

fn covertrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covertrace"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_train_render_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let renders = dir.path().join("renders");
    let report = dir.path().join("eval/report.json");

    ok(&covertrace(&["simulate", "--config", s(&cfg), "--out", s(&data)]));
    assert!(data.join("images/view_003.png").exists());
    let manifest = json(&data.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);

    ok(&covertrace(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]));
    for f in ["manifest.json", "config.toml", "loss.csv", "report.json", "checkpoint/state.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let m = json(&run.join("manifest.json"));
    assert_eq!(m["seed"], 0);
    assert_eq!(m["formats"]["dataset"], 1);
    assert!(run.join("renders/view_000_side_by_side.png").exists());

    ok(&covertrace(&[
        "render",
        "--checkpoint",
        s(&run.join("checkpoint")),
        "--views",
        s(&data),
        "--out",
        s(&renders),
    ]));
    assert!(renders.join("view_003.png").exists());
    let rm = json(&renders.join("manifest.json"));
    assert_eq!(rm["command"], "render");
    assert_eq!(rm["flagged"].as_array().unwrap().len(), 4);

    let out = covertrace(&["eval", "--pred", s(&renders), "--ref", s(&data), "--report", s(&report)]);
    ok(&out);
    let r = json(&report);
    assert_eq!(r["per_image"].as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(report.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(report.with_extension("manifest.json").exists());

    // The trained holdout render and the checkpoint render of the same view agree
    // up to the f32 precision of the stored raw buffers.
    let trained = json(&run.join("report.json"));
    let view0 = r["per_image"].as_array().unwrap().iter().find(|m| m["view"] == 0).unwrap();
    let psnr_trained = trained["per_image"][0]["psnr"].as_f64().unwrap();
    let psnr_eval = view0["psnr"].as_f64().unwrap();
    assert!((psnr_eval - psnr_trained).abs() < 1e-4, "{psnr_eval} vs {psnr_trained}");
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&covertrace(&["simulate", "--config", s(&cfg), "--out", s(&a)]));
    ok(&covertrace(&["simulate", "--config", s(&cfg), "--out", s(&b)]));
    for f in ["manifest.json", "images/view_001.bin", "cameras/view_002.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gradcheck_writes_report_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = covertrace(&["gradcheck", "--seed", "1", "--probes", "10", "--out", s(&out)]);
    ok(&o);
    let csv = std::fs::read_to_string(out.join("gradcheck.csv")).unwrap();
    assert!(csv.starts_with("check,max_relative_error"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    assert_eq!(json(&out.join("manifest.json"))["seed"], 1);
}

#[test]
fn ablate_writes_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("abl");
    ok(&covertrace(&["ablate", "--config", s(&cfg), "--out", s(&out)]));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "no_refractive_field", "no_warmup"]);
    assert!(out.join("dataset/manifest.json").exists());
    assert!(out.join("no_warmup/report.json").exists());
    assert!(json(&out.join("manifest.json"))["config_hash"].is_string());
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[rig]\nn_views = \"many\"\n").unwrap();
    let o = covertrace(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]"));
}

#[test]
fn invalid_training_parameters_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    ok(&covertrace(&["simulate", "--config", s(&cfg), "--out", s(&data)]));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, TINY.replace("rays_per_batch = 72", "rays_per_batch = 0")).unwrap();
    let o = covertrace(&["train", "--config", s(&bad), "--data", s(&data), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let missing = dir.path().join("nope");
    let o = covertrace(&["train", "--config", s(&cfg), "--data", s(&missing), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(4));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error[data]") && err.contains("nope"), "{err}");
}

#[test]
fn eval_without_matching_images_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let o = covertrace(&["eval", "--pred", s(&a), "--ref", s(&b), "--report", s(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_arguments_are_usage_errors() {
    let o = covertrace(&["render", "--checkpoint", "x"]);
    assert_eq!(o.status.code(), Some(2));
}
