use covertrace::harness::{simulate_from_config, ExperimentConfig};
use covertrace::simulator::{ground_truth_exit, read_dataset, write_dataset, CaptureDataset, SimulationError};
use covertrace::camera::CameraModel;

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.scene_resolution = 20;
    c.rig.n_views = 5;
    c.rig.width = 20;
    c.rig.height = 16;
    c.holdout_every = 2;
    c.sampling.n_samples = 32;
    c
}

fn simulate(cfg: &ExperimentConfig) -> CaptureDataset {
    simulate_from_config(cfg).unwrap()
}

#[test]
fn stored_exit_rays_match_a_fresh_traversal() {
    let data = simulate(&tiny_config());
    let cover = data.cover.as_ref().unwrap();
    let maps = data.exit_rays.as_ref().unwrap();
    for (cam, map) in data.cameras.iter().zip(maps) {
        for row in 0..cam.height {
            for col in 0..cam.width {
                let local = ground_truth_exit(cam, Some(cover), CameraModel::pixel_center(col, row)).unwrap();
                let o = cam.pose.to_world_point(local.origin).to_array();
                let d = cam.pose.to_world_dir(local.direction).to_array();
                let stored = map[(row * cam.width + col) as usize];
                for k in 0..3 {
                    assert!((stored[k] - o[k]).abs() < 1e-12);
                    assert!((stored[3 + k] - d[k]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn unit_index_cover_renders_like_no_cover() {
    let mut cfg = tiny_config();
    cfg.cover.index = 1.0;
    let inert = simulate(&cfg);
    cfg.cover.enabled = false;
    let bare = simulate(&cfg);
    for (a, b) in inert.images.iter().zip(&bare.images) {
        let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!((worst as f64) < 1e-9);
    }
}

#[test]
fn the_cover_visibly_changes_the_capture() {
    let cfg = tiny_config();
    let covered = simulate(&cfg);
    let mut bare_cfg = cfg.clone();
    bare_cfg.cover.enabled = false;
    let bare = simulate(&bare_cfg);
    let diff: f32 = covered.images[1]
        .data
        .iter()
        .zip(&bare.images[1].data)
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(diff > 1e-3, "{diff}");
}

#[test]
fn simulation_is_a_pure_function_of_its_config() {
    let cfg = tiny_config();
    let a = simulate(&cfg);
    let b = simulate(&cfg);
    assert_eq!(a.images, b.images);
    assert_eq!(a.manifest, b.manifest);
    let mut other = cfg.clone();
    other.cover.figure_seed += 1;
    let c = simulate(&other);
    assert_ne!(a.images, c.images);
    assert_ne!(a.manifest.config_hash, c.manifest.config_hash);
}

#[test]
fn holdout_is_disjoint_from_training_views() {
    let data = simulate(&tiny_config());
    assert_eq!(data.holdout, [0, 2, 4]);
    let train = data.train_views();
    assert_eq!(train, [1, 3]);
    assert_eq!(data.images.len(), data.cameras.len());
}

#[test]
fn datasets_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(&tiny_config());
    write_dataset(dir.path(), &data).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.images, data.images);
    assert_eq!(back.cover, data.cover);
    assert_eq!(back.holdout, data.holdout);
    assert_eq!(back.flagged, data.flagged);
    assert_eq!(back.manifest, data.manifest);
    let bits = |d: &CaptureDataset| -> Vec<u64> {
        d.exit_rays.as_ref().unwrap().iter().flatten().flatten().map(|v| v.to_bits()).collect()
    };
    assert_eq!(bits(&back), bits(&data));
    for (a, b) in back.cameras.iter().zip(&data.cameras) {
        let p = [7.5, 3.25];
        assert!((a.lift_local_f64(p) - b.lift_local_f64(p)).max_abs() < 1e-12);
        assert!((a.pose.center - b.pose.center).max_abs() < 1e-15);
    }
}

#[test]
fn unsupported_dataset_versions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &simulate(&tiny_config())).unwrap();
    let path = dir.path().join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    m["format_version"] = serde_json::json!(99);
    std::fs::write(&path, m.to_string()).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(SimulationError::Format(_))));
}
