use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::MetricReport;
use super::HarnessError;
use crate::camera::{read_camera_file, CameraModel, CameraRecord};
use crate::optim::{render_view, TrainState};
use crate::radiance::{stratified_parameters, Image, SamplingConfig};

/// Cameras from a JSON array of camera records, a single camera file, or a
/// dataset directory (its `cameras/` files in name order).
pub fn read_camera_list(path: &Path) -> Result<Vec<CameraModel>, HarnessError> {
    if path.is_dir() {
        let dir = if path.join("cameras").is_dir() {
            path.join("cameras")
        } else {
            path.to_path_buf()
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        return files.iter().map(|f| Ok(read_camera_file(f)?)).collect();
    }
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let records: Vec<CameraRecord> = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|r| vec![r])
    }
    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    records.iter().map(|r| Ok(r.to_camera()?)).collect()
}

/// Renders every camera with `state`; returns images and flagged-pixel counts.
pub fn render_cameras(
    state: &TrainState,
    cameras: &[CameraModel],
    sampling: &SamplingConfig,
) -> Result<Vec<(Image, usize)>, HarnessError> {
    let (ts, deltas) = stratified_parameters(sampling.near, sampling.far, sampling.n_samples, false, 0)?;
    Ok(cameras
        .par_iter()
        .map(|c| render_view(state, c, &ts, &deltas, sampling.min_transmittance))
        .collect())
}

fn png_names(dir: &Path) -> Result<Vec<String>, HarnessError> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn view_number(name: &str) -> usize {
    name.trim_end_matches(".png")
        .rsplit('_')
        .find_map(|s| s.parse().ok())
        .unwrap_or(0)
}

/// Scores every PNG in `pred` against the same-named file in `reference`
/// (or in `reference/images`). Full-precision `.bin` companions are used
/// when present on both sides.
pub fn evaluate_dirs(pred: &Path, reference: &Path) -> Result<MetricReport, HarnessError> {
    let ref_dir = if reference.join("images").is_dir() {
        reference.join("images")
    } else {
        reference.to_path_buf()
    };
    let mut pairs = Vec::new();
    for name in png_names(pred)? {
        let r = ref_dir.join(&name);
        if !r.exists() {
            continue;
        }
        let p = pred.join(&name);
        let both_raw = p.with_extension("bin").exists() && r.with_extension("bin").exists();
        let load = |path: &Path| {
            if both_raw {
                Image::read_png_or_raw(path)
            } else {
                Image::read_png(path)
            }
        };
        pairs.push((view_number(&name), load(&p)?, load(&r)?));
    }
    if pairs.is_empty() {
        return Err(HarnessError::Config(format!(
            "no matching images between {} and {}",
            pred.display(),
            ref_dir.display()
        )));
    }
    Ok(MetricReport::evaluate(pairs.iter().map(|(v, a, b)| (*v, a, b)))?)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a MetricReport,
    crate_version: &'static str,
}

/// Writes `report` as JSON at `path` and as CSV next to it.
pub fn write_metric_report(report: &MetricReport, path: &Path) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = ReportFile {
        report,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| HarnessError::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    let mut csv = String::from("view,psnr,ssim\n");
    for m in &report.per_image {
        csv.push_str(&format!("{},{:.6},{:.6}\n", m.view, m.psnr, m.ssim));
    }
    csv.push_str(&format!("mean,{:.6},{:.6}\n", report.psnr, report.ssim));
    std::fs::write(path.with_extension("csv"), csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_numbers_parse_from_names() {
        assert_eq!(view_number("view_007.png"), 7);
        assert_eq!(view_number("view_012_render.png"), 12);
        assert_eq!(view_number("other.png"), 0);
    }

    #[test]
    fn evaluates_matching_directories() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        std::fs::create_dir_all(&a).unwrap();
        std::fs::create_dir_all(b.join("images")).unwrap();
        let mut img = Image::new(16, 16);
        img.data.fill(0.25);
        img.write_png(&a.join("view_003.png")).unwrap();
        img.write_png(&b.join("images/view_003.png")).unwrap();
        img.write_png(&a.join("view_004.png")).unwrap();
        let r = evaluate_dirs(&a, &b).unwrap();
        assert_eq!(r.per_image.len(), 1);
        assert_eq!(r.per_image[0].view, 3);
        assert_eq!(r.psnr, 99.0);
        let out = dir.path().join("r/report.json");
        write_metric_report(&r, &out).unwrap();
        assert!(std::fs::read_to_string(out.with_extension("csv")).unwrap().starts_with("view,psnr,ssim"));
        assert!(evaluate_dirs(&a, &a.join("nothing")).is_err());
    }
}
