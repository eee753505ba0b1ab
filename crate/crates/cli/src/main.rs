use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use covertrace::harness::{
    ablate, config_hash, evaluate_dirs, file_hash, gradient_suite, load_state, read_camera_list, render_cameras,
    run_experiment, simulate_from_config, write_metric_report, ErrorCategory, ExperimentConfig, FormatVersions,
    GradSuiteConfig, HarnessError,
};
use covertrace::radiance::RadianceError;
use covertrace::simulator::{read_dataset, write_dataset, CaptureDataset, SimulationError};

#[derive(Parser)]
#[command(name = "covertrace", version, about = "Refractive-cover calibration and volumetric rendering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic capture through a simulated cover.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Jointly fit the radiance grid, cover field and camera offsets.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a checkpoint from a list of cameras.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON array of camera records, one camera file, or a dataset directory.
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score rendered images against references.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        /// Output directory; defaults to `gradcheck-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full method, the no-field and the no-warm-up variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Existing dataset; simulated from the config into `<out>/dataset` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Harness(HarnessError),
    GradCheck(usize),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        Self::Harness(e)
    }
}

macro_rules! via_harness {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Harness(e.into())
            }
        })*
    };
}

via_harness!(std::io::Error, SimulationError, RadianceError);

impl CliError {
    fn label(&self) -> &'static str {
        match self {
            Self::Harness(e) => e.category().label(),
            Self::GradCheck(_) => "gradcheck",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Harness(e) => match e.category() {
                ErrorCategory::Config => 3,
                ErrorCategory::Data => 4,
                ErrorCategory::Numerical => 5,
            },
            Self::GradCheck(_) => 6,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Harness(e) => write!(f, "{e}"),
            Self::GradCheck(n) => write!(f, "{n} gradient check(s) exceeded tolerance"),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_manifest(path: &Path, value: serde_json::Value) -> Result<()> {
    let mut value = value;
    value["crate_version"] = json!(env!("CARGO_PKG_VERSION"));
    value["formats"] = serde_json::to_value(FormatVersions::current()).expect("plain struct");
    let text = serde_json::to_string_pretty(&value).expect("json value");
    std::fs::write(path, text)?;
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        HarnessError::Io(io) => HarnessError::Config(format!("{}: {io}", path.display())).into(),
        other => other.into(),
    })
}

fn load_data(dir: &Path) -> Result<CaptureDataset> {
    read_dataset(dir).map_err(|e| match e {
        SimulationError::Io(io) => {
            let msg = format!("dataset {}: {io}", dir.display());
            std::io::Error::new(io.kind(), msg).into()
        }
        other => other.into(),
    })
}

fn simulate(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let start = Instant::now();
    let data = simulate_from_config(&cfg)?;
    write_dataset(out, &data)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let flagged: usize = data.flagged.iter().sum();
    println!(
        "simulated {} views ({} holdout) in {:.1} s; {flagged} flagged pixels",
        data.images.len(),
        data.holdout.len(),
        start.elapsed().as_secs_f64()
    );
    println!("dataset written to {} (config {})", out.display(), data.manifest.config_hash);
    Ok(())
}

fn train_cmd(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let dataset = load_data(data)?;
    let start = Instant::now();
    let outcome = run_experiment(&cfg, &dataset, Some(out))?;
    let last = outcome.log.last();
    println!(
        "trained {} iterations in {:.1} s",
        last.map_or(0, |r| r.iter + 1),
        start.elapsed().as_secs_f64()
    );
    print_report(&outcome.report);
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn print_report(report: &covertrace::harness::MetricReport) {
    println!("view  psnr_db  ssim");
    for m in &report.per_image {
        println!("{:>4}  {:>7.3}  {:.4}", m.view, m.psnr, m.ssim);
    }
    println!("mean  {:>7.3}  {:.4}", report.psnr, report.ssim);
}

fn render(checkpoint: &Path, views: &Path, out: &Path) -> Result<()> {
    let (state, sampling) = load_state(checkpoint)?;
    let cameras = read_camera_list(views)?;
    if cameras.is_empty() {
        return Err(HarnessError::Config(format!("no cameras in {}", views.display())).into());
    }
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let images = render_cameras(&state, &cameras, &sampling)?;
    let mut flagged = Vec::with_capacity(images.len());
    for (i, (img, n)) in images.iter().enumerate() {
        img.write_png(&out.join(format!("view_{i:03}.png")))?;
        img.write_raw(&out.join(format!("view_{i:03}.bin")))?;
        flagged.push(*n);
    }
    let mut hashes = serde_json::Map::new();
    for f in ["state.json", "grid.bin", "field.bin"] {
        let p = checkpoint.join(f);
        if p.exists() {
            hashes.insert(f.to_string(), json!(file_hash(&p)?));
        }
    }
    write_manifest(
        &out.join("manifest.json"),
        json!({
            "command": "render",
            "checkpoint": checkpoint.display().to_string(),
            "checkpoint_hashes": hashes,
            "views": views.display().to_string(),
            "model": state.model.name(),
            "sampling": sampling,
            "flagged": flagged,
        }),
    )?;
    println!(
        "rendered {} views with the {} model in {:.1} s to {}",
        images.len(),
        state.model.name(),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn eval(pred: &Path, reference: &Path, report_path: &Path) -> Result<()> {
    let report = evaluate_dirs(pred, reference)?;
    write_metric_report(&report, report_path)?;
    write_manifest(
        &report_path.with_extension("manifest.json"),
        json!({
            "command": "eval",
            "pred": pred.display().to_string(),
            "ref": reference.display().to_string(),
            "images": report.per_image.len(),
        }),
    )?;
    print_report(&report);
    println!("report written to {}", report_path.display());
    Ok(())
}

fn gradcheck(seed: u64, probes: usize, out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| PathBuf::from(format!("gradcheck-{seed}")));
    std::fs::create_dir_all(&out)?;
    let cfg = GradSuiteConfig {
        seed,
        probes,
        ..GradSuiteConfig::default()
    };
    let entries = gradient_suite(&cfg);
    let mut csv = String::from("check,max_relative_error,checked,skipped,passed\n");
    println!("check                      max_rel_err  checked  skipped  result");
    for e in &entries {
        let r = &e.report;
        csv.push_str(&format!(
            "{},{:.6e},{},{},{}\n",
            e.name, r.max_relative_error, r.checked, r.skipped, r.passed
        ));
        println!(
            "{:<26} {:>11.3e}  {:>7}  {:>7}  {}",
            e.name,
            r.max_relative_error,
            r.checked,
            r.skipped,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    std::fs::write(out.join("gradcheck.csv"), csv)?;
    std::fs::write(
        out.join("gradcheck.json"),
        serde_json::to_string_pretty(&entries).expect("plain structs"),
    )?;
    write_manifest(
        &out.join("manifest.json"),
        json!({
            "command": "gradcheck",
            "seed": seed,
            "probes": probes,
            "step": cfg.step,
            "tolerance": cfg.tolerance,
        }),
    )?;
    let failed = entries.iter().filter(|e| !e.report.passed).count();
    if failed > 0 {
        return Err(CliError::GradCheck(failed));
    }
    println!("all {} checks passed (tolerance {:e})", entries.len(), cfg.tolerance);
    Ok(())
}

fn ablate_cmd(config: &Path, data: Option<PathBuf>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    std::fs::create_dir_all(out)?;
    let dataset = match &data {
        Some(dir) => load_data(dir)?,
        None => {
            let d = simulate_from_config(&cfg)?;
            write_dataset(&out.join("dataset"), &d)?;
            d
        }
    };
    write_manifest(
        &out.join("manifest.json"),
        json!({
            "command": "ablate",
            "config_hash": config_hash(&cfg)?,
            "dataset_config_hash": dataset.manifest.config_hash,
            "seed": cfg.seed,
            "data": data.map(|d| d.display().to_string()),
        }),
    )?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let start = Instant::now();
    let rows = ablate(&cfg, &dataset, Some(out))?;
    println!("variant               psnr_db  ssim");
    for (r, _) in &rows {
        println!("{:<20} {:>8.3}  {:.4}", r.name, r.psnr, r.ssim);
    }
    println!("ablation finished in {:.1} s; tables in {}", start.elapsed().as_secs_f64(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Train { config, data, out } => train_cmd(&config, &data, &out),
        Command::Render { checkpoint, views, out } => render(&checkpoint, &views, &out),
        Command::Eval { pred, reference, report } => eval(&pred, &reference, &report),
        Command::Gradcheck { seed, probes, out } => gradcheck(seed, probes, out),
        Command::Ablate { config, data, out } => ablate_cmd(&config, data, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.label());
            ExitCode::from(e.exit_code())
        }
    }
}
