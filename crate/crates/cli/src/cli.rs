//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use transcender::detector::{load_checkpoint, TrainParams};
use transcender::evalrig::{append_records_csv, EvalSubject, RigGeometry};
use transcender::patch::load_patch;
use transcender::pipeline::PATCH_DIR;
use transcender::target::class_by_name;
use transcender::transforms::{enumerate_configs, Method};
use transcender::toy_classes;

use crate::error::{CliError, CliResult};
use crate::experiment::{EvaluationSection, ExperimentSpec, Preset, RigSection, RunOverrides, OUTPUT_ROOT_ENV};
use crate::report::write_report;
use crate::runs::{background_source, build_run_spec, evaluate_run, mesh_pool_names, optimize_into, train_detector};
use crate::sweep::run_sweep;

#[derive(Debug, Parser)]
#[command(name = "transcender", version, about = "Multi-camera adversarial patch generation and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the toy detector on a synthetic corpus and save a checkpoint.
    TrainDetector(TrainArgs),
    /// Optimize one patch.
    Optimize(OptimizeArgs),
    /// Evaluate a saved patch on the rig and append records.
    Evaluate(EvaluateArgs),
    /// Build tables, charts and metadata from a record store.
    Report(ReportArgs),
    /// Run every configuration of an experiment file.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "detector/detector.ckpt")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub images: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long, default_value = "transcender_mc")]
    pub method: String,
    #[arg(long, default_value = "stop sign")]
    pub target: String,
    /// Configuration id; the first enumerated configuration when absent.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Directory of PNG backgrounds.
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub detector: PathBuf,
    /// Run directory or patch directory.
    #[arg(long)]
    pub patch: PathBuf,
    /// Record store to append to.
    #[arg(long)]
    pub records: PathBuf,
    /// Support objects for difficult-conditions evaluation.
    #[arg(long = "support")]
    pub supports: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub rotations: usize,
    /// Skip the plain screen evaluation.
    #[arg(long)]
    pub no_rig: bool,
    /// Screen positions at 0.5, 1.0 and 1.5 m.
    #[arg(long)]
    pub near: bool,
    /// Leave sub-threshold scores out of S.
    #[arg(long)]
    pub strict: bool,
    /// Seed of the held-out backgrounds; the patch seed when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub spec: PathBuf,
    /// Overrides the preset of the experiment file.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub parallelism: Option<usize>,
}

/// Relative output paths live under the output-root override when set.
fn under_output_root(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text.trim_end();
            return Err(CliError::Validation(text.strip_prefix("error: ").unwrap_or(text).to_string()));
        }
    };
    match cli.command {
        Command::TrainDetector(a) => cmd_train(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => {
            let files = write_report(&a.records, &under_output_root(&a.out))?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let mut params = TrainParams::default();
    if let Some(s) = a.seed {
        params.seed = s;
    }
    if let Some(e) = a.epochs {
        params.epochs = e;
    }
    if let Some(n) = a.images {
        params.train_images = n;
    }
    let out = under_output_root(&a.out);
    train_detector(&out, &params)?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_optimize(a: OptimizeArgs) -> CliResult<()> {
    let method = Method::parse(&a.method)?;
    let target = class_by_name(&toy_classes(), &a.target)?;
    let configs = enumerate_configs(method);
    let config = match &a.config {
        Some(id) => configs
            .into_iter()
            .find(|c| &c.config_id == id)
            .ok_or_else(|| CliError::Validation(format!("no {} configuration with id {id}", method.name())))?,
        None => configs.into_iter().next().expect("every method has configurations"),
    };
    let detector = load_checkpoint::<f32>(&a.detector)?;
    let overrides = RunOverrides {
        epochs: a.epochs,
        steps_per_epoch: a.steps_per_epoch,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        patch_size: a.patch_size,
        backgrounds: a.backgrounds,
    };
    let spec = build_run_spec(config, target, a.seed, a.preset, &overrides, &RigSection::default());
    let out = under_output_root(&a.out);
    let result = optimize_into(&spec, &detector, &out)?;
    println!(
        "{}: {} steps, final loss {:.4}",
        out.display(),
        result.report.steps_executed,
        result.report.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let patch_dir = if a.patch.join(PATCH_DIR).is_dir() { a.patch.join(PATCH_DIR) } else { a.patch.clone() };
    let (patch, meta) = load_patch::<f32>(&patch_dir)?;
    let detector = load_checkpoint::<f32>(&a.detector)?;
    let target = class_by_name(&toy_classes(), &meta.target)?;
    let method = Method::parse(&meta.method)?;
    let mesh_pool = enumerate_configs(method)
        .iter()
        .find(|c| c.config_id == meta.config_id)
        .map(mesh_pool_names)
        .unwrap_or_default();
    let subject = EvalSubject {
        patch_id: a.patch.display().to_string(),
        config_id: meta.config_id.clone(),
        method: meta.method.clone(),
        target: target.id,
        target_name: target.name,
        mesh_pool,
        seed: meta.seed,
    };
    let rig = if a.near { RigGeometry::near_preset() } else { RigGeometry::default() };
    let eval = EvaluationSection {
        rig: !a.no_rig,
        difficult: a.supports,
        rotations: a.rotations,
        strict: a.strict,
        ..EvaluationSection::default()
    };
    let backgrounds = background_source(a.backgrounds.as_ref())?;
    let records = evaluate_run(&patch.pixels(), &detector, &subject, &rig, &eval, &backgrounds, a.seed.unwrap_or(meta.seed))?;
    let out = under_output_root(&a.records);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::io_err(dir, e))?;
    }
    append_records_csv(&records, &out)?;
    for r in &records {
        println!(
            "{} position {} ({} m): {} S={:.3}",
            r.support,
            r.position,
            r.distance,
            r.strength.name(),
            r.robustness
        );
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    let mut exp = ExperimentSpec::load(&a.spec)?;
    if let Some(p) = a.preset {
        exp.preset = p;
    }
    if let Some(n) = a.parallelism {
        if n == 0 {
            return Err(CliError::Validation("parallelism must be at least 1".into()));
        }
        exp.parallelism = n;
    }
    let summary = run_sweep(&exp)?;
    println!(
        "{}: {} planned, {} already done, {} executed, {} failed, {} records in {}",
        exp.name,
        summary.planned,
        summary.already_done,
        summary.executed,
        summary.failed.len(),
        summary.records,
        summary.records_path.display()
    );
    if !summary.failed.is_empty() {
        for (id, e) in &summary.failed {
            eprintln!("failed: {id}: {e}");
        }
        return Err(CliError::Runtime(format!("{} runs failed", summary.failed.len())));
    }
    Ok(())
}
