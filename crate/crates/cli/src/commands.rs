//! Command-line definitions and the command implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lensless_core::psf::occupancy;
use lensless_core::{generate_object, generate_psf, multiplexing_index, sparsity, NoiseModel};

use crate::config::{ExperimentConfig, Settings};
use crate::error::{exit, CliError, Result};
use crate::io;
use crate::manifest::RunManifest;
use crate::pipeline::{run_case, write_case, CaseSpec};
use crate::study::{run_study, StudyName};
use crate::verify::run_verify;

#[derive(Debug, Parser)]
#[command(
    name = "lensless-crb",
    version,
    about = "Cramér–Rao bounds for lensless imaging encoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Each overrides the config-file key of the
/// same name; `--set key=value` reaches any other key.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Diagonal loading relative to the largest Fisher diagonal entry.
    #[arg(long)]
    pub epsilon_rel: Option<f64>,
    /// Poisson background rate per measurement pixel.
    #[arg(long)]
    pub background: Option<f64>,
    /// Gaussian noise variance.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Estimator trials for efficiency checks.
    #[arg(long)]
    pub n_trials: Option<usize>,
    /// Monte Carlo samples for Fisher estimates.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Record per-stage wall times in the manifest (makes it run-dependent).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a PSF and write it as CSV and 16-bit PGM.
    Psf {
        /// delta | lenslets | rml | diffuser
        #[arg(long)]
        kind: Option<String>,
        /// Lenslet count (lenslets) or spot count (rml).
        #[arg(long)]
        n: Option<usize>,
        /// PSF side length in pixels.
        #[arg(long)]
        size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a test object and write it as CSV and 16-bit PGM.
    Object {
        /// dense | sparse
        #[arg(long)]
        kind: Option<String>,
        /// Minimum blob count (dense) or bead count (sparse).
        #[arg(long)]
        n: Option<usize>,
        /// Object side length in pixels.
        #[arg(long)]
        size: Option<usize>,
        /// Peak intensity in photons.
        #[arg(long)]
        peak: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute the per-pixel CRB map for one configuration.
    Crb {
        #[command(flatten)]
        common: Common,
    },
    /// Run the reduced-size self-checks and report each one.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Run a canned study: fig2 (Gaussian) or fig3 (Poisson, dense and sparse).
    Study {
        /// fig2 | fig3
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

fn opt<T: ToString>(settings: &mut Settings, key: &str, value: &Option<T>) -> Result<()> {
    if let Some(v) = value {
        settings.set(key, &v.to_string())?;
    }
    Ok(())
}

/// Layer the config file, then `--set` pairs, then explicit flags.
fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> Result<ExperimentConfig> {
    let mut settings = match &common.config {
        Some(path) => Settings::load(path)?,
        None => Settings::new(),
    };
    for pair in &common.set {
        settings.set_pair(pair)?;
    }
    opt(&mut settings, "seed", &common.seed)?;
    opt(
        &mut settings,
        "out",
        &common.out.as_ref().map(|p| p.display().to_string()),
    )?;
    opt(&mut settings, "epsilon_rel", &common.epsilon_rel)?;
    if common.epsilon_rel.is_some() {
        // An explicit flag wins over an absolute setting from the file.
        settings = without(&settings, "epsilon_abs")?;
    }
    opt(&mut settings, "background", &common.background)?;
    opt(&mut settings, "sigma2", &common.sigma2)?;
    opt(&mut settings, "n_trials", &common.n_trials)?;
    opt(&mut settings, "n_samples", &common.n_samples)?;
    for (key, value) in extra {
        opt(&mut settings, key, value)?;
    }
    ExperimentConfig::from_settings(&settings)
}

fn without(settings: &Settings, key: &str) -> Result<Settings> {
    let mut out = Settings::new();
    for k in crate::config::KEYS.iter().filter(|k| **k != key) {
        if let Some(v) = settings.get(k) {
            out.set(k, v)?;
        }
    }
    Ok(out)
}

fn background_of(model: &NoiseModel) -> f64 {
    match model {
        NoiseModel::Poisson { background } => *background,
        NoiseModel::Gaussian { .. } => 0.0,
    }
}

fn cmd_psf(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let spec = config.psf_spec();
    let psf = generate_psf(&spec)?;
    io::write_grid_csv(&out.join("psf.csv"), psf.shape(), psf.values())?;
    let scale = io::write_pgm(&out.join("psf.pgm"), psf.shape(), psf.values())?;
    let index = multiplexing_index(&psf)?;
    let occ = occupancy(&psf, 0.1);
    let mut manifest = RunManifest::new("psf", config, 0.0, spec.kind.is_surrogate());
    manifest.pgm_scale.insert("psf.pgm".into(), scale);
    manifest.results = serde_json::json!({
        "label": spec.kind.label(),
        "sum": psf.sum(),
        "multiplexing_index": index,
        "occupancy": occ,
    });
    manifest.finalize(out)?;
    println!(
        "psf {} {}: sum {:.12}, multiplexing index {index:.4}, occupancy {occ:.3} -> {}",
        spec.kind.label(),
        psf.shape(),
        psf.sum(),
        out.display()
    );
    Ok(())
}

fn cmd_object(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let spec = config.object_spec();
    let object = generate_object(&spec)?;
    io::write_grid_csv(&out.join("object.csv"), object.shape(), object.values())?;
    let scale = io::write_pgm(&out.join("object.pgm"), object.shape(), object.values())?;
    let fill = sparsity(&object);
    let mut manifest = RunManifest::new("object", config, 0.0, false);
    manifest.pgm_scale.insert("object.pgm".into(), scale);
    manifest.results = serde_json::json!({
        "label": spec.kind.label(),
        "max": object.max(),
        "sum": object.sum(),
        "nonzero_fraction": fill,
    });
    manifest.finalize(out)?;
    println!(
        "object {} {}: max {}, nonzero fraction {fill:.3} -> {}",
        spec.kind.label(),
        object.shape(),
        object.max(),
        out.display()
    );
    Ok(())
}

fn cmd_crb(config: &ExperimentConfig, out: &Path, timings: bool) -> Result<()> {
    let spec = CaseSpec::from_config(config.psf.label(), config)?;
    let case = run_case(&spec)?;
    let scale = write_case(out, &case)?;
    let mut manifest = RunManifest::new(
        "crb",
        config,
        background_of(&spec.noise),
        spec.psf.kind.is_surrogate(),
    );
    manifest
        .epsilon_used
        .insert(spec.name.clone(), case.crb.epsilon_used);
    manifest.pgm_scale.insert("crb.pgm".into(), scale);
    manifest.results = serde_json::json!({
        "mean": case.summary.mean,
        "median": case.summary.median,
        "max": case.summary.max,
        "multiplexing_index": case.multiplexing_index,
        "correlation_with_object": case.correlation,
        "object_shape": case.crb.object_shape,
        "measurement_shape": case.measurement_shape,
    });
    if timings {
        let t = case.timings;
        manifest.timings = Some(
            [
                ("generate".to_string(), t.generate),
                ("build_h".to_string(), t.build_h),
                ("fisher".to_string(), t.fisher),
                ("invert".to_string(), t.invert),
            ]
            .into_iter()
            .collect(),
        );
    }
    manifest.finalize(out)?;
    println!(
        "crb {} ({}): mean {:e}, median {:e}, max {:e}, epsilon {:e} -> {}",
        spec.name,
        case.measurement_shape,
        case.summary.mean,
        case.summary.median,
        case.summary.max,
        case.crb.epsilon_used,
        out.display()
    );
    Ok(())
}

fn cmd_verify(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let report = run_verify(config, out)?;
    for c in &report.checks {
        let value = c
            .value
            .map(|v| format!("{v:e}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<30} {:<30} {value:<12} {}",
            c.name,
            c.status.label(),
            c.tolerance
        );
    }
    let failed = report.failures();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(
            failed
                .iter()
                .map(|c| c.name.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        ))
    }
}

fn cmd_study(name: StudyName, config: &ExperimentConfig, out: &Path, timings: bool) -> Result<()> {
    let outcome = run_study(name, config, out, timings)?;
    println!(
        "{:<22} {:>14} {:>14} {:>10}",
        "case", "mean CRB", "median CRB", "index"
    );
    for r in &outcome.rows {
        println!(
            "{:<22} {:>14.6e} {:>14.6e} {:>10.4}",
            r.case, r.mean, r.median, r.multiplexing_index
        );
    }
    println!("-> {}", out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Psf {
            kind,
            n,
            size,
            common,
        } => {
            let config = resolve(
                &common,
                &[
                    ("psf", kind),
                    ("psf_n", n.map(|v| v.to_string())),
                    ("psf_size", size.map(|v| v.to_string())),
                ],
            )?;
            cmd_psf(&config, &config.out)
        }
        Command::Object {
            kind,
            n,
            size,
            peak,
            common,
        } => {
            let config = resolve(
                &common,
                &[
                    ("object", kind),
                    ("object_n", n.map(|v| v.to_string())),
                    ("object_size", size.map(|v| v.to_string())),
                    ("object_peak", peak.map(|v| v.to_string())),
                ],
            )?;
            cmd_object(&config, &config.out)
        }
        Command::Crb { common } => {
            let config = resolve(&common, &[])?;
            cmd_crb(&config, &config.out, common.timings)
        }
        Command::Verify { common } => {
            let config = resolve(&common, &[])?;
            cmd_verify(&config, &config.out)
        }
        Command::Study { name, common } => {
            let name: StudyName = name.parse()?;
            let config = resolve(&common, &[])?;
            cmd_study(name, &config, &config.out, common.timings)
        }
    }
}

/// Run and map the outcome to a process exit code, reporting errors on
/// stderr.
pub fn main_with(cli: Cli) -> i32 {
    match run(cli) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
