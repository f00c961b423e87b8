//! Reduced-size (8×8) self-checks: system-matrix invariants, Monte Carlo
//! Fisher estimates against the closed forms, finite-difference checks of
//! the score and Hessian, and the efficiency of the Gaussian estimator.

use std::fmt::Write as _;
use std::path::Path;

use lensless_core::estimators::{run_trials, EstimatorChoice};
use lensless_core::fisher::{fisher_closed_form, fisher_monte_carlo, fisher_observed_monte_carlo};
use lensless_core::noise::{hessian_log_likelihood, log_likelihood, sample, score};
use lensless_core::rng::{derive_seed, stream};
use lensless_core::{
    crb_from_fisher, generate_object, generate_psf, vectorize, ImageGrid, NoiseModel, ObjectKind,
    ObjectSpec, PsfKind, PsfSpec, Shape, SystemMatrix, VectorizedObject,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::io;
use crate::manifest::RunManifest;

pub const SIZE: usize = 8;
pub const MIN_SAMPLES: usize = 1000;
pub const MIN_TRIALS: usize = 100;
pub const MC_TOLERANCE: f64 = 0.05;
pub const SCORE_TOLERANCE: f64 = 1e-5;
pub const HESSIAN_TOLERANCE: f64 = 1e-4;
pub const EFFICIENCY_RANGE: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    SkippedInsufficientSamples,
    SkippedInvalidSystem,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::SkippedInsufficientSamples => "SKIPPED-insufficient-samples",
            Status::SkippedInvalidSystem => "SKIPPED-invalid-system",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    /// Measured quantity (relative error or efficiency), when computed.
    pub value: Option<f64>,
    pub tolerance: String,
    pub detail: String,
}

impl Check {
    fn new(
        name: impl Into<String>,
        status: Status,
        value: Option<f64>,
        tolerance: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            status,
            value,
            tolerance: tolerance.into(),
            detail: String::new(),
        }
    }

    fn below(name: impl Into<String>, value: f64, tol: f64) -> Self {
        let status = if value < tol {
            Status::Pass
        } else {
            Status::Fail
        };
        Self::new(name, status, Some(value), format!("< {tol:e}"))
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    fn errored(
        name: impl Into<String>,
        tolerance: impl Into<String>,
        err: &dyn std::fmt::Display,
    ) -> Self {
        Self::new(name, Status::Fail, None, tolerance).with_detail(err.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks
            .iter()
            .filter(|c| c.status == Status::Fail)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,status,value,tolerance,detail\n");
        for c in &self.checks {
            let value = c.value.map(|v| format!("{v:?}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                c.name,
                c.status.label(),
                value,
                c.tolerance,
                c.detail.replace(',', ";")
            )
            .expect("write to String");
        }
        out
    }
}

fn verify_psfs() -> Vec<PsfKind> {
    vec![
        PsfKind::Lenslets { n: 1 },
        PsfKind::Lenslets { n: 3 },
        PsfKind::diffuser_default(),
    ]
}

fn model_label(m: &NoiseModel) -> &'static str {
    match m {
        NoiseModel::Gaussian { .. } => "gaussian",
        NoiseModel::Poisson { .. } => "poisson",
    }
}

/// Strictly positive random object in `[0.2, 1] × peak`, so every
/// measurement pixel carries signal.
fn random_object(seed: u64, shape: Shape, peak: f64) -> Result<VectorizedObject> {
    let mut r = stream(seed, "verify-object");
    let values = (0..shape.len())
        .map(|_| peak * r.random_range(0.2..1.0))
        .collect();
    Ok(vectorize(&ImageGrid::new(
        shape.width,
        shape.height,
        values,
    )?))
}

fn perturbed(v: &VectorizedObject, j: usize, delta: f64) -> Result<VectorizedObject> {
    let mut x = v.values().clone();
    x[j] += delta;
    Ok(VectorizedObject::new(x, v.shape())?)
}

/// Relative errors of the analytic score and Hessian against central finite
/// differences on a small random instance.
pub fn fd_checks(model: &NoiseModel, seed: u64) -> Result<(f64, f64)> {
    // Small random instance: 4×4 object, 3×3 strictly positive kernel.
    let mut r = stream(seed, "verify-fd");
    let kernel = ImageGrid::new(3, 3, (0..9).map(|_| r.random_range(0.1..1.0)).collect())?;
    let obj = Shape::square(4);
    let h = SystemMatrix::build(&kernel, obj, Shape::square(3))?;
    let v = vectorize(&ImageGrid::new(
        4,
        4,
        (0..16).map(|_| r.random_range(1.0..20.0)).collect(),
    )?);
    let y = sample(model, &h.forward(&v)?, derive_seed(seed, "y"))?;
    let step = 1e-5;

    let s = score(model, &h, &v, &y)?;
    let mut fd = DVector::zeros(v.len());
    for j in 0..v.len() {
        let up = log_likelihood(model, &h, &perturbed(&v, j, step)?, &y)?.value();
        let down = log_likelihood(model, &h, &perturbed(&v, j, -step)?, &y)?.value();
        fd[j] = (up - down) / (2.0 * step);
    }
    let score_err = (&s - &fd).norm() / fd.norm();

    let hess = hessian_log_likelihood(model, &h, &v, &y)?;
    let mut fd_h = DMatrix::zeros(v.len(), v.len());
    for j in 0..v.len() {
        let col = (score(model, &h, &perturbed(&v, j, step)?, &y)?
            - score(model, &h, &perturbed(&v, j, -step)?, &y)?)
            / (2.0 * step);
        fd_h.set_column(j, &col);
    }
    let hess_err = (&hess - &fd_h).norm() / fd_h.norm();
    Ok((score_err, hess_err))
}

fn gls_efficiency(config: &ExperimentConfig, seed: u64) -> Result<f64> {
    let shape = Shape::square(SIZE);
    let psf = generate_psf(&PsfSpec::new(
        PsfKind::Lenslets { n: 1 },
        shape,
        config.substream("psf"),
    ))?;
    let h = SystemMatrix::build(&psf, shape, shape)?;
    let object = generate_object(&ObjectSpec::new(
        ObjectKind::dense_default(),
        shape,
        config.object_peak,
        config.substream("object"),
    ))?;
    let model = NoiseModel::gaussian(config.sigma2)?;
    let crb = crb_from_fisher(
        &fisher_closed_form(&model, &h, &vectorize(&object))?,
        config.epsilon,
    )?;
    let report = run_trials(
        &model,
        &h,
        &vectorize(&object),
        &EstimatorChoice::Gls {
            epsilon: config.epsilon,
        },
        config.n_trials,
        seed,
        &crb,
    )?;
    Ok(report.median_efficiency())
}

/// Run every check. Numerical failures inside a check are reported as that
/// check failing rather than aborting the run.
pub fn run_checks(config: &ExperimentConfig) -> Result<VerifyReport> {
    let shape = Shape::square(SIZE);
    let models = [
        NoiseModel::gaussian(config.sigma2)?,
        NoiseModel::poisson(config.background)?,
    ];
    let noise_seed = config.substream("noise");
    let v = random_object(config.substream("object"), shape, config.object_peak)?;
    let enough_samples = config.n_samples >= MIN_SAMPLES;
    let mc_tol = format!("< {MC_TOLERANCE:e}");
    let mut checks = Vec::new();

    for (i, kind) in verify_psfs().into_iter().enumerate() {
        let label = kind.label();
        let psf = generate_psf(&PsfSpec::new(kind, shape, config.substream("psf")))?;
        let mut h = SystemMatrix::build(&psf, shape, shape)?;
        if config.inject_negative_entry && i == 0 {
            h.set_entry_unchecked(0, 0, -1.0);
        }
        let name = format!("h_invariants/{label}");
        let valid = match h.validate() {
            Ok(()) => {
                checks.push(Check::new(
                    name,
                    Status::Pass,
                    None,
                    "non-negative, equal column sums",
                ));
                true
            }
            Err(e) => {
                checks.push(Check::errored(name, "non-negative, equal column sums", &e));
                false
            }
        };

        for model in &models {
            for form in ["fisher_mc", "fisher_observed"] {
                let name = format!("{form}/{}/{label}", model_label(model));
                if !valid {
                    checks.push(Check::new(
                        name,
                        Status::SkippedInvalidSystem,
                        None,
                        mc_tol.clone(),
                    ));
                    continue;
                }
                if !enough_samples {
                    checks.push(
                        Check::new(
                            name,
                            Status::SkippedInsufficientSamples,
                            None,
                            mc_tol.clone(),
                        )
                        .with_detail(format!("n_samples {} < {MIN_SAMPLES}", config.n_samples)),
                    );
                    continue;
                }
                let seed = derive_seed(noise_seed, &name);
                let computed = fisher_closed_form(model, &h, &v).and_then(|closed| {
                    let mc = if form == "fisher_mc" {
                        fisher_monte_carlo(model, &h, &v, config.n_samples, seed)?
                    } else {
                        fisher_observed_monte_carlo(model, &h, &v, config.n_samples, seed)?
                    };
                    Ok(mc.relative_error(&closed))
                });
                checks.push(match computed {
                    Ok(err) => Check::below(name, err, MC_TOLERANCE),
                    Err(e) => Check::errored(name, mc_tol.clone(), &e),
                });
            }
        }
    }

    for model in &models {
        let label = model_label(model);
        match fd_checks(model, derive_seed(noise_seed, &format!("fd/{label}"))) {
            Ok((s, hs)) => {
                checks.push(Check::below(
                    format!("score_fd/{label}"),
                    s,
                    SCORE_TOLERANCE,
                ));
                checks.push(Check::below(
                    format!("hessian_fd/{label}"),
                    hs,
                    HESSIAN_TOLERANCE,
                ));
            }
            Err(e) => {
                checks.push(Check::errored(
                    format!("score_fd/{label}"),
                    format!("< {SCORE_TOLERANCE:e}"),
                    &e,
                ));
                checks.push(Check::errored(
                    format!("hessian_fd/{label}"),
                    format!("< {HESSIAN_TOLERANCE:e}"),
                    &e,
                ));
            }
        }
    }

    let (lo, hi) = EFFICIENCY_RANGE;
    let tol = format!("median in [{lo}, {hi}]");
    checks.push(if config.n_trials < MIN_TRIALS {
        Check::new(
            "gls_efficiency",
            Status::SkippedInsufficientSamples,
            None,
            tol,
        )
        .with_detail(format!("n_trials {} < {MIN_TRIALS}", config.n_trials))
    } else {
        match gls_efficiency(config, config.substream("trials")) {
            Ok(m) => {
                let status = if (lo..=hi).contains(&m) {
                    Status::Pass
                } else {
                    Status::Fail
                };
                Check::new("gls_efficiency", status, Some(m), tol)
            }
            Err(e) => Check::errored("gls_efficiency", tol, &e),
        }
    });

    Ok(VerifyReport { checks })
}

/// Run the checks and write `report.csv` plus a manifest into `out`.
pub fn run_verify(config: &ExperimentConfig, out: &Path) -> Result<VerifyReport> {
    let report = run_checks(config)?;
    io::write_file(&out.join("report.csv"), report.to_csv().as_bytes())?;
    let mut manifest = RunManifest::new("verify", config, config.background, true);
    manifest.results =
        serde_json::to_value(&report).map_err(|e| CliError::Config(e.to_string()))?;
    manifest.finalize(out)?;
    Ok(report)
}
