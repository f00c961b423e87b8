//! The two canned studies: CRB maps for every encoder under Gaussian noise
//! (`fig2`) and under Poisson noise for a dense and a sparse object (`fig3`).

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use lensless_core::{NoiseModel, ObjectKind, PsfKind};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, NoiseChoice};
use crate::error::{CliError, Result};
use crate::io;
use crate::manifest::RunManifest;
use crate::pipeline::{run_case, write_case, CaseResult, CaseSpec, StageTimings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyName {
    Fig2,
    Fig3,
}

impl FromStr for StudyName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(StudyName::Fig2),
            "fig3" => Ok(StudyName::Fig3),
            other => Err(CliError::Config(format!(
                "unknown study `{other}` (expected fig2 or fig3)"
            ))),
        }
    }
}

impl std::fmt::Display for StudyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StudyName::Fig2 => "fig2",
            StudyName::Fig3 => "fig3",
        })
    }
}

/// The seven encoders, in order of increasing multiplexing.
pub fn encoders() -> Vec<PsfKind> {
    let mut kinds: Vec<PsfKind> = (1..=5).map(|n| PsfKind::Lenslets { n }).collect();
    kinds.push(PsfKind::rml_default());
    kinds.push(PsfKind::diffuser_default());
    kinds
}

/// Cases of a study. The noise model is fixed by the study; the rest of the
/// settings (sizes, σ², β, ε, seeds) come from `base`.
pub fn study_cases(name: StudyName, base: &ExperimentConfig) -> Result<Vec<CaseSpec>> {
    let (noise, objects) = match name {
        StudyName::Fig2 => (NoiseChoice::Gaussian, vec![base.object]),
        StudyName::Fig3 => (
            NoiseChoice::Poisson,
            vec![ObjectKind::dense_default(), ObjectKind::sparse_default()],
        ),
    };
    let mut cases = Vec::new();
    for object in objects {
        for psf in encoders() {
            let mut config = base.clone();
            config.noise = noise;
            config.object = object;
            config.psf = psf;
            config.validate()?;
            let case_name = match name {
                StudyName::Fig2 => psf.label(),
                StudyName::Fig3 => format!("{}_{}", object.label(), psf.label()),
            };
            cases.push(CaseSpec::from_config(case_name, &config)?);
        }
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub case: String,
    pub object: String,
    pub psf: String,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub multiplexing_index: f64,
    pub epsilon_used: f64,
    pub correlation: Option<f64>,
}

impl SummaryRow {
    fn from_case(case: &CaseResult) -> Self {
        Self {
            case: case.spec.name.clone(),
            object: case.spec.object.kind.label().to_string(),
            psf: case.spec.psf.kind.label(),
            mean: case.summary.mean,
            median: case.summary.median,
            max: case.summary.max,
            multiplexing_index: case.multiplexing_index,
            epsilon_used: case.crb.epsilon_used,
            correlation: case.correlation,
        }
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "case,object,psf,mean_crb,median_crb,max_crb,multiplexing_index,epsilon_used,correlation\n",
    );
    for r in rows {
        let corr = r.correlation.map(|c| format!("{c:?}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{}",
            r.case,
            r.object,
            r.psf,
            r.mean,
            r.median,
            r.max,
            r.multiplexing_index,
            r.epsilon_used,
            corr
        )
        .expect("write to String");
    }
    out
}

pub struct StudyOutcome {
    pub rows: Vec<SummaryRow>,
    pub timings: Vec<(String, StageTimings)>,
}

/// Run every case of the study in parallel, each writing only inside its own
/// subdirectory of `out`, then write the summary table and the manifest.
pub fn run_study(
    name: StudyName,
    base: &ExperimentConfig,
    out: &Path,
    record_timings: bool,
) -> Result<StudyOutcome> {
    let cases = study_cases(name, base)?;
    let results = cases
        .par_iter()
        .map(|spec| -> Result<(CaseResult, f64)> {
            let case = run_case(spec)?;
            let scale = write_case(&out.join(&spec.name), &case)?;
            Ok((case, scale))
        })
        .collect::<Vec<_>>();

    let mut config = base.clone();
    config.noise = match name {
        StudyName::Fig2 => NoiseChoice::Gaussian,
        StudyName::Fig3 => NoiseChoice::Poisson,
    };
    let background = match config.noise_model()? {
        NoiseModel::Poisson { background } => background,
        NoiseModel::Gaussian { .. } => 0.0,
    };
    let mut manifest = RunManifest::new(format!("study {name}"), &config, background, true);
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for result in results {
        let (case, scale) = result?;
        manifest
            .epsilon_used
            .insert(case.spec.name.clone(), case.crb.epsilon_used);
        manifest
            .pgm_scale
            .insert(format!("{}/crb.pgm", case.spec.name), scale);
        rows.push(SummaryRow::from_case(&case));
        timings.push((case.spec.name.clone(), case.timings));
    }
    io::write_file(&out.join("summary.csv"), summary_csv(&rows).as_bytes())?;
    manifest.results = serde_json::to_value(&rows).map_err(|e| CliError::Config(e.to_string()))?;
    if record_timings {
        manifest.timings = Some(
            timings
                .iter()
                .flat_map(|(case, t)| {
                    [
                        (format!("{case}/generate"), t.generate),
                        (format!("{case}/build_h"), t.build_h),
                        (format!("{case}/fisher"), t.fisher),
                        (format!("{case}/invert"), t.invert),
                    ]
                })
                .collect(),
        );
    }
    manifest.finalize(out)?;
    Ok(StudyOutcome { rows, timings })
}
