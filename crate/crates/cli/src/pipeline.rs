//! The object → system matrix → Fisher → CRB pipeline for one case, and the
//! files each case writes.

use std::path::Path;
use std::time::Instant;

use lensless_core::fisher::fisher_closed_form;
use lensless_core::{
    crb_from_fisher, crb_summary, generate_object, generate_psf, multiplexing_index, vectorize,
    CrbMap, CrbSummary, EpsilonMode, ImageGrid, NoiseModel, ObjectSpec, PsfSpec, Shape,
    SystemMatrix,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io;

/// Everything needed to compute one CRB map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSpec {
    pub name: String,
    pub psf: PsfSpec,
    pub pad: Shape,
    pub object: ObjectSpec,
    pub noise: NoiseModel,
    pub epsilon: EpsilonMode,
    #[serde(skip)]
    pub inject_negative_entry: bool,
}

impl CaseSpec {
    pub fn from_config(name: impl Into<String>, config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            psf: config.psf_spec(),
            pad: config.pad_shape(),
            object: config.object_spec(),
            noise: config.noise_model()?,
            epsilon: config.epsilon,
            inject_negative_entry: config.inject_negative_entry,
        })
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub generate: f64,
    pub build_h: f64,
    pub fisher: f64,
    pub invert: f64,
}

impl StageTimings {
    /// The CRB pipeline proper: build `H`, form the Fisher matrix, invert.
    pub fn pipeline(&self) -> f64 {
        self.build_h + self.fisher + self.invert
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub spec: CaseSpec,
    pub psf: ImageGrid,
    pub object: ImageGrid,
    pub measurement_shape: Shape,
    pub crb: CrbMap,
    pub summary: CrbSummary,
    pub multiplexing_index: f64,
    /// Pearson correlation between the CRB map and the object; `None` when
    /// either is constant.
    pub correlation: Option<f64>,
    pub timings: StageTimings,
}

/// Pearson correlation coefficient; `None` for mismatched or constant inputs.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

pub fn build_system(spec: &CaseSpec, psf: &ImageGrid) -> Result<SystemMatrix> {
    let mut h =
        SystemMatrix::build(psf, spec.object.size, spec.pad)?.with_psf_id(spec.psf.kind.label());
    if spec.inject_negative_entry {
        h.set_entry_unchecked(0, 0, -1.0);
    }
    h.validate()?;
    Ok(h)
}

pub fn run_case(spec: &CaseSpec) -> Result<CaseResult> {
    spec.noise.validate()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let psf = generate_psf(&spec.psf)?;
    let object = generate_object(&spec.object)?;
    timings.generate = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let h = build_system(spec, &psf)?;
    timings.build_h = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let j = fisher_closed_form(&spec.noise, &h, &vectorize(&object))?;
    timings.fisher = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let crb = crb_from_fisher(&j, spec.epsilon)?;
    timings.invert = t.elapsed().as_secs_f64();

    Ok(CaseResult {
        spec: spec.clone(),
        measurement_shape: h.measurement_shape(),
        summary: crb_summary(&crb),
        multiplexing_index: multiplexing_index(&psf)?,
        correlation: pearson(&crb.values, object.values()),
        crb,
        psf,
        object,
        timings,
    })
}

/// Write a case's maps into `dir`; returns the CRB preview's intensity per
/// grey level.
pub fn write_case(dir: &Path, case: &CaseResult) -> Result<f64> {
    let shape = case.crb.object_shape;
    io::write_grid_csv(&dir.join("crb.csv"), shape, &case.crb.values)?;
    let scale = io::write_pgm(&dir.join("crb.pgm"), shape, &case.crb.values)?;
    io::write_file(
        &dir.join("cross_section.csv"),
        io::cross_section_csv(&case.summary.cross_section).as_bytes(),
    )?;
    io::write_grid_csv(&dir.join("psf.csv"), case.psf.shape(), case.psf.values())?;
    io::write_grid_csv(
        &dir.join("object.csv"),
        case.object.shape(),
        case.object.values(),
    )?;
    Ok(scale)
}
