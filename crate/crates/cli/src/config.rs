//! Experiment configuration: a flat `key = value` file overlaid with
//! command-line overrides, resolved into a typed [`ExperimentConfig`].
//!
//! Keys are case-insensitive and `-`/`_` are interchangeable, so the file
//! keys mirror the command-line flags (`--epsilon-rel` ↔ `epsilon_rel`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lensless_core::noise::DEFAULT_BACKGROUND;
use lensless_core::rng::derive_seed;
use lensless_core::{EpsilonMode, NoiseModel, ObjectKind, ObjectSpec, PsfKind, PsfSpec, Shape};
use serde::Serialize;

use crate::error::{CliError, Result};

/// Every key the configuration understands.
pub const KEYS: &[&str] = &[
    "noise",
    "sigma2",
    "background",
    "epsilon_rel",
    "epsilon_abs",
    "seed",
    "out",
    "n_samples",
    "n_trials",
    "object",
    "object_size",
    "object_n",
    "object_peak",
    "object_radius_min",
    "object_radius_max",
    "psf",
    "psf_size",
    "psf_pad",
    "psf_n",
    "psf_width_min",
    "psf_width_max",
    "psf_correlation_length",
    "psf_contrast",
    "inject_negative_entry",
];

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_OBJECT_SIZE: usize = 32;
pub const DEFAULT_PSF_SIZE: usize = 32;
pub const DEFAULT_PEAK: f64 = 100.0;
pub const DEFAULT_N_SAMPLES: usize = 200_000;
pub const DEFAULT_N_TRIALS: usize = 10_000;

fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

/// Raw key/value settings before interpretation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse `key = value` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut settings = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            settings.set(key, value.trim())?;
        }
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Set a key, rejecting unknown names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key, value.trim().to_string());
        Ok(())
    }

    /// Parse a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k, v)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize_key(key)).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|raw| {
                raw.parse::<T>()
                    .map_err(|e| CliError::Config(format!("`{key}`: cannot parse `{raw}`: {e}")))
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseChoice {
    Gaussian,
    Poisson,
}

/// Fully resolved experiment settings. The output directory is not part of
/// the serialized echo so manifests do not depend on where a run was written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub noise: NoiseChoice,
    pub sigma2: f64,
    pub background: f64,
    pub epsilon: EpsilonMode,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    pub n_samples: usize,
    pub n_trials: usize,
    pub object: ObjectKind,
    pub object_size: usize,
    pub object_peak: f64,
    pub psf: PsfKind,
    pub psf_size: usize,
    pub psf_pad: usize,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub inject_negative_entry: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_settings(&Settings::new()).expect("defaults are valid")
    }
}

impl ExperimentConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let noise = match s.get("noise").unwrap_or("gaussian") {
            "gaussian" => NoiseChoice::Gaussian,
            "poisson" => NoiseChoice::Poisson,
            other => return Err(CliError::Config(format!("unknown noise model `{other}`"))),
        };
        let epsilon = match (
            s.parsed::<f64>("epsilon_rel")?,
            s.parsed::<f64>("epsilon_abs")?,
        ) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "set only one of epsilon_rel and epsilon_abs".into(),
                ));
            }
            (Some(r), None) => EpsilonMode::Relative(r),
            (None, Some(a)) => EpsilonMode::Absolute(a),
            (None, None) => EpsilonMode::default(),
        };
        let object = match s.get("object").unwrap_or("dense") {
            "dense" => {
                let ObjectKind::DenseCells {
                    n_blobs,
                    radius_min,
                    radius_max,
                } = ObjectKind::dense_default()
                else {
                    unreachable!()
                };
                ObjectKind::DenseCells {
                    n_blobs: s.or("object_n", n_blobs)?,
                    radius_min: s.or("object_radius_min", radius_min)?,
                    radius_max: s.or("object_radius_max", radius_max)?,
                }
            }
            "sparse" => ObjectKind::SparseBeads {
                n_beads: s.or("object_n", 10)?,
            },
            other => return Err(CliError::Config(format!("unknown object kind `{other}`"))),
        };
        let psf = match s.get("psf").unwrap_or("lenslets") {
            "delta" => PsfKind::Delta,
            "lenslets" => PsfKind::Lenslets {
                n: s.or("psf_n", 1)?,
            },
            "rml" => {
                let PsfKind::Rml {
                    n_spots,
                    width_min,
                    width_max,
                } = PsfKind::rml_default()
                else {
                    unreachable!()
                };
                PsfKind::Rml {
                    n_spots: s.or("psf_n", n_spots)?,
                    width_min: s.or("psf_width_min", width_min)?,
                    width_max: s.or("psf_width_max", width_max)?,
                }
            }
            "diffuser" => {
                let PsfKind::Diffuser {
                    correlation_length,
                    contrast,
                } = PsfKind::diffuser_default()
                else {
                    unreachable!()
                };
                PsfKind::Diffuser {
                    correlation_length: s.or("psf_correlation_length", correlation_length)?,
                    contrast: s.or("psf_contrast", contrast)?,
                }
            }
            other => return Err(CliError::Config(format!("unknown PSF kind `{other}`"))),
        };
        let psf_size = s.or("psf_size", DEFAULT_PSF_SIZE)?;
        let config = Self {
            noise,
            sigma2: s.or("sigma2", 1.0)?,
            background: s.or("background", DEFAULT_BACKGROUND)?,
            epsilon,
            seed: s.or("seed", DEFAULT_SEED)?,
            out: PathBuf::from(s.get("out").unwrap_or("out")),
            n_samples: s.or("n_samples", DEFAULT_N_SAMPLES)?,
            n_trials: s.or("n_trials", DEFAULT_N_TRIALS)?,
            object,
            object_size: s.or("object_size", DEFAULT_OBJECT_SIZE)?,
            object_peak: s.or("object_peak", DEFAULT_PEAK)?,
            psf,
            psf_size,
            // One pixel of zero padding on every side: 32 → 34.
            psf_pad: s.or("psf_pad", psf_size + 2)?,
            inject_negative_entry: s.or("inject_negative_entry", false)?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Check every derived spec against its own invariants.
    pub fn validate(&self) -> Result<()> {
        self.noise_model()?;
        self.psf_spec().validate()?;
        self.object_spec().validate()?;
        if self.psf_pad < self.psf_size {
            return Err(CliError::Config(format!(
                "psf_pad ({}) must be at least psf_size ({})",
                self.psf_pad, self.psf_size
            )));
        }
        let (EpsilonMode::Relative(v) | EpsilonMode::Absolute(v)) = self.epsilon;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::Config(format!(
                "epsilon must be finite and ≥ 0, got {v}"
            )));
        }
        Ok(())
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        Ok(match self.noise {
            NoiseChoice::Gaussian => NoiseModel::gaussian(self.sigma2)?,
            NoiseChoice::Poisson => NoiseModel::poisson(self.background)?,
        })
    }

    /// Seed of a named substream of the master seed.
    pub fn substream(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn psf_spec(&self) -> PsfSpec {
        PsfSpec::new(
            self.psf,
            Shape::square(self.psf_size),
            self.substream("psf"),
        )
    }

    pub fn pad_shape(&self) -> Shape {
        Shape::square(self.psf_pad)
    }

    pub fn object_spec(&self) -> ObjectSpec {
        ObjectSpec::new(
            self.object,
            Shape::square(self.object_size),
            self.object_peak,
            self.substream("object"),
        )
    }
}
