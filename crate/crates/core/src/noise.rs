//! Detection noise: samplers, log-likelihoods, score vectors and Hessians
//! for i.i.d. Gaussian read noise and Poisson shot noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::imaging::{SystemMatrix, VectorizedObject};
use crate::rng;

/// Default Poisson background floor, in photons per measurement pixel.
pub const DEFAULT_BACKGROUND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Additive i.i.d. normal noise with per-pixel variance `sigma2`.
    Gaussian { sigma2: f64 },
    /// Photon counting with rate `Hv + background`.
    Poisson { background: f64 },
}

impl NoiseModel {
    pub fn gaussian(sigma2: f64) -> Result<Self> {
        let m = NoiseModel::Gaussian { sigma2 };
        m.validate()?;
        Ok(m)
    }

    pub fn poisson(background: f64) -> Result<Self> {
        let m = NoiseModel::Poisson { background };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma2 } if !(sigma2 > 0.0 && sigma2.is_finite()) => Err(
                Error::InvalidParameter(format!("Gaussian variance must be > 0, got {sigma2}")),
            ),
            NoiseModel::Poisson { background }
                if !(background >= 0.0 && background.is_finite()) =>
            {
                Err(Error::InvalidParameter(format!(
                    "Poisson background must be ≥ 0, got {background}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Mean of the measurement given the noiseless image `b`.
    pub fn mean(&self, b: &DVector<f64>) -> DVector<f64> {
        match *self {
            NoiseModel::Gaussian { .. } => b.clone(),
            NoiseModel::Poisson { background } => b.add_scalar(background),
        }
    }
}

/// A noisy measurement `y`. Gaussian entries may be negative; Poisson
/// entries are non-negative integers stored as reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement(pub DVector<f64>);

impl Measurement {
    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<DVector<f64>> for Measurement {
    fn from(v: DVector<f64>) -> Self {
        Measurement(v)
    }
}

enum PixelDist {
    Zero,
    Poisson(Poisson<f64>),
}

/// Per-pixel sampling distributions, built once for a fixed noiseless
/// image and reused across many draws.
pub struct NoiseSampler {
    mean: DVector<f64>,
    kind: SamplerKind,
}

enum SamplerKind {
    Gaussian(Normal<f64>),
    Poisson(Vec<PixelDist>),
}

impl NoiseSampler {
    pub fn new(model: &NoiseModel, b: &DVector<f64>) -> Result<Self> {
        model.validate()?;
        if let Some(index) = b.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::NegativeValue {
                index,
                value: b[index],
            });
        }
        let mean = model.mean(b);
        let kind = match *model {
            NoiseModel::Gaussian { sigma2 } => SamplerKind::Gaussian(
                Normal::new(0.0, sigma2.sqrt())
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?,
            ),
            NoiseModel::Poisson { .. } => SamplerKind::Poisson(
                mean.iter()
                    .map(|&rate| {
                        if rate > 0.0 {
                            Poisson::new(rate)
                                .map(PixelDist::Poisson)
                                .map_err(|e| Error::InvalidParameter(e.to_string()))
                        } else {
                            Ok(PixelDist::Zero)
                        }
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self { mean, kind })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Fill `out` with one draw.
    pub fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.kind {
            SamplerKind::Gaussian(normal) => {
                for (o, m) in out.iter_mut().zip(self.mean.iter()) {
                    *o = m + normal.sample(rng);
                }
            }
            SamplerKind::Poisson(dists) => {
                for (o, d) in out.iter_mut().zip(dists) {
                    *o = match d {
                        PixelDist::Zero => 0.0,
                        PixelDist::Poisson(p) => p.sample(rng),
                    };
                }
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Measurement {
        let mut out = vec![0.0; self.len()];
        self.sample_into(rng, &mut out);
        Measurement(DVector::from_vec(out))
    }
}

/// Draw one noisy measurement of the noiseless image `b`, deterministically
/// for a given seed.
pub fn sample(model: &NoiseModel, b: &DVector<f64>, seed: u64) -> Result<Measurement> {
    let sampler = NoiseSampler::new(model, b)?;
    Ok(sampler.sample(&mut rng::indexed(seed, 0)))
}

/// Value of a log-likelihood; a Poisson observation with zero rate but a
/// positive count has likelihood zero, reported explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogLikelihood {
    Finite(f64),
    NegativeInfinity { pixel: usize },
}

impl LogLikelihood {
    pub fn value(&self) -> f64 {
        match self {
            LogLikelihood::Finite(v) => *v,
            LogLikelihood::NegativeInfinity { .. } => f64::NEG_INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, LogLikelihood::Finite(_))
    }
}

fn check_inputs(model: &NoiseModel, h: &SystemMatrix, y: &Measurement) -> Result<()> {
    model.validate()?;
    h.check_rows(y.len())?;
    if let NoiseModel::Poisson { .. } = model {
        if let Some(index) = y.0.iter().position(|v| !(*v >= 0.0) || v.fract() != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Poisson counts must be non-negative integers, got {} at pixel {index}",
                y.0[index]
            )));
        }
    }
    Ok(())
}

/// Log-likelihood of `y` given the object `v`, Poisson rate `b_ℓ = (Hv)_ℓ + β`.
pub fn log_likelihood(
    model: &NoiseModel,
    h: &SystemMatrix,
    v: &VectorizedObject,
    y: &Measurement,
) -> Result<LogLikelihood> {
    check_inputs(model, h, y)?;
    let b = h.forward(v)?;
    Ok(log_likelihood_at_mean(model, &model.mean(&b), y))
}

/// Log-likelihood given the measurement mean directly (the Poisson rate
/// with background already added).
pub fn log_likelihood_at_mean(
    model: &NoiseModel,
    mean: &DVector<f64>,
    y: &Measurement,
) -> LogLikelihood {
    match *model {
        NoiseModel::Gaussian { sigma2 } => {
            let k = y.len() as f64;
            let rss = (&y.0 - mean).norm_squared();
            LogLikelihood::Finite(
                -0.5 * rss / sigma2 - 0.5 * k * (2.0 * std::f64::consts::PI * sigma2).ln(),
            )
        }
        NoiseModel::Poisson { .. } => {
            let mut total = 0.0;
            for (pixel, (&yl, &bl)) in y.0.iter().zip(mean.iter()).enumerate() {
                if bl <= 0.0 {
                    if yl > 0.0 {
                        return LogLikelihood::NegativeInfinity { pixel };
                    }
                    continue;
                }
                let log_rate_term = if yl > 0.0 { yl * bl.ln() } else { 0.0 };
                total += log_rate_term - bl - ln_gamma(yl + 1.0);
            }
            LogLikelihood::Finite(total)
        }
    }
}

/// Poisson ratio `y ⊘ rate`, with `0/0` taken as 0 and `y/0` an error.
fn poisson_ratio(y: &DVector<f64>, rate: &DVector<f64>, power: i32) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(y.len());
    for (pixel, ((o, &yl), &bl)) in out.iter_mut().zip(y.iter()).zip(rate.iter()).enumerate() {
        if bl > 0.0 {
            *o = yl / bl.powi(power);
        } else if yl > 0.0 {
            return Err(Error::SingularRate { pixel });
        }
    }
    Ok(out)
}

/// Residual whose adjoint image is the score: `Σ⁻¹(y − Hv)` (Gaussian) or
/// `y ⊘ (Hv+β) − 1` (Poisson).
pub(crate) fn score_residual(
    model: &NoiseModel,
    mean: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    match *model {
        NoiseModel::Gaussian { sigma2 } => Ok((y - mean) / sigma2),
        NoiseModel::Poisson { .. } => Ok(poisson_ratio(y, mean, 1)?.add_scalar(-1.0)),
    }
}

/// Gradient of the log-likelihood with respect to the object intensities.
pub fn score(
    model: &NoiseModel,
    h: &SystemMatrix,
    v: &VectorizedObject,
    y: &Measurement,
) -> Result<DVector<f64>> {
    check_inputs(model, h, y)?;
    let mean = model.mean(&h.forward(v)?);
    h.adjoint(&score_residual(model, &mean, &y.0)?)
}

/// Hessian of the log-likelihood: `−HᵀH/σ²` or `−Hᵀ diag(y ⊘ (Hv+β)²) H`.
pub fn hessian_log_likelihood(
    model: &NoiseModel,
    h: &SystemMatrix,
    v: &VectorizedObject,
    y: &Measurement,
) -> Result<DMatrix<f64>> {
    check_inputs(model, h, y)?;
    let mean = model.mean(&h.forward(v)?);
    Ok(match *model {
        NoiseModel::Gaussian { sigma2 } => -gram(h.matrix()) / sigma2,
        NoiseModel::Poisson { .. } => -weighted_gram(h.matrix(), &poisson_ratio(&y.0, &mean, 2)?),
    })
}

/// `HᵀH`, symmetrized.
pub(crate) fn gram(h: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(h.transpose() * h)
}

/// `Hᵀ diag(w) H` for non-negative weights, symmetrized.
pub(crate) fn weighted_gram(h: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = h.clone();
    for (mut row, w) in scaled.row_iter_mut().zip(weights.iter()) {
        row *= w.sqrt();
    }
    gram(&scaled)
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
