//! Fisher information matrices (closed form and Monte Carlo) and
//! Cramér-Rao bounds extracted from their regularized inverses.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Shape, SystemMatrix, VectorizedObject};
use crate::noise::{gram, score_residual, symmetrize, weighted_gram, NoiseModel, NoiseSampler};
use crate::rng;

/// Samples per Monte Carlo work unit. Fixed so that the reduction order,
/// and hence the result, does not depend on the thread count.
const MC_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    ClosedFormGaussian,
    ClosedFormPoisson,
    /// Mean outer product of sampled scores.
    MonteCarlo {
        n_samples: usize,
    },
    /// Negated mean of sampled log-likelihood Hessians.
    ObservedMonteCarlo {
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub matrix: DMatrix<f64>,
    pub provenance: Provenance,
    pub object_shape: Shape,
}

impl FisherMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest asymmetry and smallest eigenvalue.
    pub fn symmetry_and_min_eigenvalue(&self) -> (f64, f64) {
        let asym = (&self.matrix - self.matrix.transpose()).amax();
        let eig = SymmetricEigen::new(self.matrix.clone());
        (asym, eig.eigenvalues.min())
    }

    /// Symmetric within 1e-10 and eigenvalues ≥ −1e-8.
    pub fn check_invariants(&self) -> Result<()> {
        let (asym, min_eig) = self.symmetry_and_min_eigenvalue();
        if asym > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "Fisher matrix asymmetric by {asym:e}"
            )));
        }
        if min_eig < -1e-8 {
            return Err(Error::InvalidParameter(format!(
                "Fisher matrix has eigenvalue {min_eig:e}"
            )));
        }
        Ok(())
    }

    /// Relative Frobenius distance `‖self − reference‖ / ‖reference‖`.
    pub fn relative_error(&self, reference: &FisherMatrix) -> f64 {
        (&self.matrix - &reference.matrix).norm() / reference.matrix.norm()
    }
}

/// `HᵀH / σ²`; no dependence on the object.
pub fn fisher_gaussian(h: &SystemMatrix, sigma2: f64) -> Result<FisherMatrix> {
    NoiseModel::Gaussian { sigma2 }.validate()?;
    Ok(FisherMatrix {
        matrix: gram(h.matrix()) / sigma2,
        provenance: Provenance::ClosedFormGaussian,
        object_shape: h.object_shape(),
    })
}

/// `Hᵀ diag(1 / (Hv + β)) H`.
pub fn fisher_poisson(
    h: &SystemMatrix,
    v: &VectorizedObject,
    background: f64,
) -> Result<FisherMatrix> {
    let model = NoiseModel::Poisson { background };
    model.validate()?;
    let rate = model.mean(&h.forward(v)?);
    let mut weights = DVector::zeros(rate.len());
    for (pixel, (w, &r)) in weights.iter_mut().zip(rate.iter()).enumerate() {
        if !(r > 0.0) {
            return Err(Error::SingularRate { pixel });
        }
        *w = 1.0 / r;
    }
    Ok(FisherMatrix {
        matrix: weighted_gram(h.matrix(), &weights),
        provenance: Provenance::ClosedFormPoisson,
        object_shape: h.object_shape(),
    })
}

/// Closed-form Fisher information for either noise model.
pub fn fisher_closed_form(
    model: &NoiseModel,
    h: &SystemMatrix,
    v: &VectorizedObject,
) -> Result<FisherMatrix> {
    match *model {
        NoiseModel::Gaussian { sigma2 } => fisher_gaussian(h, sigma2),
        NoiseModel::Poisson { background } => fisher_poisson(h, v, background),
    }
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(MC_CHUNK))
        .map(|c| (c * MC_CHUNK, ((c + 1) * MC_CHUNK).min(n)))
        .collect()
}

fn check_samples(n_samples: usize) -> Result<()> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be ≥ 1".into()));
    }
    Ok(())
}

/// Draws samples `lo..hi` into the columns of a `k × (hi − lo)` matrix.
fn draw_block(sampler: &NoiseSampler, seed: u64, lo: usize, hi: usize) -> DMatrix<f64> {
    let mut ys = DMatrix::zeros(sampler.len(), hi - lo);
    for (i, mut col) in ys.column_iter_mut().enumerate() {
        let mut rng = rng::indexed(seed, (lo + i) as u64);
        sampler.sample_into(&mut rng, col.as_mut_slice());
    }
    ys
}

/// Monte Carlo estimate of the expected score outer product,
/// `(1/n) Σᵢ sᵢsᵢᵀ` with `sᵢ` the score of sample `i` (seeded `seed + i`).
pub fn fisher_monte_carlo(
    model: &NoiseModel,
    h: &SystemMatrix,
    v: &VectorizedObject,
    n_samples: usize,
    seed: u64,
) -> Result<FisherMatrix> {
    check_samples(n_samples)?;
    let b = h.forward(v)?;
    let mean = model.mean(&b);
    let sampler = NoiseSampler::new(model, &b)?;
    let d = h.cols();
    let partials = chunk_ranges(n_samples)
        .into_par_iter()
        .map(|(lo, hi)| -> Result<DMatrix<f64>> {
            let ys = draw_block(&sampler, seed, lo, hi);
            let mut residuals = DMatrix::zeros(ys.nrows(), ys.ncols());
            for (mut r, y) in residuals.column_iter_mut().zip(ys.column_iter()) {
                r.copy_from(&score_residual(model, &mean, &y.into_owned())?);
            }
            let scores = h.matrix().tr_mul(&residuals);
            Ok(&scores * scores.transpose())
        })
        .collect::<Vec<_>>();
    let mut total = DMatrix::zeros(d, d);
    for p in partials {
        total += p?;
    }
    Ok(FisherMatrix {
        matrix: symmetrize(total / n_samples as f64),
        provenance: Provenance::MonteCarlo { n_samples },
        object_shape: h.object_shape(),
    })
}

/// Monte Carlo estimate of `−E[∇² ln p]`. The Hessian is affine in `y`, so
/// the sample mean of `y` is accumulated and the Hessian taken once.
pub fn fisher_observed_monte_carlo(
    model: &NoiseModel,
    h: &SystemMatrix,
    v: &VectorizedObject,
    n_samples: usize,
    seed: u64,
) -> Result<FisherMatrix> {
    check_samples(n_samples)?;
    let matrix = match *model {
        NoiseModel::Gaussian { sigma2 } => gram(h.matrix()) / sigma2,
        NoiseModel::Poisson { .. } => {
            let b = h.forward(v)?;
            let rate = model.mean(&b);
            let sampler = NoiseSampler::new(model, &b)?;
            let sums = chunk_ranges(n_samples)
                .into_par_iter()
                .map(|(lo, hi)| draw_block(&sampler, seed, lo, hi).column_sum())
                .collect::<Vec<_>>();
            let mut y_mean = DVector::zeros(h.rows());
            for s in sums {
                y_mean += s;
            }
            y_mean /= n_samples as f64;
            let mut weights = DVector::zeros(h.rows());
            for (pixel, ((w, &y), &r)) in weights
                .iter_mut()
                .zip(y_mean.iter())
                .zip(rate.iter())
                .enumerate()
            {
                if r > 0.0 {
                    *w = y / (r * r);
                } else if y > 0.0 {
                    return Err(Error::SingularRate { pixel });
                }
            }
            weighted_gram(h.matrix(), &weights)
        }
    };
    Ok(FisherMatrix {
        matrix,
        provenance: Provenance::ObservedMonteCarlo { n_samples },
        object_shape: h.object_shape(),
    })
}

/// Diagonal loading applied before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum EpsilonMode {
    /// `ε = value × max(diag J)`.
    Relative(f64),
    /// `ε = value`.
    Absolute(f64),
}

impl Default for EpsilonMode {
    fn default() -> Self {
        EpsilonMode::Relative(1e-9)
    }
}

impl EpsilonMode {
    pub fn resolve(&self, j: &DMatrix<f64>) -> Result<f64> {
        let eps = match *self {
            EpsilonMode::Relative(r) => r * j.diagonal().max(),
            EpsilonMode::Absolute(a) => a,
        };
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be ≥ 0, got {eps}"
            )));
        }
        Ok(eps)
    }
}

/// Per-pixel lower bounds on unbiased estimator variance (photons²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbMap {
    pub values: Vec<f64>,
    pub epsilon_used: f64,
    pub object_shape: Shape,
}

impl CrbMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.object_shape.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.object_shape.width;
        &self.values[row * w..(row + 1) * w]
    }
}

/// `diag((J + εI)⁻¹)` via a Cholesky factor `LLᵀ`: the `j`-th diagonal
/// entry of the inverse is the squared norm of column `j` of `L⁻¹`.
pub fn crb_from_fisher(j: &FisherMatrix, epsilon: EpsilonMode) -> Result<CrbMap> {
    let d = j.dim();
    let eps = epsilon.resolve(&j.matrix)?;
    let mut loaded = j.matrix.clone();
    for i in 0..d {
        loaded[(i, i)] += eps;
    }
    let fail = || Error::Factorization { epsilon: eps };
    let chol = nalgebra::linalg::Cholesky::new(loaded).ok_or_else(fail)?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(fail)?;
    let values: Vec<f64> = l_inv.column_iter().map(|c| c.norm_squared()).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fail());
    }
    Ok(CrbMap {
        values,
        epsilon_used: eps,
        object_shape: j.object_shape,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbSummary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// Central row (index `⌊height/2⌋`) of the map.
    pub cross_section: Vec<f64>,
}

pub fn crb_summary(map: &CrbMap) -> CrbSummary {
    let n = map.values.len();
    let mut sorted = map.values.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    CrbSummary {
        mean: map.values.iter().sum::<f64>() / n as f64,
        median,
        max: sorted[n - 1],
        cross_section: map.row(map.object_shape.height / 2).to_vec(),
    }
}
