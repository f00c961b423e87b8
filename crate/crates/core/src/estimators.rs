//! Reference decoders used to probe the bounds empirically, and a seeded
//! Monte Carlo trial runner.

use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{CrbMap, EpsilonMode};
use crate::imaging::{SystemMatrix, VectorizedObject};
use crate::noise::{gram, log_likelihood_at_mean, Measurement, NoiseModel, NoiseSampler};
use crate::rng;

const TRIAL_CHUNK: usize = 64;

/// Unconstrained least squares through the regularized normal equations,
/// `(HᵀH + εI) v = Hᵀy`. Factor once, solve per measurement.
pub struct GlsSolver {
    chol: Cholesky<f64, Dyn>,
    epsilon_used: f64,
}

impl GlsSolver {
    pub fn new(h: &SystemMatrix, epsilon: EpsilonMode) -> Result<Self> {
        let mut normal = gram(h.matrix());
        let eps = epsilon.resolve(&normal)?;
        for i in 0..normal.nrows() {
            normal[(i, i)] += eps;
        }
        let chol = Cholesky::new(normal).ok_or(Error::Factorization { epsilon: eps })?;
        Ok(Self {
            chol,
            epsilon_used: eps,
        })
    }

    pub fn epsilon_used(&self) -> f64 {
        self.epsilon_used
    }

    pub fn solve(&self, h: &SystemMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.chol.solve(&h.adjoint(y)?))
    }
}

/// Least-squares estimate without the non-negativity constraint; entries
/// may be negative. `sigma2` only scales the objective, not the solution.
pub fn gls_estimate(
    h: &SystemMatrix,
    sigma2: f64,
    y: &Measurement,
    epsilon: EpsilonMode,
) -> Result<DVector<f64>> {
    NoiseModel::Gaussian { sigma2 }.validate()?;
    GlsSolver::new(h, epsilon)?.solve(h, y.values())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnlsOptions {
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub estimate: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final objective: `‖y − Hv‖²` for NNLS, the log-likelihood for the
    /// Poisson MLE.
    pub objective: f64,
    /// `(iteration, objective)` pairs when tracing is enabled.
    pub trace: Vec<(usize, f64)>,
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn largest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let mx = m * &x;
        let next = x.dot(&mx) / x.dot(&x);
        let norm = mx.norm();
        if norm == 0.0 {
            return 0.0;
        }
        x = mx / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Projected gradient descent on `‖y − Hv‖²` over `v ≥ 0`.
pub struct NnlsSolver {
    gram: DMatrix<f64>,
    lipschitz: f64,
    options: NnlsOptions,
}

impl NnlsSolver {
    pub fn new(h: &SystemMatrix, options: NnlsOptions) -> Result<Self> {
        Self::from_matrix(h.matrix(), options)
    }

    pub fn from_matrix(h: &DMatrix<f64>, options: NnlsOptions) -> Result<Self> {
        if options.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be ≥ 1".into()));
        }
        let gram = gram(h);
        let lipschitz = largest_eigenvalue(&gram);
        if !(lipschitz > 0.0) {
            return Err(Error::InvalidParameter("system matrix is zero".into()));
        }
        Ok(Self {
            gram,
            lipschitz,
            options,
        })
    }

    pub fn solve(&self, h: &DMatrix<f64>, y: &DVector<f64>) -> SolverResult {
        let hty = h.tr_mul(y);
        let yty = y.norm_squared();
        let objective =
            |v: &DVector<f64>| (v.dot(&(&self.gram * v)) - 2.0 * v.dot(&hty) + yty).max(0.0);
        let step = 1.0 / self.lipschitz;
        let mut v = DVector::zeros(hty.len());
        let mut f = objective(&v);
        let (mut best, mut best_f) = (v.clone(), f);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < self.options.max_iters {
            iterations += 1;
            let grad = &self.gram * &v - &hty;
            v -= grad * step;
            v.apply(|x| *x = x.max(0.0));
            let f_next = objective(&v);
            if f_next <= best_f {
                best.copy_from(&v);
                best_f = f_next;
            }
            let decrease = (f - f_next) / f.max(f64::MIN_POSITIVE);
            f = f_next;
            if decrease < self.options.tol {
                converged = true;
                break;
            }
        }
        SolverResult {
            estimate: best,
            iterations,
            converged,
            objective: best_f,
            trace: Vec::new(),
        }
    }
}

/// Non-negative least squares via projected gradient with step `1/L`.
pub fn nnls_estimate(
    h: &SystemMatrix,
    y: &Measurement,
    options: NnlsOptions,
) -> Result<SolverResult> {
    h.check_rows(y.len())?;
    Ok(NnlsSolver::new(h, options)?.solve(h.matrix(), y.values()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonMleOptions {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood change falls below this.
    pub tol: f64,
    /// Record the log-likelihood every this many iterations.
    pub trace_every: Option<usize>,
}

impl Default for PoissonMleOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: 1e-10,
            trace_every: None,
        }
    }
}

/// Richardson–Lucy iterations maximizing the Poisson likelihood.
pub struct PoissonMleSolver {
    column_sums: DVector<f64>,
    background: f64,
    options: PoissonMleOptions,
}

impl PoissonMleSolver {
    pub fn new(h: &SystemMatrix, background: f64, options: PoissonMleOptions) -> Result<Self> {
        NoiseModel::Poisson { background }.validate()?;
        if options.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be ≥ 1".into()));
        }
        let column_sums = DVector::from_vec(h.column_sums());
        if let Some(j) = column_sums.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "column {j} of H sums to zero"
            )));
        }
        Ok(Self {
            column_sums,
            background,
            options,
        })
    }

    pub fn solve(&self, h: &SystemMatrix, y: &Measurement) -> Result<SolverResult> {
        h.check_rows(y.len())?;
        let model = NoiseModel::Poisson {
            background: self.background,
        };
        let counts = y.values();
        let start = counts.sum().max(1e-12) / self.column_sums.sum();
        let mut v = DVector::from_element(h.cols(), start);
        let loglik = |rate: &DVector<f64>| log_likelihood_at_mean(&model, rate, y).value();
        let mut rate = h.matrix() * &v;
        rate.add_scalar_mut(self.background);
        let mut ll = loglik(&rate);
        let mut trace = Vec::new();
        if self.options.trace_every.is_some() {
            trace.push((0, ll));
        }
        let mut converged = false;
        let mut iterations = 0;
        let mut ratio = DVector::zeros(counts.len());
        while iterations < self.options.max_iters {
            iterations += 1;
            for (pixel, (r, (&yl, &bl))) in ratio
                .iter_mut()
                .zip(counts.iter().zip(rate.iter()))
                .enumerate()
            {
                *r = if bl > 0.0 {
                    yl / bl
                } else if yl > 0.0 {
                    return Err(Error::SingularRate { pixel });
                } else {
                    0.0
                };
            }
            let back = h.matrix().tr_mul(&ratio);
            v.component_mul_assign(&back);
            v.component_div_assign(&self.column_sums);
            rate = h.matrix() * &v;
            rate.add_scalar_mut(self.background);
            let next = loglik(&rate);
            if let Some(every) = self.options.trace_every {
                if iterations % every == 0 {
                    trace.push((iterations, next));
                }
            }
            let change = (next - ll).abs() / ll.abs().max(1.0);
            ll = next;
            if change < self.options.tol {
                converged = true;
                break;
            }
        }
        Ok(SolverResult {
            estimate: v,
            iterations,
            converged,
            objective: ll,
            trace,
        })
    }
}

/// Poisson maximum-likelihood estimate (Richardson–Lucy).
pub fn poisson_mle(
    h: &SystemMatrix,
    y: &Measurement,
    background: f64,
    options: PoissonMleOptions,
) -> Result<SolverResult> {
    PoissonMleSolver::new(h, background, options)?.solve(h, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EstimatorChoice {
    Gls { epsilon: EpsilonMode },
    Nnls(NnlsOptions),
    PoissonMle(PoissonMleOptions),
}

enum Prepared {
    Gls(GlsSolver),
    Nnls(NnlsSolver),
    Mle(PoissonMleSolver),
}

impl Prepared {
    fn new(choice: &EstimatorChoice, model: &NoiseModel, h: &SystemMatrix) -> Result<Self> {
        Ok(match *choice {
            EstimatorChoice::Gls { epsilon } => Prepared::Gls(GlsSolver::new(h, epsilon)?),
            EstimatorChoice::Nnls(o) => Prepared::Nnls(NnlsSolver::new(h, o)?),
            EstimatorChoice::PoissonMle(o) => {
                let background = match *model {
                    NoiseModel::Poisson { background } => background,
                    NoiseModel::Gaussian { .. } => 0.0,
                };
                Prepared::Mle(PoissonMleSolver::new(h, background, o)?)
            }
        })
    }

    fn estimate(&self, h: &SystemMatrix, y: &Measurement) -> Result<DVector<f64>> {
        match self {
            Prepared::Gls(s) => s.solve(h, y.values()),
            Prepared::Nnls(s) => Ok(s.solve(h.matrix(), y.values()).estimate),
            Prepared::Mle(s) => Ok(s.solve(h, y)?.estimate),
        }
    }
}

/// Streaming per-pixel mean and sum of squared deviations.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            m2: DVector::zeros(d),
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = x - &self.mean;
        self.m2 += delta.component_mul(&delta2);
    }

    fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean += &delta * (nb / n);
        self.m2 += &other.m2 + delta.component_mul(&delta) * (na * nb / n);
        self.n += other.n;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    /// Trials that produced an estimate.
    pub n_trials: usize,
    pub n_failed: usize,
    pub per_pixel_mean: Vec<f64>,
    pub per_pixel_variance: Vec<f64>,
    pub per_pixel_bias: Vec<f64>,
    pub crb: CrbMap,
    /// Empirical variance divided by the bound, per pixel.
    pub efficiency: Vec<f64>,
}

impl TrialReport {
    /// Standard error of the per-pixel mean.
    pub fn standard_error(&self) -> Vec<f64> {
        self.per_pixel_variance
            .iter()
            .map(|v| (v / self.n_trials as f64).sqrt())
            .collect()
    }

    pub fn median_efficiency(&self) -> f64 {
        let mut e = self.efficiency.clone();
        e.sort_by(f64::total_cmp);
        let n = e.len();
        if n % 2 == 1 {
            e[n / 2]
        } else {
            0.5 * (e[n / 2 - 1] + e[n / 2])
        }
    }
}

/// Sample `n_trials` measurements of `v_true` (trial `i` seeded `seed + i`),
/// decode each, and compare the per-pixel spread with `crb`. Failed decodes
/// are excluded while they stay under 1% of trials.
pub fn run_trials(
    model: &NoiseModel,
    h: &SystemMatrix,
    v_true: &VectorizedObject,
    estimator: &EstimatorChoice,
    n_trials: usize,
    seed: u64,
    crb: &CrbMap,
) -> Result<TrialReport> {
    if n_trials < 2 {
        return Err(Error::InvalidParameter("n_trials must be ≥ 2".into()));
    }
    let d = h.cols();
    if crb.values.len() != d {
        return Err(Error::Dimension(format!(
            "CRB map has {} pixels, object has {d}",
            crb.values.len()
        )));
    }
    let sampler = NoiseSampler::new(model, &h.forward(v_true)?)?;
    let prepared = Prepared::new(estimator, model, h)?;
    let chunks: Vec<(usize, usize)> = (0..n_trials.div_ceil(TRIAL_CHUNK))
        .map(|c| (c * TRIAL_CHUNK, ((c + 1) * TRIAL_CHUNK).min(n_trials)))
        .collect();
    let partials: Vec<(Welford, usize, Option<Error>)> = chunks
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = Welford::new(d);
            let mut failed = 0;
            let mut last = None;
            for i in lo..hi {
                let y = sampler.sample(&mut rng::indexed(seed, i as u64));
                match prepared.estimate(h, &y) {
                    Ok(est) => acc.push(&est),
                    Err(e) => {
                        failed += 1;
                        last = Some(e);
                    }
                }
            }
            (acc, failed, last)
        })
        .collect();
    let mut total = Welford::new(d);
    let mut n_failed = 0;
    let mut last_error = None;
    for (acc, failed, last) in &partials {
        total.merge(acc);
        n_failed += failed;
        if last.is_some() {
            last_error = last.clone();
        }
    }
    if n_failed * 100 >= n_trials || total.n < 2 {
        return Err(Error::TrialFailures {
            failed: n_failed,
            total: n_trials,
            last: last_error.map_or_else(|| "too few successful trials".into(), |e| e.to_string()),
        });
    }
    let variance: Vec<f64> = total.m2.iter().map(|m| m / (total.n - 1) as f64).collect();
    let bias = (&total.mean - v_true.values()).as_slice().to_vec();
    let efficiency = variance
        .iter()
        .zip(&crb.values)
        .map(|(v, c)| v / c)
        .collect();
    Ok(TrialReport {
        n_trials: total.n,
        n_failed,
        per_pixel_mean: total.mean.as_slice().to_vec(),
        per_pixel_variance: variance,
        per_pixel_bias: bias,
        crb: crb.clone(),
        efficiency,
    })
}
