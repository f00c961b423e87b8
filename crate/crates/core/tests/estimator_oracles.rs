//! Reference decoders checked against brute-force optima and against the
//! Cramér-Rao bound.

use lensless_core::estimators::{
    nnls_estimate, poisson_mle, run_trials, EstimatorChoice, NnlsOptions, NnlsSolver,
    PoissonMleOptions,
};
use lensless_core::fisher::{crb_from_fisher, fisher_gaussian, fisher_poisson, EpsilonMode};
use lensless_core::imaging::{vectorize, ImageGrid, Shape, SystemMatrix, VectorizedObject};
use lensless_core::noise::{log_likelihood, sample, Measurement, NoiseModel};
use lensless_core::objects::{generate_object, ObjectKind, ObjectSpec};
use lensless_core::psf::{generate_psf, PsfKind, PsfSpec};
use lensless_core::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn objective(h: &DMatrix<f64>, y: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (y - h * v).norm_squared()
}

/// Exact NNLS by enumerating every support set.
fn exhaustive_nnls(h: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64) {
    let d = h.ncols();
    let mut best = (DVector::zeros(d), y.norm_squared());
    for mask in 1u32..(1 << d) {
        let cols: Vec<usize> = (0..d).filter(|j| mask & (1 << j) != 0).collect();
        let sub = h.select_columns(&cols);
        let Some(sol) = sub.clone().svd(true, true).solve(y, 1e-14).ok() else {
            continue;
        };
        if sol.iter().any(|&x| x < 0.0) {
            continue;
        }
        let mut v = DVector::zeros(d);
        for (i, &j) in cols.iter().enumerate() {
            v[j] = sol[i];
        }
        let f = objective(h, y, &v);
        if f < best.1 {
            best = (v, f);
        }
    }
    best
}

/// Lawson–Hanson active-set NNLS.
fn lawson_hanson(h: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let d = h.ncols();
    let mut passive = vec![false; d];
    let mut x = DVector::zeros(d);
    for _ in 0..(3 * d) {
        let w = h.tr_mul(&(y - h * &x));
        let candidate = (0..d)
            .filter(|&j| !passive[j] && w[j] > 1e-12)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let cols: Vec<usize> = (0..d).filter(|&j| passive[j]).collect();
            let sol = h
                .select_columns(&cols)
                .svd(true, true)
                .solve(y, 1e-14)
                .unwrap();
            let mut z = DVector::zeros(d);
            for (i, &j) in cols.iter().enumerate() {
                z[j] = sol[i];
            }
            if cols.iter().all(|&j| z[j] > 0.0) {
                x = z;
                break;
            }
            let alpha = cols
                .iter()
                .filter(|&&j| z[j] <= 0.0)
                .map(|&j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x = &x + (&z - &x) * alpha;
            for &j in &cols {
                if x[j] <= 1e-14 {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}

#[test]
fn projected_gradient_matches_exhaustive_search() {
    for seed in 0..5 {
        let mut r = rng::stream(seed, "nnls");
        let h = DMatrix::from_fn(10, 6, |_, _| r.random_range(0.0..1.0));
        let y = DVector::from_fn(10, |_, _| r.random_range(-1.0..2.0));
        let (exact, f_exact) = exhaustive_nnls(&h, &y);
        let solver = NnlsSolver::from_matrix(
            &h,
            NnlsOptions {
                max_iters: 200_000,
                tol: 1e-16,
            },
        )
        .unwrap();
        let result = solver.solve(&h, &y);
        assert!(result.estimate.iter().all(|&x| x >= 0.0));
        assert!(
            (result.objective - f_exact).abs() < 1e-6,
            "seed {seed}: {} vs {f_exact}",
            result.objective
        );
        assert!((&result.estimate - exact).amax() < 1e-3);
    }
}

#[test]
fn projected_gradient_matches_active_set_on_six_by_six_object() {
    let psf = generate_psf(&PsfSpec::new(
        PsfKind::Lenslets { n: 2 },
        Shape::square(8),
        0,
    ))
    .unwrap();
    let shape = Shape::square(6);
    let h = SystemMatrix::build(&psf, shape, Shape::square(8)).unwrap();
    let mut r = rng::stream(2, "nnls6");
    let y = Measurement(DVector::from_fn(h.rows(), |_, _| r.random_range(-0.5..1.0)));
    let active = lawson_hanson(h.matrix(), y.values());
    let f_active = objective(h.matrix(), y.values(), &active);
    let result = nnls_estimate(
        &h,
        &y,
        NnlsOptions {
            max_iters: 500_000,
            tol: 1e-16,
        },
    )
    .unwrap();
    assert!(result.estimate.iter().all(|&x| x >= 0.0));
    assert!(
        (result.objective - f_active).abs() < 1e-6 * f_active.max(1.0),
        "{} vs {f_active}",
        result.objective
    );
}

fn lenslet_instance(n: usize) -> SystemMatrix {
    let psf = generate_psf(&PsfSpec::new(PsfKind::Lenslets { n }, Shape::square(8), 0)).unwrap();
    SystemMatrix::build(&psf, Shape::square(8), Shape::square(8)).unwrap()
}

#[test]
fn gls_recovers_noiseless_object() {
    let h = lenslet_instance(1);
    let obj = generate_object(&ObjectSpec::new(
        ObjectKind::dense_default(),
        Shape::square(8),
        100.0,
        4,
    ))
    .unwrap();
    let v = vectorize(&obj);
    let y = Measurement(h.forward(&v).unwrap());
    let est =
        lensless_core::estimators::gls_estimate(&h, 1.0, &y, EpsilonMode::Absolute(0.0)).unwrap();
    assert!((&est - v.values()).norm() / v.values().norm() < 1e-6);
}

#[test]
fn gls_attains_the_gaussian_bound() {
    let h = lenslet_instance(1);
    let obj = generate_object(&ObjectSpec::new(
        ObjectKind::dense_default(),
        Shape::square(8),
        100.0,
        4,
    ))
    .unwrap();
    let v = vectorize(&obj);
    let model = NoiseModel::Gaussian { sigma2: 1.0 };
    let crb = crb_from_fisher(&fisher_gaussian(&h, 1.0).unwrap(), EpsilonMode::default()).unwrap();
    let report = run_trials(
        &model,
        &h,
        &v,
        &EstimatorChoice::Gls {
            epsilon: EpsilonMode::default(),
        },
        10_000,
        21,
        &crb,
    )
    .unwrap();
    assert_eq!(report.n_trials, 10_000);
    for (j, e) in report.efficiency.iter().enumerate() {
        assert!((e - 1.0).abs() < 0.1, "pixel {j}: efficiency {e}");
    }
    let above = report.efficiency.iter().filter(|&&e| e >= 0.9).count();
    assert!(above as f64 >= 0.95 * report.efficiency.len() as f64);
    let median = report.median_efficiency();
    assert!((0.9..=1.1).contains(&median), "median {median}");
    for (j, (b, se)) in report
        .per_pixel_bias
        .iter()
        .zip(report.standard_error())
        .enumerate()
    {
        assert!(b.abs() < 4.0 * se, "pixel {j}: bias {b}, se {se}");
    }
}

#[test]
fn richardson_lucy_matches_poisson_variance_on_identity() {
    let h = SystemMatrix::build(
        &ImageGrid::new(1, 1, vec![1.0]).unwrap(),
        Shape::square(1),
        Shape::square(1),
    )
    .unwrap();
    let v = VectorizedObject::new(DVector::from_vec(vec![100.0]), Shape::square(1)).unwrap();
    let crb = crb_from_fisher(
        &fisher_poisson(&h, &v, 0.0).unwrap(),
        EpsilonMode::Absolute(0.0),
    )
    .unwrap();
    assert!((crb.values[0] - 100.0).abs() < 1e-9);
    let report = run_trials(
        &NoiseModel::Poisson { background: 0.0 },
        &h,
        &v,
        &EstimatorChoice::PoissonMle(PoissonMleOptions::default()),
        100_000,
        8,
        &crb,
    )
    .unwrap();
    let var = report.per_pixel_variance[0];
    assert!((var - 100.0).abs() < 2.0, "variance {var}");
}

#[test]
fn richardson_lucy_reaches_the_likelihood_of_the_truth() {
    let h = lenslet_instance(3);
    let mut r = rng::stream(3, "mle");
    let v0 = VectorizedObject::new(
        DVector::from_fn(64, |_, _| r.random_range(1..30) as f64),
        Shape::square(8),
    )
    .unwrap();
    // Integer noiseless data: the truth is itself a feasible point.
    let y = Measurement(h.forward(&v0).unwrap().map(f64::round));
    let model = NoiseModel::Poisson { background: 0.0 };
    let result = poisson_mle(
        &h,
        &y,
        0.0,
        PoissonMleOptions {
            max_iters: 20_000,
            ..Default::default()
        },
    )
    .unwrap();
    let out = VectorizedObject::new(result.estimate.clone(), Shape::square(8)).unwrap();
    let ll_out = log_likelihood(&model, &h, &out, &y).unwrap().value();
    let ll_true = log_likelihood(&model, &h, &v0, &y).unwrap().value();
    assert!(ll_out >= ll_true - 1e-6, "{ll_out} < {ll_true}");
}

#[test]
fn richardson_lucy_likelihood_is_monotone() {
    let h = lenslet_instance(3);
    let obj = generate_object(&ObjectSpec::new(
        ObjectKind::sparse_default(),
        Shape::square(8),
        100.0,
        1,
    ))
    .unwrap();
    let v = vectorize(&obj);
    for seed in 0..3 {
        let y = sample(
            &NoiseModel::Poisson { background: 1e-3 },
            &h.forward(&v).unwrap(),
            seed,
        )
        .unwrap();
        let options = PoissonMleOptions {
            max_iters: 3000,
            tol: 0.0,
            trace_every: Some(100),
        };
        let result = poisson_mle(&h, &y, 1e-3, options).unwrap();
        assert_eq!(result.trace.len(), 31);
        for pair in result.trace.windows(2) {
            assert!(pair[1].1 >= pair[0].1 - 1e-8, "{:?}", pair);
        }
        assert!(result.estimate.iter().all(|&x| x >= 0.0));
    }
}

fn bead_instance(floor: f64, peak: f64) -> (SystemMatrix, VectorizedObject, Vec<usize>) {
    let h = lenslet_instance(3);
    let beads = generate_object(&ObjectSpec::new(
        ObjectKind::SparseBeads { n_beads: 3 },
        Shape::square(8),
        1.0,
        3,
    ))
    .unwrap();
    let idx: Vec<usize> = (0..64).filter(|&i| beads.values()[i] > 0.0).collect();
    let values = beads
        .values()
        .iter()
        .map(|&b| if b > 0.0 { peak } else { floor })
        .collect();
    (
        h,
        VectorizedObject::new(DVector::from_vec(values), Shape::square(8)).unwrap(),
        idx,
    )
}

#[test]
fn richardson_lucy_attains_the_poisson_bound_when_bright() {
    // Strictly positive and bright: the constraint is inactive and the MLE
    // is asymptotically efficient.
    let (h, v, beads) = bead_instance(1e4, 5e4);
    let crb = crb_from_fisher(
        &fisher_poisson(&h, &v, 1e-3).unwrap(),
        EpsilonMode::default(),
    )
    .unwrap();
    let report = run_trials(
        &NoiseModel::Poisson { background: 1e-3 },
        &h,
        &v,
        &EstimatorChoice::PoissonMle(PoissonMleOptions::default()),
        1000,
        5,
        &crb,
    )
    .unwrap();
    for &b in &beads {
        let e = report.efficiency[b];
        assert!((e - 1.0).abs() < 0.25, "bead {b}: efficiency {e}");
    }
}

#[test]
fn constrained_mle_beats_the_unconstrained_bound_on_sparse_beads() {
    // Zero-valued neighbours sit on the v ≥ 0 boundary, so the estimator is
    // biased there and its bead-pixel variance drops below the bound.
    let (h, v, beads) = bead_instance(0.0, 100.0);
    let crb = crb_from_fisher(
        &fisher_poisson(&h, &v, 1e-3).unwrap(),
        EpsilonMode::default(),
    )
    .unwrap();
    let report = run_trials(
        &NoiseModel::Poisson { background: 1e-3 },
        &h,
        &v,
        &EstimatorChoice::PoissonMle(PoissonMleOptions::default()),
        400,
        5,
        &crb,
    )
    .unwrap();
    assert!(report.per_pixel_mean.iter().all(|&m| m >= 0.0));
    for &b in &beads {
        assert!(
            report.efficiency[b] < 0.75,
            "bead {b}: efficiency {}",
            report.efficiency[b]
        );
    }
}

#[test]
fn nnls_outputs_are_non_negative() {
    let h = lenslet_instance(2);
    let obj = generate_object(&ObjectSpec::new(
        ObjectKind::sparse_default(),
        Shape::square(8),
        100.0,
        2,
    ))
    .unwrap();
    let v = vectorize(&obj);
    let crb = crb_from_fisher(&fisher_gaussian(&h, 4.0).unwrap(), EpsilonMode::default()).unwrap();
    let report = run_trials(
        &NoiseModel::Gaussian { sigma2: 4.0 },
        &h,
        &v,
        &EstimatorChoice::Nnls(NnlsOptions {
            max_iters: 500,
            tol: 1e-9,
        }),
        50,
        1,
        &crb,
    )
    .unwrap();
    assert!(report.per_pixel_mean.iter().all(|&m| m >= 0.0));
}
