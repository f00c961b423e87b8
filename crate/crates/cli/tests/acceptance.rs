//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lensless_cli::config::ExperimentConfig;
use lensless_cli::io::read_grid_csv;
use lensless_cli::manifest::collect_files;
use lensless_cli::pipeline::{build_system, run_case, CaseSpec};
use lensless_cli::study::{run_study, StudyName, SummaryRow};
use lensless_cli::verify::{fd_checks, run_checks, Status, HESSIAN_TOLERANCE, SCORE_TOLERANCE};
use lensless_core::fisher::{fisher_gaussian, fisher_poisson};
use lensless_core::{
    crb_from_fisher, generate_psf, vectorize, EpsilonMode, ImageGrid, NoiseModel, ObjectKind,
    PsfKind, Shape, SystemMatrix,
};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_lensless-crb");
const LENSLETS: [&str; 5] = [
    "lenslets1",
    "lenslets2",
    "lenslets3",
    "lenslets4",
    "lenslets5",
];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Results shared between criteria so each study runs once in-process.
struct Studies {
    fig2: Vec<SummaryRow>,
    fig3: Vec<SummaryRow>,
    case_seconds: Vec<(String, f64)>,
    fig2_dir: TempDir,
}

fn studies() -> Studies {
    let config = ExperimentConfig::default();
    let fig2_dir = TempDir::new().unwrap();
    let fig3_dir = TempDir::new().unwrap();
    let fig2 = run_study(StudyName::Fig2, &config, fig2_dir.path(), false).unwrap();
    let fig3 = run_study(StudyName::Fig3, &config, fig3_dir.path(), false).unwrap();
    let case_seconds = fig2
        .timings
        .iter()
        .map(|(n, t)| (format!("fig2/{n}"), t.pipeline()))
        .chain(
            fig3.timings
                .iter()
                .map(|(n, t)| (format!("fig3/{n}"), t.pipeline())),
        )
        .collect();
    Studies {
        fig2: fig2.rows,
        fig3: fig3.rows,
        case_seconds,
        fig2_dir,
    }
}

fn mean_of(rows: &[SummaryRow], case: &str) -> f64 {
    rows.iter()
        .find(|r| r.case == case)
        .unwrap_or_else(|| panic!("no case {case}"))
        .mean
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x - y) / y).abs())
        .fold(0.0, f64::max)
}

fn cli(args: &[&str], envs: &[(&str, &str)]) -> std::process::Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("run CLI")
}

fn dimension_fidelity(s: &Studies) -> Outcome {
    let config = ExperimentConfig::default();
    let spec = CaseSpec::from_config("probe", &config).unwrap();
    let psf = generate_psf(&spec.psf).unwrap();
    let h = build_system(&spec, &psf).unwrap();
    let map = read_grid_csv(&s.fig2_dir.path().join("lenslets1/crb.csv")).unwrap();
    let n_psfs = s.fig2.len();
    let slowest = s.case_seconds.iter().map(|(_, t)| *t).fold(0.0, f64::max);
    let pass = h.rows() == 4225
        && h.cols() == 1024
        && h.measurement_shape() == Shape::square(65)
        && map.shape() == Shape::square(32)
        && n_psfs == 7
        && s.case_seconds.len() == 21
        && slowest < 60.0;
    Outcome::new(
        pass,
        format!(
            "H {}x{}, measurement {}, CRB map {}, {n_psfs} PSFs, {} cases, slowest pipeline {slowest:.2}s (< 60s)",
            h.rows(),
            h.cols(),
            h.measurement_shape(),
            map.shape(),
            s.case_seconds.len()
        ),
    )
}

fn trivial_cases() -> Outcome {
    let shape = Shape::square(32);
    let delta = ImageGrid::new(1, 1, vec![1.0]).unwrap();
    let h = SystemMatrix::build(&delta, shape, Shape::square(1)).unwrap();
    let sigma2 = 2.5;
    let g = crb_from_fisher(
        &fisher_gaussian(&h, sigma2).unwrap(),
        EpsilonMode::Relative(1e-9),
    )
    .unwrap();
    let g_err = g
        .values
        .iter()
        .map(|c| (c - sigma2).abs() / sigma2)
        .fold(0.0, f64::max);

    let mut rng_state = 12345u64;
    let values: Vec<f64> = (0..shape.len())
        .map(|_| {
            rng_state = rng_state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            1.0 + 99.0 * ((rng_state >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect();
    let v = vectorize(&ImageGrid::new(32, 32, values.clone()).unwrap());
    let p = crb_from_fisher(
        &fisher_poisson(&h, &v, 0.0).unwrap(),
        EpsilonMode::Relative(1e-9),
    )
    .unwrap();
    let p_err = max_rel(&p.values, &values);

    // The same through the command line: crb.csv of an identity system.
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = cli(
        &[
            "crb",
            "--set",
            "psf=delta",
            "--set",
            "psf_size=1",
            "--set",
            "psf_pad=1",
            "--sigma2",
            "1",
            "--out",
            out,
        ],
        &[],
    );
    let csv = read_grid_csv(&dir.path().join("crb.csv")).unwrap();
    let cli_err = csv
        .values()
        .iter()
        .map(|c| (c - 1.0).abs())
        .fold(0.0, f64::max);

    Outcome::new(
        g_err < 1e-6 && p_err < 1e-6 && run.status.success() && cli_err < 1e-6,
        format!("Gaussian max rel err {g_err:.2e}, Poisson max rel err {p_err:.2e}, CLI crb.csv max |crb-1| {cli_err:.2e} (all < 1e-6)"),
    )
}

fn oracle_suite(report: &lensless_cli::verify::VerifyReport) -> Outcome {
    let mc: Vec<_> = report
        .checks
        .iter()
        .filter(|c| c.name.starts_with("fisher_mc/") || c.name.starts_with("fisher_observed/"))
        .collect();
    let psfs: std::collections::BTreeSet<_> = mc
        .iter()
        .map(|c| c.name.rsplit('/').next().unwrap())
        .collect();
    let worst = mc.iter().filter_map(|c| c.value).fold(0.0, f64::max);
    let pass = mc.len() == 12 && psfs.len() >= 3 && mc.iter().all(|c| c.status == Status::Pass);
    Outcome::new(
        pass,
        format!(
            "{} Monte Carlo checks (2e5 samples, {} PSFs, both models, both forms), worst rel Frobenius err {worst:.4} (< 0.05)",
            mc.len(),
            psfs.len()
        ),
    )
}

fn finite_differences() -> Outcome {
    let mut worst_score: f64 = 0.0;
    let mut worst_hess: f64 = 0.0;
    for seed in 0..5 {
        for model in [
            NoiseModel::Gaussian { sigma2: 0.7 },
            NoiseModel::Poisson { background: 1e-3 },
        ] {
            let (s, h) = fd_checks(&model, seed).unwrap();
            worst_score = worst_score.max(s);
            worst_hess = worst_hess.max(h);
        }
    }
    Outcome::new(
        worst_score < SCORE_TOLERANCE && worst_hess < HESSIAN_TOLERANCE,
        format!("5 instances x 2 models: score rel err {worst_score:.2e} (< 1e-5), Hessian rel err {worst_hess:.2e} (< 1e-4)"),
    )
}

fn crb_attainment(report: &lensless_cli::verify::VerifyReport) -> Outcome {
    let c = report.get("gls_efficiency").expect("gls check");
    let m = c.value.unwrap_or(f64::NAN);
    Outcome::new(
        c.status == Status::Pass && (0.9..=1.1).contains(&m),
        format!(
            "median variance/CRB over 1e4 trials on 8x8 single lenslet = {m:.4} (in [0.9, 1.1])"
        ),
    )
}

fn fig2_reproduction(s: &Studies) -> Outcome {
    let means: Vec<f64> = LENSLETS.iter().map(|c| mean_of(&s.fig2, c)).collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let diffuser = mean_of(&s.fig2, "diffuser");
    let diffuser_ok = diffuser >= means[4];

    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ra = cli(
        &[
            "crb",
            "--set",
            "object=dense",
            "--out",
            a.path().to_str().unwrap(),
        ],
        &[],
    );
    let rb = cli(
        &[
            "crb",
            "--set",
            "object=sparse",
            "--set",
            "object_peak=7",
            "--out",
            b.path().to_str().unwrap(),
        ],
        &[],
    );
    let same = ra.status.success()
        && rb.status.success()
        && fs::read(a.path().join("crb.csv")).unwrap()
            == fs::read(b.path().join("crb.csv")).unwrap()
        && fs::read(a.path().join("object.csv")).unwrap()
            != fs::read(b.path().join("object.csv")).unwrap();
    Outcome::new(
        monotone && diffuser_ok && same,
        format!(
            "lenslets 1-5 mean CRB {:?} non-decreasing: {monotone}; diffuser {diffuser:.3e} >= lenslets5: {diffuser_ok}; dense vs sparse object crb.csv byte-identical: {same}",
            means.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn fig3_reproduction(s: &Studies) -> Outcome {
    let encoders: Vec<String> = LENSLETS
        .iter()
        .map(|s| s.to_string())
        .chain(["rml".into(), "diffuser".into()])
        .collect();
    let dense: BTreeMap<&str, f64> = encoders
        .iter()
        .map(|e| (e.as_str(), mean_of(&s.fig3, &format!("dense_{e}"))))
        .collect();
    let sparse: BTreeMap<&str, f64> = encoders
        .iter()
        .map(|e| (e.as_str(), mean_of(&s.fig3, &format!("sparse_{e}"))))
        .collect();

    let lens_sparse: Vec<f64> = LENSLETS.iter().map(|e| sparse[e]).collect();
    let span = lens_sparse.iter().copied().fold(0.0, f64::max)
        / lens_sparse.iter().copied().fold(f64::INFINITY, f64::min);
    let dense_seq: Vec<f64> = encoders.iter().map(|e| dense[e.as_str()]).collect();
    let dense_increasing = dense_seq.windows(2).all(|w| w[1] > w[0]);
    let dense_ratio = dense["diffuser"] / dense["lenslets1"];
    let sparse_below = encoders
        .iter()
        .all(|e| sparse[e.as_str()] <= dense[e.as_str()]);
    let high_mux = sparse["rml"] > sparse["lenslets5"] && sparse["diffuser"] > sparse["lenslets5"];
    Outcome::new(
        span < 2.0 && dense_increasing && dense_ratio > 2.0 && sparse_below && high_mux,
        format!(
            "sparse lenslets 1-5 span {span:.3}x (< 2); dense strictly increasing: {dense_increasing}, diffuser/lenslets1 = {dense_ratio:.1}x (> 2); \
             sparse <= dense for all 7: {sparse_below}; sparse rml {:.3e}, diffuser {:.3e} > lenslets5 {:.3e}: {high_mux}",
            sparse["rml"], sparse["diffuser"], sparse["lenslets5"]
        ),
    )
}

fn scaling_laws() -> Outcome {
    let mut worst_g: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    for psf in [
        PsfKind::Lenslets { n: 1 },
        PsfKind::Lenslets { n: 3 },
        PsfKind::Lenslets { n: 5 },
    ] {
        let base = ExperimentConfig {
            psf,
            noise: lensless_cli::config::NoiseChoice::Gaussian,
            ..ExperimentConfig::default()
        };
        let reference = run_case(&CaseSpec::from_config("g", &base).unwrap())
            .unwrap()
            .crb
            .values;
        for factor in [2.0, 3.7, 10.0] {
            let mut c = base.clone();
            c.sigma2 = factor;
            let scaled = run_case(&CaseSpec::from_config("g", &c).unwrap())
                .unwrap()
                .crb
                .values;
            let expected: Vec<f64> = reference.iter().map(|v| v * factor).collect();
            worst_g = worst_g.max(max_rel(&scaled, &expected));
        }

        // Brightness scaling: the background scales with the object so the
        // Fisher matrix scales exactly by 1/c.
        let mut p = base.clone();
        p.noise = lensless_cli::config::NoiseChoice::Poisson;
        p.object = ObjectKind::dense_default();
        let reference = run_case(&CaseSpec::from_config("p", &p).unwrap())
            .unwrap()
            .crb
            .values;
        for factor in [2.0, 3.7, 10.0] {
            let mut c = p.clone();
            c.object_peak *= factor;
            c.background *= factor;
            let scaled = run_case(&CaseSpec::from_config("p", &c).unwrap())
                .unwrap()
                .crb
                .values;
            let expected: Vec<f64> = reference.iter().map(|v| v * factor).collect();
            worst_p = worst_p.max(max_rel(&scaled, &expected));
        }
    }
    Outcome::new(
        worst_g < 1e-9 && worst_p < 1e-9,
        format!("32x32, lenslets 1/3/5, factors 2/3.7/10: Gaussian sigma2 max rel err {worst_g:.2e}, Poisson brightness max rel err {worst_p:.2e} (< 1e-9)"),
    )
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    collect_files(dir)
        .unwrap()
        .keys()
        .chain(std::iter::once(&"manifest.json".to_string()))
        .map(|k| (k.clone(), fs::read(dir.join(k)).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let run = |dir: &PathBuf, threads: &str| {
        cli(
            &[
                "study",
                "fig3",
                "--seed",
                "7",
                "--out",
                dir.to_str().unwrap(),
            ],
            &[("RAYON_NUM_THREADS", threads)],
        )
    };
    let ra = run(&a.path().to_path_buf(), "1");
    let rb = run(&b.path().to_path_buf(), "4");
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let identical = ra.status.success() && rb.status.success() && ta == tb;
    Outcome::new(
        identical && ta.len() > 14 * 5,
        format!(
            "study fig3 --seed 7 with 1 vs 4 threads: {} files, byte-identical trees: {identical}",
            ta.len()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let studies = studies();
    let report = run_checks(&ExperimentConfig::default()).unwrap();

    let results: Vec<(&str, Outcome)> = vec![
        ("1 dimension fidelity", dimension_fidelity(&studies)),
        ("2 trivial-case exactness", trivial_cases()),
        ("3 Monte Carlo vs closed-form Fisher", oracle_suite(&report)),
        ("4 score/Hessian finite differences", finite_differences()),
        ("5 CRB attainment (GLS)", crb_attainment(&report)),
        ("6 Gaussian study orderings", fig2_reproduction(&studies)),
        ("7 Poisson study orderings", fig3_reproduction(&studies)),
        ("8 scaling laws", scaling_laws()),
        ("9 determinism", determinism()),
    ];

    let mut failed = 0;
    for (name, outcome) in &results {
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {name}: {}", outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.1}s)",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
