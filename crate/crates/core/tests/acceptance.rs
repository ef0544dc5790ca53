//! Acceptance criteria. Runs as a plain binary so that every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

mod common;

use common::*;
use eiso_core::cli::report;
use eiso_core::cli::{run_experiment, sensor_selection_study, ExperimentConfig, ExperimentReport};
use eiso_core::eiso::{self, combination_count, exhaustive_oracle, EisoParams, DEFAULT_ORACLE_CAP};
use eiso_core::empobs::{build_matrix, empirical_gramian, EmpiricalObservabilityMatrix};
use eiso_core::linalg::singular_values;
use eiso_core::sparsereco::{prune, prune_path, solve, ReconstructionProblem, SolverSettings};
use eiso_core::sysmodel::{fly, fly_model, InputSchedule};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

fn lti_exactness() -> Verdict {
    let sys = rotating_system();
    let want = discrete_stack(&rotating_a(), &DMatrix::identity(3, 3), 10);
    let sched = InputSchedule::zeros(0, 10, 1.0).unwrap();
    let mut worst = 0.0f64;
    let mut unit = Vec::new();
    for eps in [1e-6, 1e-3, 1e-1] {
        let m = build_matrix(&sys, &DVector::zeros(3), &sched, 10, eps).unwrap();
        worst = worst.max(rel_err(&m.entries, &want));
        let m = build_matrix(&sys, &ones(3), &sched, 10, eps).unwrap();
        unit.push(rel_err(&m.entries, &want));
    }
    verdict(
        worst <= 1e-10,
        format!(
            "max rel err {worst:.1e} at x0 = 0; at x0 = 1: {} (rounding floor ~ w·u/ε)",
            sci(&unit)
        ),
    )
}

fn gramian_convergence() -> Verdict {
    let reference = gramian_simpson(&coupled_a(), &coupled_c(), 1.0, 2000);
    let (mut dt, mut w, mut eps) = (0.01, 100usize, 1e-3);
    let mut errs = Vec::new();
    for _ in 0..4 {
        let m = build_matrix(
            &coupled_system(),
            &ones(3),
            &InputSchedule::zeros(0, w, dt).unwrap(),
            w,
            eps,
        )
        .unwrap();
        let g = empirical_gramian(&m, 1e-6).unwrap().gramian;
        errs.push(rel_err(&g, &reference));
        dt /= 2.0;
        w *= 2;
        eps /= 2.0;
    }
    let monotone = errs.windows(2).all(|p| p[1] < p[0]);
    let last = *errs.last().unwrap();
    verdict(monotone && last <= 1e-3, format!("relative errors {}", sci(&errs)))
}

fn coupled_convergence() -> Verdict {
    let cfg = config("coupled_continuous.toml");
    let params_ok = cfg.window == 100 && cfg.eiso.alpha == 1e-2 && cfg.eiso.beta == 1e-3 && cfg.eiso.sigma0 == 1e-6;
    let rep = run_experiment(&cfg).unwrap();
    let cond = rep.gramian_summary[0].estimation_condition_number;
    let mut ok = params_ok;
    let mut parts = Vec::new();
    for targets in &cfg.targets {
        let its: Vec<_> = rep.iterations.iter().filter(|r| &r.target_set == targets).collect();
        let last = its.last().map_or(f64::INFINITY, |r| r.kappa_squared);
        let rel = (last - cond).abs() / cond;
        ok &= rel <= 0.05;
        parts.push(format!("{targets:?} {rel:.1e}"));
    }
    let first = rep
        .iterations
        .iter()
        .find(|r| r.target_set == [0])
        .map(|r| r.new_rows.len());
    ok &= first == Some(1);
    verdict(
        ok,
        format!(
            "κ(W) = {cond:.4}, rel gaps {}; e1 first iteration rows {first:?}",
            parts.join(", ")
        ),
    )
}

fn motivating_examples() -> Verdict {
    let examples = [
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 10.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 1e-16, 0.0, 1e-16]),
    ];
    let params = EisoParams::default();
    let mut firsts = Vec::new();
    for m in &examples {
        let obs = EmpiricalObservabilityMatrix::from_entries(m.clone(), 1).unwrap();
        let res = eiso::run(&obs, &[0], &params).unwrap();
        firsts.push(res.iterations.first().map(|r| (r.iteration, r.kappa_squared)));
    }
    let all_one = firsts.iter().all(|f| *f == Some((1, 1.0)));
    let gram = empirical_gramian(
        &EmpiricalObservabilityMatrix::from_entries(examples[1].clone(), 1).unwrap(),
        1e-6,
    )
    .unwrap()
    .gramian;
    let exact = gram == DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
    verdict(
        all_one && exact,
        format!("iteration-1 κ² {firsts:?}; Gramian exact: {exact}"),
    )
}

/// Seed 2024, cases 0..200 of [`random_case`]; α = 1e-4, β = 1e-3, σ0 = 1e-6.
fn oracle_equivalence() -> Verdict {
    let (alpha, beta, sigma0) = (1e-4, 1e-3, 1e-6);
    let params = EisoParams::new(alpha, beta, sigma0);
    let cases = 200;
    let (mut agree, mut below, mut far) = (0, 0, 0);
    let mut feasible = 0;
    for i in 0..cases {
        let case = random_case(2024, i);
        let obs = EmpiricalObservabilityMatrix::from_entries(case.matrix.clone(), 1).unwrap();
        let res = eiso::run(&obs, &[case.target], &params).unwrap();
        let oracle = exhaustive_oracle(&case.matrix, &[case.target], beta, sigma0, DEFAULT_ORACLE_CAP).unwrap();
        let oracle_feasible = oracle.best_kappa_squared.is_finite();
        feasible += oracle_feasible as usize;
        if res.observable == oracle_feasible {
            agree += 1;
        } else {
            let s = singular_values(&case.matrix);
            let top = s[0];
            let near = s.iter().any(|&v| {
                (sigma0 / 10.0..=sigma0 * 10.0).contains(&v) || (top * sigma0 / 10.0..=top * sigma0 * 10.0).contains(&v)
            });
            far += (!near) as usize;
        }
        if res.kappa_min < oracle.best_kappa_squared * (1.0 - 1e-9) {
            below += 1;
        }
    }
    let rate = agree as f64 / cases as f64;
    verdict(
        rate >= 0.98 && below == 0 && far == 0,
        format!(
            "agreement {agree}/{cases} ({feasible} oracle-feasible), κ_min below oracle {below}, disagreements away from thresholds {far}"
        ),
    )
}

fn classify(rep: &ExperimentReport, subset: Option<&[usize]>, targets: &[usize]) -> Vec<bool> {
    rep.windows
        .iter()
        .filter(|r| r.target_set == targets && subset.is_none_or(|s| r.sensor_subset == s))
        .map(|r| r.observable)
        .collect()
}

fn fly_classification() -> Verdict {
    let all = [0, 1, 2, 3, 4];
    let mut ok = true;
    let mut notes = Vec::new();
    let mut expect = |label: &str, got: Vec<bool>, want: bool| {
        let hits = got.iter().filter(|&&b| b == want).count();
        let good = got.len() == 48 && hits == 48;
        ok &= good;
        if !good {
            notes.push(format!("{label}: {hits}/{}", got.len()));
        }
    };

    let constant = run_experiment(&config("fly_constant.toml")).unwrap();
    for j in 0..5 {
        expect(
            &format!("constant {j}"),
            classify(&constant, None, &[j]),
            j == fly::HEADING,
        );
    }
    let turning = run_experiment(&config("fly_turning.toml")).unwrap();
    for j in 0..5 {
        let want = j == fly::HEADING || j == fly::WIND_DIRECTION;
        expect(&format!("turning {j}"), classify(&turning, None, &[j]), want);
    }
    let accelerating = run_experiment(&config("fly_accelerating.toml")).unwrap();
    for j in 0..5 {
        expect(&format!("accelerating {j}"), classify(&accelerating, None, &[j]), true);
    }
    let heading_and_gamma = [fly::OUT_HEADING, fly::OUT_AIRSPEED_ANGLE];
    let turning_sensors = run_experiment(&config("fly_turning_sensors.toml")).unwrap();
    expect(
        "turning {φ, γ} ζ",
        classify(&turning_sensors, Some(&heading_and_gamma), &[fly::WIND_DIRECTION]),
        true,
    );
    let accel_sensors = run_experiment(&config("fly_accelerating_sensors.toml")).unwrap();
    expect(
        "accelerating all sensors, full state",
        classify(&accel_sensors, Some(&[0, 1, 2]), &all),
        true,
    );
    expect(
        "accelerating without g/d, full state",
        classify(&accel_sensors, Some(&heading_and_gamma), &all),
        false,
    );
    let detail = if notes.is_empty() {
        "13 classifications × 48 windows match".to_string()
    } else {
        format!("mismatches: {}", notes.join("; "))
    };
    verdict(ok, detail)
}

fn sensor_correlation() -> Verdict {
    let rep = sensor_selection_study(&config("rotating_sensor_sets.toml")).unwrap();
    match rep.r_squared {
        Some(r2) => verdict(r2 >= 0.9, format!("R² = {r2:.4} over {} sensor sets", rep.fit_points)),
        None => verdict(false, "fewer than three finite points"),
    }
}

fn combination_count_check() -> Verdict {
    let count = combination_count(100);
    let exact = count == (BigUint::from(1u8) << 100usize) - 1u8;
    let big = count > BigUint::from(10u8).pow(30);
    verdict(exact && big, format!("combination_count(100) = {count}"))
}

fn property_suites() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();

    // Angular wrap: heading and wind along the x axis put γ next to ±π.
    let mut crossings = 0;
    for _ in 0..200 {
        let phi = rng.random_range(-5e-5..5e-5);
        let wind = rng.random_range(0.0..0.3);
        let zeta = if rng.random_bool(0.5) { 0.0 } else { PI };
        let eps = rng.random_range(1e-3..1e-2);
        let gamma = |h: f64| (-h.sin() + wind * zeta.sin()).atan2(-h.cos() + wind * zeta.cos());
        crossings += (gamma(phi + eps) * gamma(phi - eps) < 0.0) as usize;
        let x0 = DVector::from_column_slice(&[1.0, 1.0, wind, phi, zeta]);
        let m = build_matrix(&fly_model(), &x0, &InputSchedule::zeros(2, 3, 0.01).unwrap(), 3, eps).unwrap();
        let bound = (1.0 + wind + eps).powi(2) / (1.0 - wind - eps).powi(2);
        if m.entries.amax() > 1.05 * bound {
            failures.push("angular wrap");
            break;
        }
    }

    // Gramian PSD.
    for _ in 0..200 {
        let q = rng.random_range(1..=30);
        let n = rng.random_range(1..=6);
        let m = DMatrix::from_fn(q, n, |_, _| rng.random_range(-2.0..2.0));
        let g = empirical_gramian(&EmpiricalObservabilityMatrix::from_entries(m, 1).unwrap(), 1e-6).unwrap();
        let eig = SymmetricEigen::new(g.gramian.clone()).eigenvalues;
        if g.gramian != g.gramian.transpose() || eig.iter().any(|&l| l < -1e-12 * eig.max().max(0.0)) {
            failures.push("gramian psd");
            break;
        }
    }

    // Pruning: ℓ2 residual monotone on random problems, ℓ∞ on the
    // motivating fixtures; feasible results meet β.
    let settings = SolverSettings::default();
    let mut pruned_cases = 0;
    for i in 0..100 {
        let case = random_case(5, i);
        let problem = ReconstructionProblem::new(case.matrix, &[case.target], 1e-3, 1e-2).unwrap();
        let raw = solve(&problem, &settings).unwrap();
        if !raw.feasible {
            continue;
        }
        pruned_cases += 1;
        let path = prune_path(&problem, &raw, &settings);
        let monotone = path
            .windows(2)
            .all(|p| p[1].residual_norm <= p[0].residual_norm * (1.0 + 1e-9) + 1e-12);
        let pruned = prune(&problem, &raw, &settings).unwrap();
        let consistent = if pruned.feasible {
            problem.residual(&pruned.coefficients).amax() <= problem.beta
        } else {
            path.iter().all(|s| s.residual_inf > problem.beta)
        };
        if !monotone || !consistent {
            failures.push("pruning");
            break;
        }
    }
    for data in [[1.0, 0.0, 0.0, 10.0], [1.0, 0.0, 1.0, 1.0], [1.0, 1e-16, 0.0, 1e-16]] {
        let problem = ReconstructionProblem::new(DMatrix::from_row_slice(2, 2, &data), &[0], 1e-6, 1e-3).unwrap();
        let raw = solve(&problem, &settings).unwrap();
        let path = prune_path(&problem, &raw, &settings);
        if !path.windows(2).all(|p| p[1].residual_inf <= p[0].residual_inf + 1e-12) {
            failures.push("pruning ℓ∞ fixtures");
        }
    }

    // CLI determinism and round-trip.
    let cfg = config("fly_turning.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut reports = Vec::new();
    for dir in &dirs {
        let rep = run_experiment(&cfg).unwrap();
        report::emit_experiment(&rep, dir.path()).unwrap();
        reports.push(rep);
    }
    for file in ["windows.csv", "iterations.csv", "report.json"] {
        if fs::read(dirs[0].path().join(file)).unwrap() != fs::read(dirs[1].path().join(file)).unwrap() {
            failures.push("cli determinism");
        }
    }
    let back = report::read_experiment_json(dirs[0].path()).unwrap();
    report::emit_experiment(&back, dirs[1].path()).unwrap();
    let csv_back = report::read_windows_csv(fs::File::open(dirs[0].path().join("windows.csv")).unwrap()).unwrap();
    if report::read_experiment_json(dirs[1].path()).unwrap() != back || csv_back != back.windows {
        failures.push("cli round-trip");
    }

    verdict(
        failures.is_empty() && crossings == 200,
        if failures.is_empty() {
            format!("wrap ({crossings} cut crossings), PSD, pruning ({pruned_cases} feasible), determinism, round-trip")
        } else {
            format!("failed: {failures:?}")
        },
    )
}

type Criterion = (&'static str, Duration, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 LTI exactness", Duration::from_secs(1), lti_exactness),
        ("2 Gramian convergence", Duration::from_secs(10), gramian_convergence),
        (
            "3 linear-system convergence",
            Duration::from_secs(60),
            coupled_convergence,
        ),
        ("4 motivating examples", Duration::from_secs(1), motivating_examples),
        ("5 oracle equivalence", Duration::from_secs(300), oracle_equivalence),
        ("6 fly classifications", Duration::from_secs(120), fly_classification),
        ("7 sensor correlation", Duration::from_secs(60), sensor_correlation),
        ("8 combination count", Duration::from_secs(1), combination_count_check),
        ("9 property suites", Duration::from_secs(120), property_suites),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let pass = v.pass && took <= limit;
        failed += (!pass) as usize;
        println!(
            "{} {name} ({:.2} s, limit {} s): {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs(),
            v.detail
        );
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
