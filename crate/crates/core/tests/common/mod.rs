//! Shared fixtures and independent reference computations for the
//! integration tests. Nothing here calls into the crate's numerics.
#![allow(dead_code)]

use eiso_core::empobs::EmpiricalObservabilityMatrix;
use eiso_core::sysmodel::{linear_system, SystemModel, TimeKind};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn coupled_a() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -2.0, 0.0, 1.0, 1.0, 0.0, -1.0])
}

pub fn coupled_c() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0])
}

pub fn rotating_a() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.9952, 0.095, 0.0, -0.095, 0.9002, 0.0, 0.0, 0.0, 0.9048])
}

pub fn coupled_system() -> SystemModel {
    linear_system(coupled_a(), coupled_c(), TimeKind::Continuous).unwrap()
}

pub fn rotating_system() -> SystemModel {
    linear_system(rotating_a(), DMatrix::identity(3, 3), TimeKind::Discrete).unwrap()
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

/// Matrix exponential by scaling and squaring a 30-term Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// `∫₀ᵀ e^{Aᵀτ} CᵀC e^{Aτ} dτ` by composite Simpson with `intervals`
/// (even) subintervals.
pub fn gramian_simpson(a: &DMatrix<f64>, c: &DMatrix<f64>, horizon: f64, intervals: usize) -> DMatrix<f64> {
    assert!(intervals.is_multiple_of(2));
    let n = a.nrows();
    let h = horizon / intervals as f64;
    let mut total = DMatrix::zeros(n, n);
    for i in 0..=intervals {
        let sens = c * expm(&(a * (i as f64 * h)));
        let weight = if i == 0 || i == intervals {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        total += sens.transpose() * sens * weight;
    }
    total * (h / 3.0)
}

/// Discrete observability stack `[C; CA; …; CA^{w−1}]`.
pub fn discrete_stack(a: &DMatrix<f64>, c: &DMatrix<f64>, w: usize) -> DMatrix<f64> {
    let (p, n) = c.shape();
    let mut out = DMatrix::zeros(w * p, n);
    let mut block = c.clone();
    for k in 0..w {
        out.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

pub fn rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).norm() / want.norm()
}

pub fn matrix(rows: usize, cols: usize, data: &[f64]) -> EmpiricalObservabilityMatrix {
    EmpiricalObservabilityMatrix::from_entries(DMatrix::from_row_slice(rows, cols, data), 1).unwrap()
}

/// One random test matrix and target state.
pub struct RandomCase {
    pub matrix: DMatrix<f64>,
    pub target: usize,
}

/// Case `i` of the seeded random family: `n` in 1..=4 states, `q` in
/// 1..=10 rows, rank `r` in 1..=n. Entries are `L·R` with `L` (q×r) and
/// `R` (r×n) uniform in [−1, 1], so rank-deficient and infeasible cases
/// occur alongside full-rank ones. The generator is ChaCha8 seeded with
/// `seed + i`.
pub fn random_case(seed: u64, i: u64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + i);
    let n = rng.random_range(1..=4);
    let q = rng.random_range(1..=10);
    let r = rng.random_range(1..=n);
    let l = DMatrix::from_fn(q, r, |_, _| rng.random_range(-1.0..=1.0));
    let rr = DMatrix::from_fn(r, n, |_, _| rng.random_range(-1.0..=1.0));
    let target = rng.random_range(0..n);
    RandomCase { matrix: l * rr, target }
}
