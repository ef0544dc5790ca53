//! Sparse reconstruction of state basis vectors from matrix rows.
//!
//! Given a candidate matrix `M` (`q × n`) and stacked basis vectors `T`
//! (`n × z`), [`solve`] finds coefficients `V` (`z × q`) minimising
//!
//! ```text
//! Σ_c ‖t_c − Mᵀ v_cᵀ‖₂ + α Σ |V|      s.t.  |T − Mᵀ Vᵀ| ≤ β  elementwise
//! ```
//!
//! The objective separates over the `z` target columns, so each column is
//! solved on its own with ADMM on the splitting
//!
//! ```text
//! x = z₁ (ℓ₁ term),   t − Ax = z₂ (ℓ₂ term),   t − Ax = z₃ (box)
//! ```
//!
//! with `A = Mᵀ`. The iteration runs on `A` with unit-norm columns. The
//! coefficient block and the two residual blocks have separate penalties,
//! rebalanced from their residuals at doubling intervals, and the x
//! half-step is over-relaxed. The x-update `(I + 2γAᵀA) x = b` is solved in
//! closed form through the SVD of `A`.
//!
//! A column is accepted when the ADMM residuals meet the tolerances, or
//! earlier when a feasible polished point is within tolerance of a dual
//! lower bound. Polished points are the iterate, least-squares refits on its
//! support or on a rank-sized part of it, and exact minimisers over the face
//! fixed by those supports, their signs and the box components the iterate
//! holds at `±β`. Multipliers come from the box and ℓ₂ blocks, from solving
//! `a_iᵀy = α sign(x_i)` on the support, or from the face stationarity
//! conditions.
//!
//! `A` is replaced by its rank-truncated SVD (`σ ≥ rank_rtol·σ_max`) before
//! solving. Directions carried only by singular values below that cutoff are
//! treated as absent: a target reachable only through them is infeasible.
//!
//! Infeasibility is decided by exhibiting a vector `y` with `Aᵀy = 0` and
//! `yᵀt > β‖y‖₁` (for every `x`, `yᵀ(t − Ax) = yᵀt` exceeds the largest value
//! `yᵀr` can take on the box). Candidates are the least-squares residual and
//! the per-iteration increment of the box multiplier, projected onto the
//! null space of `Aᵀ`. ADMM runs against `β` less a margin of about ten
//! times its tolerance, so targets whose best ℓ∞ residual falls inside that
//! margin are reported infeasible.

use crate::linalg::{lstsq_min_norm, max_abs, TruncatedSvd};
use itertools::Itertools;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid reconstruction problem: {0}")]
    InvalidProblem(String),
    #[error("solver did not converge in {iterations} iterations (primal {primal:.3e}, dual {dual:.3e})")]
    NotConverged { iterations: usize, primal: f64, dual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Absolute tolerance on the ADMM primal and dual residuals.
    pub abs_tol: f64,
    /// Relative tolerance on the ADMM residuals.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Relative singular-value cutoff applied to the candidate matrix and to
    /// every least-squares refit.
    pub rank_rtol: f64,
    /// Coefficients below `zero_rtol · max|v|` are set to zero.
    pub zero_rtol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            max_iter: 50_000,
            rank_rtol: 1e-10,
            zero_rtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionProblem {
    /// Candidate rows, `q × n`.
    pub matrix: DMatrix<f64>,
    /// Stacked canonical basis vectors, `n × z`.
    pub target: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl ReconstructionProblem {
    /// Problem whose target stacks `e_j` for every `j` in `states`.
    pub fn new(matrix: DMatrix<f64>, states: &[usize], alpha: f64, beta: f64) -> Result<Self, SolveError> {
        let n = matrix.ncols();
        let mut target = DMatrix::zeros(n, states.len());
        for (c, &j) in states.iter().enumerate() {
            if j >= n {
                return Err(SolveError::InvalidProblem(format!(
                    "state {j} out of range for n = {n}"
                )));
            }
            target[(j, c)] = 1.0;
        }
        let p = Self {
            matrix,
            target,
            alpha,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.matrix.ncols();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(SolveError::InvalidProblem(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(SolveError::InvalidProblem(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.target.nrows() != n || self.target.ncols() == 0 {
            return Err(SolveError::InvalidProblem(format!(
                "target must be {n} × z with z >= 1, got {:?}",
                self.target.shape()
            )));
        }
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::InvalidProblem("matrix has non-finite entries".into()));
        }
        if !self.matrix.row_iter().any(|r| r.iter().any(|&v| v != 0.0)) {
            return Err(SolveError::InvalidProblem("matrix has no nonzero row".into()));
        }
        let mut seen = Vec::new();
        for col in self.target.column_iter() {
            let ones: Vec<usize> = (0..n).filter(|&i| col[i] == 1.0).collect();
            let zeros = col.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros != n - 1 {
                return Err(SolveError::InvalidProblem(
                    "target columns must be canonical basis vectors".into(),
                ));
            }
            if seen.contains(&ones[0]) {
                return Err(SolveError::InvalidProblem("target columns must be distinct".into()));
            }
            seen.push(ones[0]);
        }
        Ok(())
    }

    /// `T − Mᵀ Vᵀ` for coefficients `v` (`z × q`).
    pub fn residual(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.target - self.matrix.transpose() * v.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    pub feasible: bool,
    /// Sorted row indices with a nonzero coefficient in some column.
    pub support: Vec<usize>,
    /// `z × q`; zero outside the support.
    pub coefficients: DMatrix<f64>,
    /// `max |T − Mᵀ Vᵀ|`.
    pub residual_inf: f64,
    /// ADMM iterations summed over target columns.
    pub iterations: usize,
}

impl SparseSolution {
    fn infeasible(problem: &ReconstructionProblem, residual_inf: f64, iterations: usize) -> Self {
        Self {
            feasible: false,
            support: Vec::new(),
            coefficients: DMatrix::zeros(problem.target.ncols(), problem.matrix.nrows()),
            residual_inf,
            iterations,
        }
    }
}

enum ColumnOutcome {
    Solved { x: DVector<f64>, iterations: usize },
    Infeasible { iterations: usize },
}

/// Orthonormal basis of the orthogonal complement of the orthonormal
/// columns `u`.
fn complement_basis(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let proj = DMatrix::identity(n, n) - u * u.transpose();
    let eig = SymmetricEigen::new(proj);
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    eig.eigenvectors.select_columns(keep.iter())
}

/// Shared per-problem factorisation.
struct Operator {
    /// Truncated `Mᵀ`, `n × q`.
    a: DMatrix<f64>,
    svd: TruncatedSvd,
    /// Orthonormal basis of the complement of the retained range, `n × (n − r)`.
    null: DMatrix<f64>,
}

impl Operator {
    fn new(matrix: &DMatrix<f64>, rank_rtol: f64) -> Self {
        let svd = TruncatedSvd::new(&matrix.transpose(), rank_rtol);
        let a = svd.recompose();
        let null = complement_basis(&svd.u);
        Self { a, svd, null }
    }

    /// Whether the null-space projection of `y` proves `|t − Ax| ≤ β`
    /// infeasible.
    fn certifies_infeasible(&self, y: &DVector<f64>, t: &DVector<f64>, beta: f64) -> bool {
        if self.null.ncols() == 0 {
            return false;
        }
        let c = self.null.tr_mul(y);
        if !(c.norm() > 1e-8 * y.norm()) {
            return false;
        }
        let y = &self.null * c;
        let l1 = y.lp_norm(1);
        if !(l1 > 0.0) {
            return false;
        }
        y.dot(t) - beta * l1 > 1e-12 * l1 * t.amax().max(1.0)
    }
}

/// Elementwise soft threshold with per-coordinate levels `k_i = scale / w_i`.
fn soft_threshold(v: &DVector<f64>, w: &DVector<f64>, scale: f64) -> DVector<f64> {
    v.zip_map(w, |x, wi| x.signum() * (x.abs() - scale / wi).max(0.0))
}

fn block_shrink(v: &DVector<f64>, k: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= k {
        DVector::zeros(v.len())
    } else {
        v * (1.0 - k / norm)
    }
}

/// Primal value `‖t − Ax‖₂ + α‖x‖₁`, or `None` outside the box. Points on
/// a face may overshoot it by rounding, so the box is widened by a multiple
/// of the residual's rounding scale; the caller's box carries a margin.
fn primal_value(op: &Operator, t: &DVector<f64>, alpha: f64, beta: f64, x: &DVector<f64>) -> Option<f64> {
    let s = t - &op.a * x;
    let scale = t.amax() + (op.a.abs() * x.abs()).amax();
    (s.amax() <= beta + 1e-12 * scale).then(|| s.norm() + alpha * x.lp_norm(1))
}

/// Lower bound on the optimum from a multiplier estimate `y`, after scaling
/// `y` into the dual feasible set `‖Aᵀy‖∞ ≤ α`. The box term
/// `β min_{‖u‖₂≤1} ‖y − u‖₁` is bounded above by its value at the radial
/// point and at `direction`, a unit vector.
fn dual_bound(
    op: &Operator,
    t: &DVector<f64>,
    alpha: f64,
    beta: f64,
    y: &DVector<f64>,
    direction: Option<&DVector<f64>>,
) -> f64 {
    let aty = op.a.tr_mul(y).amax();
    let y = if aty > alpha { y * (alpha / aty) } else { y.clone() };
    let norm = y.norm();
    let mut outside = if norm > 1.0 {
        (&y * (1.0 - 1.0 / norm)).lp_norm(1)
    } else {
        0.0
    };
    if let Some(u) = direction {
        outside = outside.min((&y - u).lp_norm(1));
    }
    y.dot(t) - beta * outside
}

/// Coefficients of the least-squares refit of `t` on `rows`.
fn refit_rows(op: &Operator, t: &DVector<f64>, rows: &[usize], rtol: f64) -> DVector<f64> {
    let sub = op.a.select_columns(rows.iter());
    let tm = DMatrix::from_column_slice(t.len(), 1, t.as_slice());
    let coef = lstsq_min_norm(&sub, &tm, rtol);
    let mut x = DVector::zeros(op.a.ncols());
    for (k, &r) in rows.iter().enumerate() {
        x[r] = coef[(k, 0)];
    }
    x
}

/// Multiplier consistent with stationarity on the support of `x`:
/// `a_iᵀ y = α sign(x_i)` for every `i` with `x_i ≠ 0`.
fn support_multiplier(op: &Operator, x: &DVector<f64>, alpha: f64, rtol: f64) -> Option<DVector<f64>> {
    let rows: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    if rows.is_empty() {
        return None;
    }
    let sub_t = op.a.select_columns(rows.iter()).transpose();
    let rhs = DMatrix::from_fn(rows.len(), 1, |k, _| alpha * x[rows[k]].signum());
    Some(lstsq_min_norm(&sub_t, &rhs, rtol).column(0).into_owned())
}

/// Minimiser of `‖t − Ax‖₂ + α σᵀx` over coefficients supported on `rows`
/// with signs `σ`, subject to `(t − Ax)_i = β τ_i` for every `(i, τ_i)` in
/// `active`. Returns the coefficients and, when the residual is nonzero, the
/// multiplier `y = s/‖s‖ + λ` with `λ` supported on `active`. `None` when
/// the face is empty or the objective is unbounded on it.
#[allow(clippy::too_many_arguments)]
fn face_solution(
    op: &Operator,
    t: &DVector<f64>,
    alpha: f64,
    beta: f64,
    rows: &[usize],
    signs: &DVector<f64>,
    active: &[(usize, f64)],
    rtol: f64,
) -> Option<(DVector<f64>, Option<DVector<f64>>)> {
    let a_s = op.a.select_columns(rows.iter());
    let k = rows.len();
    // Coefficients are `x0 + N z`; `ab` holds the active rows of `A_S`.
    let (x0, null, ab) = if active.is_empty() {
        (DVector::zeros(k), DMatrix::identity(k, k), DMatrix::zeros(0, k))
    } else {
        let ab = a_s.select_rows(active.iter().map(|(i, _)| i));
        let rhs = DVector::from_iterator(active.len(), active.iter().map(|&(i, tau)| t[i] - beta * tau));
        let svd = TruncatedSvd::new(&ab, rtol);
        let x0 = &svd.v * svd.u.tr_mul(&rhs).component_div(&svd.s);
        if (&ab * &x0 - &rhs).amax() > 1e-10 * rhs.amax().max(1.0) {
            return None;
        }
        (x0, complement_basis(&svd.v), ab)
    };

    // Minimise `‖c − Gz‖ + gᵀz`. With `G = UΣVᵀ` and `b = Σ⁻¹Vᵀg`, the
    // optimal residual is `c_⊥ + U b h / √(1 − ‖b‖²)`, `h = ‖c_⊥‖`.
    let c = t - &a_s * &x0;
    let g_mat = &a_s * &null;
    let g = null.tr_mul(signs) * alpha;
    let svd = TruncatedSvd::new(&g_mat, rtol);
    let vg = svd.v.tr_mul(&g);
    if (&g - &svd.v * &vg).amax() > 1e-10 * alpha {
        return None;
    }
    let b = vg.component_div(&svd.s);
    let bn = b.norm();
    if !(bn < 1.0) {
        return None;
    }
    let uc = svd.u.tr_mul(&c);
    let c_perp = &c - &svd.u * &uc;
    let shift = &b * (c_perp.norm() / (1.0 - bn * bn).sqrt());
    let z = &svd.v * (&uc - &shift).component_div(&svd.s);
    let xs = x0 + &null * z;
    let mut x = DVector::zeros(op.a.ncols());
    for (k, &r) in rows.iter().enumerate() {
        x[r] = xs[k];
    }

    let s = t - &op.a * &x;
    let norm = s.norm();
    if !(norm > 0.0) {
        return Some((x, None));
    }
    let unit = &s / norm;
    let mut y = unit.clone();
    if !active.is_empty() {
        let rhs = signs * alpha - a_s.tr_mul(&unit);
        let rhs = DMatrix::from_column_slice(k, 1, rhs.as_slice());
        let lambda = lstsq_min_norm(&ab.transpose(), &rhs, rtol);
        for (m, &(i, _)) in active.iter().enumerate() {
            y[i] += lambda[(m, 0)];
        }
    }
    Some((x, Some(y)))
}

const MAX_BASIS_TRIALS: usize = 64;

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Best feasible point among the sparse iterate, its refit on its own
/// support and its minimisers on the faces suggested by `boxed`, if the
/// duality gap against the best available multiplier is within tolerance.
#[allow(clippy::too_many_arguments)]
fn gap_certified(
    op: &Operator,
    t: &DVector<f64>,
    alpha: f64,
    beta: f64,
    z1: &DVector<f64>,
    boxed: &DVector<f64>,
    y: &DVector<f64>,
    settings: &SolverSettings,
) -> Option<DVector<f64>> {
    let rows: Vec<usize> = (0..z1.len()).filter(|&i| z1[i] != 0.0).collect();
    let mut faces = vec![Vec::new()];
    let active: Vec<(usize, f64)> = (0..boxed.len())
        .filter(|&i| boxed[i].abs() >= beta)
        .map(|i| (i, boxed[i].signum()))
        .collect();
    if !active.is_empty() {
        faces.push(active);
    }
    let mut candidates = vec![(z1.clone(), None)];
    let add_faces = |candidates: &mut Vec<_>, pick: &[usize]| {
        let signs = DVector::from_iterator(pick.len(), pick.iter().map(|&r| z1[r].signum()));
        // Box components the face point violates join the active set.
        for face in &faces {
            let mut face = face.clone();
            for _ in 0..=t.len() {
                let Some((x, ym)) = face_solution(op, t, alpha, beta, pick, &signs, &face, settings.rank_rtol) else {
                    break;
                };
                let s = t - &op.a * &x;
                candidates.push((x, ym));
                let added: Vec<(usize, f64)> = (0..s.len())
                    .filter(|&i| s[i].abs() > beta && face.iter().all(|&(j, _)| j != i))
                    .map(|i| (i, s[i].signum()))
                    .collect();
                if added.is_empty() {
                    break;
                }
                face.extend(added);
            }
        }
    };
    if !rows.is_empty() {
        candidates.push((refit_rows(op, t, &rows, settings.rank_rtol), None));
        add_faces(&mut candidates, &rows);
    }
    // An optimum has a solution using at most rank(A) rows; try those when
    // the support is slightly too large.
    let r = op.svd.rank();
    if r > 0 && rows.len() > r && binomial(rows.len(), r) <= MAX_BASIS_TRIALS {
        for pick in rows.iter().copied().combinations(r) {
            candidates.push((refit_rows(op, t, &pick, settings.rank_rtol), None));
            add_faces(&mut candidates, &pick);
        }
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut bound = f64::NEG_INFINITY;
    for (x, ym) in candidates {
        let s = t - &op.a * &x;
        let norm = s.norm();
        let direction = (norm > 0.0).then(|| s / norm);
        bound = bound.max(dual_bound(op, t, alpha, beta, y, direction.as_ref()));
        for m in ym
            .into_iter()
            .chain(support_multiplier(op, &x, alpha, settings.rank_rtol))
        {
            bound = bound.max(dual_bound(op, t, alpha, beta, &m, direction.as_ref()));
        }
        if let Some(v) = primal_value(op, t, alpha, beta, &x) {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, x));
            }
        }
    }
    let (p, x) = best?;
    (p - bound <= settings.abs_tol + settings.rel_tol * p.abs()).then_some(x)
}

/// Solves `(I + 2γAᵀA) x = b + γAᵀc` through the SVD `A = UΣVᵀ`, applying
/// the inverse to each part separately so that large `γ` stays exact.
struct XSolver {
    /// `2γσ²/(1 + 2γσ²)` per singular value.
    damp: DVector<f64>,
    /// `γσ/(1 + 2γσ²)` per singular value.
    gain: DVector<f64>,
}

impl XSolver {
    fn new(svd: &TruncatedSvd, gamma: f64) -> Self {
        let s = &svd.s;
        let damp = s.map(|sv| {
            let g = 2.0 * gamma * sv * sv;
            g / (1.0 + g)
        });
        let gain = s.map(|sv| gamma * sv / (1.0 + 2.0 * gamma * sv * sv));
        Self { damp, gain }
    }

    fn solve(&self, svd: &TruncatedSvd, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let vb = svd.v.tr_mul(b).component_mul(&self.damp);
        let uc = svd.u.tr_mul(c).component_mul(&self.gain);
        b - &svd.v * (vb - uc)
    }
}

/// `A` with unit-norm columns, `Â = A D⁻¹`, and its SVD. The range of `Â`
/// is that of `A`, so the SVD comes from the small factor `ΣVᵀD⁻¹`.
struct Equilibrated {
    a: DMatrix<f64>,
    svd: TruncatedSvd,
    /// Column norms of `A`, with zero columns mapped to one.
    d: DVector<f64>,
}

impl Equilibrated {
    fn new(op: &Operator) -> Self {
        let d = DVector::from_iterator(
            op.a.ncols(),
            op.a.column_iter().map(|c| {
                let n = c.norm();
                if n > 0.0 {
                    n
                } else {
                    1.0
                }
            }),
        );
        let mut a = op.a.clone();
        for (i, mut col) in a.column_iter_mut().enumerate() {
            col /= d[i];
        }
        let mut small = op.svd.v.transpose();
        for (k, mut row) in small.row_iter_mut().enumerate() {
            row *= op.svd.s[k];
        }
        for (i, mut col) in small.column_iter_mut().enumerate() {
            col /= d[i];
        }
        let inner = TruncatedSvd::new(&small, 0.0);
        let svd = TruncatedSvd {
            u: &op.svd.u * inner.u,
            s: inner.s,
            v: inner.v,
        };
        Self { a, svd, d }
    }

    fn unscale(&self, xh: &DVector<f64>) -> DVector<f64> {
        xh.component_div(&self.d)
    }
}

/// Ratio of normalised primal to normalised dual residual.
fn imbalance(primal: f64, primal_scale: f64, dual: f64, dual_scale: f64) -> Option<f64> {
    let p = primal / primal_scale.max(1e-300);
    let d = dual / dual_scale.max(1e-300);
    (p > 0.0 && d > 0.0 && p.is_finite() && d.is_finite()).then(|| (p / d).sqrt())
}

/// Over-relaxation factor applied to the `x` half-step.
const RELAXATION: f64 = 1.6;

/// ADMM on the splitting `z₁ = x`, `z₂ = z₃ = t − Ax`, with `z₁` carrying the
/// ℓ₁ term, `z₂` the ℓ₂ term and `z₃` the box. The two groups have separate
/// penalties because coefficients and residuals live on unrelated scales.
/// The iteration runs on equilibrated columns, `x̂ = D x`, so the ℓ₁ weight
/// of coordinate `i` becomes `α / d_i`.
fn admm_column(
    op: &Operator,
    t: &DVector<f64>,
    alpha: f64,
    beta: f64,
    x_init: DVector<f64>,
    settings: &SolverSettings,
) -> Result<ColumnOutcome, SolveError> {
    let eq = Equilibrated::new(op);
    let a = &eq.a;
    let mut x = x_init.component_mul(&eq.d);
    let mut s = t - a * &x;
    let mut z1 = x.clone();
    let mut z2 = s.clone();
    let mut z3 = s.map(|v| v.clamp(-beta, beta));
    let mut u1 = DVector::zeros(x.len());
    let mut u2 = DVector::zeros(t.len());
    let mut u3 = DVector::zeros(t.len());
    let (mut rho_x, mut rho_s) = (1.0_f64, 1.0_f64);
    let mut xs = XSolver::new(&eq.svd, rho_s / rho_x);
    let two_t = t * 2.0;
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);

    for k in 1..=settings.max_iter {
        x = xs.solve(&eq.svd, &(&z1 - &u1), &(&two_t - &z2 + &u2 - &z3 + &u3));
        s = t - a * &x;
        let xh = &x * RELAXATION + &z1 * (1.0 - RELAXATION);
        let sh2 = &s * RELAXATION + &z2 * (1.0 - RELAXATION);
        let sh3 = &s * RELAXATION + &z3 * (1.0 - RELAXATION);

        let z1_old = std::mem::replace(&mut z1, soft_threshold(&(&xh + &u1), &eq.d, alpha / rho_x));
        let z2_old = std::mem::replace(&mut z2, block_shrink(&(&sh2 + &u2), 1.0 / rho_s));
        let z3_old = std::mem::replace(&mut z3, (&sh3 + &u3).map(|v| v.clamp(-beta, beta)));

        let r1 = &x - &z1;
        let r2 = &s - &z2;
        let r3 = &s - &z3;
        u1 += &xh - &z1;
        u2 += &sh2 - &z2;
        u3 += &sh3 - &z3;

        let dual_x = (&z1 - &z1_old) * rho_x;
        let dual_s = a.tr_mul(&((&z2 - &z2_old) + (&z3 - &z3_old))) * rho_s;
        let lambda_x = &u1 * rho_x;
        let lambda_s = a.tr_mul(&(&u2 + &u3)) * rho_s;
        primal = r1.amax().max(r2.amax()).max(r3.amax());
        dual = (&dual_x - &dual_s).amax();
        let scale_x = x.amax().max(z1.amax());
        let scale_s = t.amax().max((t - &s).amax()).max(z2.amax()).max(z3.amax());
        let eps_p = settings.abs_tol + settings.rel_tol * scale_x.max(scale_s);
        let eps_d = settings.abs_tol + settings.rel_tol * lambda_x.amax().max(lambda_s.amax());

        if primal <= eps_p && dual <= eps_d {
            return Ok(ColumnOutcome::Solved {
                x: eq.unscale(&z1),
                iterations: k,
            });
        }
        if k % 10 == 0 {
            let y = (&u2 + &u3) * rho_s;
            if let Some(x) = gap_certified(op, t, alpha, beta, &eq.unscale(&z1), &z3, &y, settings) {
                return Ok(ColumnOutcome::Solved { x, iterations: k });
            }
            // A persistent box violation grows u₃ linearly; its increment
            // is the separating direction.
            if r3.amax() > eps_p && op.certifies_infeasible(&r3, t, beta) {
                return Ok(ColumnOutcome::Infeasible { iterations: k });
            }
        }

        // Rebalance often at first, then at doubling intervals so that the
        // penalties eventually stay fixed.
        let period = 50;
        if k % period == 0 && (k <= 20 * period || (k / period).is_power_of_two()) {
            let mut changed = false;
            if let Some(f) = imbalance(r1.amax(), scale_x, dual_x.amax(), lambda_x.amax()) {
                if !(0.2..=5.0).contains(&f) {
                    let new = (rho_x * f).clamp(1e-12, 1e12);
                    u1 *= rho_x / new;
                    rho_x = new;
                    changed = true;
                }
            }
            if let Some(f) = imbalance(r2.amax().max(r3.amax()), scale_s, dual_s.amax(), lambda_s.amax()) {
                if !(0.2..=5.0).contains(&f) {
                    let new = (rho_s * f).clamp(1e-12, 1e12);
                    u2 *= rho_s / new;
                    u3 *= rho_s / new;
                    rho_s = new;
                    changed = true;
                }
            }
            if changed {
                xs = XSolver::new(&eq.svd, rho_s / rho_x);
            }
        }
    }
    Err(SolveError::NotConverged {
        iterations: settings.max_iter,
        primal,
        dual,
    })
}

fn residual_inf(problem: &ReconstructionProblem, v: &DMatrix<f64>) -> f64 {
    max_abs(&problem.residual(v))
}

fn support_of(v: &DMatrix<f64>) -> Vec<usize> {
    (0..v.ncols())
        .filter(|&i| v.column(i).iter().any(|&x| x != 0.0))
        .collect()
}

/// Least-squares refit of target column `c` on `rows`, scattered into a
/// length-`q` coefficient vector.
fn refit_column(problem: &ReconstructionProblem, rows: &[usize], c: usize, rtol: f64) -> DVector<f64> {
    let sub_t = problem.matrix.select_rows(rows.iter()).transpose();
    let t = DMatrix::from_column_slice(problem.target.nrows(), 1, problem.target.column(c).as_slice());
    let coef = lstsq_min_norm(&sub_t, &t, rtol);
    let mut out = DVector::zeros(problem.matrix.nrows());
    for (k, &r) in rows.iter().enumerate() {
        out[r] = coef[(k, 0)];
    }
    out
}

/// Solve the constrained ℓ₁-regularised reconstruction problem.
///
/// Returns the raw optimiser (after zeroing negligible coefficients), or a
/// solution with `feasible = false` when no coefficients meet the `β`
/// tolerance.
pub fn solve(problem: &ReconstructionProblem, settings: &SolverSettings) -> Result<SparseSolution, SolveError> {
    problem.validate()?;
    let q = problem.matrix.nrows();
    let z = problem.target.ncols();
    let op = Operator::new(&problem.matrix, settings.rank_rtol);

    let mut v = DMatrix::zeros(z, q);
    let mut iterations = 0;
    for c in 0..z {
        let t: DVector<f64> = problem.target.column(c).into_owned();
        let r_ls = op.svd.range_residual(&t);
        let x_ls = op
            .svd
            .solve(&DMatrix::from_column_slice(t.len(), 1, t.as_slice()))
            .column(0)
            .into_owned();
        let ls_feasible = r_ls.amax() <= problem.beta;
        if !ls_feasible && op.certifies_infeasible(&r_ls, &t, problem.beta) {
            return Ok(SparseSolution::infeasible(problem, r_ls.amax(), iterations));
        }
        // Run against a slightly tightened box so that an iterate meeting
        // the ADMM tolerance still satisfies the true one.
        let margin = (0.01 * problem.beta).min(10.0 * (settings.abs_tol + settings.rel_tol));
        match admm_column(&op, &t, problem.alpha, problem.beta - margin, x_ls.clone(), settings)? {
            ColumnOutcome::Infeasible { iterations: k } => {
                iterations += k;
                return Ok(SparseSolution::infeasible(problem, r_ls.amax(), iterations));
            }
            ColumnOutcome::Solved { x, iterations: k } => {
                iterations += k;
                let mut x = x;
                let xmax = x.amax();
                x.apply(|e| {
                    if e.abs() < settings.zero_rtol * xmax {
                        *e = 0.0
                    }
                });
                // ADMM meets the box only to its tolerance. Refit on the
                // support first, then fall back to moving towards the
                // interior least-squares point.
                let col_res = |x: &DVector<f64>| (&t - problem.matrix.tr_mul(x)).amax();
                if col_res(&x) > problem.beta {
                    let rows: Vec<usize> = (0..q).filter(|&i| x[i] != 0.0).collect();
                    let refit = refit_column(problem, &rows, c, settings.rank_rtol);
                    if col_res(&refit) <= problem.beta {
                        x = refit;
                    } else if col_res(&x_ls) < problem.beta {
                        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            let xm = &x * (1.0 - mid) + &x_ls * mid;
                            if col_res(&xm) <= problem.beta {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        x = &x * (1.0 - hi) + &x_ls * hi;
                    }
                }
                v.set_row(c, &x.transpose());
            }
        }
    }

    let res = residual_inf(problem, &v);
    let support = support_of(&v);
    if res > problem.beta || support.is_empty() {
        return Ok(SparseSolution::infeasible(problem, res, iterations));
    }
    Ok(SparseSolution {
        feasible: true,
        support,
        coefficients: v,
        residual_inf: res,
        iterations,
    })
}

/// Row order used by [`prune`]: by decreasing coefficient magnitude (the
/// largest over target columns), ties by ascending row index. Rows below
/// `zero_rtol · max` are dropped.
pub fn prune_order(raw: &SparseSolution, zero_rtol: f64) -> Vec<usize> {
    let q = raw.coefficients.ncols();
    let score: Vec<f64> = (0..q).map(|i| raw.coefficients.column(i).amax()).collect();
    let smax = score.iter().copied().fold(0.0_f64, f64::max);
    let mut order: Vec<usize> = (0..q)
        .filter(|&i| score[i] > 0.0 && score[i] >= zero_rtol * smax)
        .collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order
}

/// Least-squares refit of every target column on `rows`.
pub fn refit(problem: &ReconstructionProblem, rows: &[usize], rank_rtol: f64) -> DMatrix<f64> {
    let z = problem.target.ncols();
    let mut v = DMatrix::zeros(z, problem.matrix.nrows());
    for c in 0..z {
        v.set_row(c, &refit_column(problem, rows, c, rank_rtol).transpose());
    }
    v
}

/// One step of the greedy pruning path.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneStep {
    pub rows: Vec<usize>,
    pub residual_inf: f64,
    pub residual_norm: f64,
}

/// The full greedy path over [`prune_order`], without stopping at `β`.
pub fn prune_path(problem: &ReconstructionProblem, raw: &SparseSolution, settings: &SolverSettings) -> Vec<PruneStep> {
    let order = prune_order(raw, settings.zero_rtol);
    (1..=order.len())
        .map(|k| {
            let rows = order[..k].to_vec();
            let v = refit(problem, &rows, settings.rank_rtol);
            let r = problem.residual(&v);
            PruneStep {
                rows,
                residual_inf: max_abs(&r),
                residual_norm: r.norm(),
            }
        })
        .collect()
}

/// Keep the fewest largest-magnitude rows of `raw` whose least-squares
/// refit meets `β`.
pub fn prune(
    problem: &ReconstructionProblem,
    raw: &SparseSolution,
    settings: &SolverSettings,
) -> Result<SparseSolution, SolveError> {
    if !raw.feasible {
        return Err(SolveError::InvalidProblem("cannot prune an infeasible solution".into()));
    }
    let order = prune_order(raw, settings.zero_rtol);
    let mut last = f64::INFINITY;
    for k in 1..=order.len() {
        let v = refit(problem, &order[..k], settings.rank_rtol);
        let res = residual_inf(problem, &v);
        if res <= problem.beta {
            return Ok(SparseSolution {
                feasible: true,
                support: support_of(&v),
                coefficients: v,
                residual_inf: res,
                iterations: raw.iterations,
            });
        }
        last = res;
    }
    Ok(SparseSolution::infeasible(problem, last, raw.iterations))
}
