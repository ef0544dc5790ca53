//! Iterated sparse row selection and per-state observability measures.
//!
//! [`run`] repeatedly asks [`sparsereco`](crate::sparsereco) for a sparse set
//! of rows reconstructing the target basis vector(s), accumulates those rows,
//! scores the accumulated subset with a rank-truncated squared condition
//! number and removes the rows from the candidate pool. It stops when the
//! reconstruction becomes infeasible. The reported measure is the minimum
//! score over iterations (`+∞` if the first reconstruction already fails).

use crate::empobs::{EmpiricalObservabilityMatrix, RowMeta};
use crate::linalg::{lstsq_min_norm, max_abs, numerical_rank, singular_values};
use crate::sparsereco::{self, ReconstructionProblem, SolveError, SolverSettings};
use itertools::Itertools;
use nalgebra::DMatrix;
use num_bigint::BigUint;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EisoError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("no singular value reaches sigma0 = {sigma0:e}")]
    BelowThreshold { sigma0: f64 },
    #[error("exhaustive search over {rows} rows exceeds the cap of {cap}")]
    TooLarge { rows: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EisoParams {
    /// Sparsity weight of the reconstruction objective.
    pub alpha: f64,
    /// Elementwise reconstruction tolerance.
    pub beta: f64,
    /// Singular-value threshold. Absolute when scoring a row subset,
    /// relative to `σ_max` when truncating the candidate matrix for the
    /// reconstruction.
    pub sigma0: f64,
    pub max_iterations: usize,
    pub solver: SolverSettings,
}

impl Default for EisoParams {
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            beta: 1e-3,
            sigma0: 1e-7,
            max_iterations: 200,
            solver: SolverSettings::default(),
        }
    }
}

impl EisoParams {
    pub fn new(alpha: f64, beta: f64, sigma0: f64) -> Self {
        Self {
            alpha,
            beta,
            sigma0,
            ..Self::default()
        }
    }

    fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            rank_rtol: self.sigma0,
            ..self.solver
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Rows (indices into the original matrix) selected at this iteration.
    pub new_rows: Vec<usize>,
    pub new_row_meta: Vec<RowMeta>,
    /// Every row selected so far, sorted.
    pub cumulative_rows: Vec<usize>,
    /// Singular values `≥ σ0` of the cumulative subset, descending.
    pub retained_singular_values: Vec<f64>,
    pub kappa_squared: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EisoResult {
    pub target_states: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
    pub kappa_min: f64,
    pub observable: bool,
    /// Iterations whose reconstruction succeeded, including any whose
    /// subset had no singular value above `σ0`.
    pub iterations_used: usize,
}

impl EisoResult {
    /// Record with the smallest `κ²` (first one on ties).
    pub fn best(&self) -> Option<&IterationRecord> {
        self.iterations
            .iter()
            .fold(None, |best: Option<&IterationRecord>, r| match best {
                Some(b) if b.kappa_squared <= r.kappa_squared => Some(b),
                _ => Some(r),
            })
    }
}

/// Singular values `≥ sigma0` of `subset` and their squared max/min ratio.
pub fn truncated_measures(subset: &DMatrix<f64>, sigma0: f64) -> Result<(Vec<f64>, f64), EisoError> {
    let retained: Vec<f64> = singular_values(subset).into_iter().filter(|&s| s >= sigma0).collect();
    match (retained.first(), retained.last()) {
        (Some(&hi), Some(&lo)) => {
            let k = hi / lo;
            Ok((retained, k * k))
        }
        _ => Err(EisoError::BelowThreshold { sigma0 }),
    }
}

fn check_targets(n: usize, targets: &[usize]) -> Result<(), EisoError> {
    if targets.is_empty() {
        return Err(EisoError::InvalidTargets("no target states".into()));
    }
    for (i, &t) in targets.iter().enumerate() {
        if t >= n {
            return Err(EisoError::InvalidTargets(format!("state {t} out of range for n = {n}")));
        }
        if targets[..i].contains(&t) {
            return Err(EisoError::InvalidTargets(format!("state {t} listed twice")));
        }
    }
    Ok(())
}

/// Iterated sparse selection for one or more target states.
pub fn run(m: &EmpiricalObservabilityMatrix, targets: &[usize], params: &EisoParams) -> Result<EisoResult, EisoError> {
    check_targets(m.ncols(), targets)?;
    let settings = params.solver_settings();
    let mut remaining: Vec<usize> = (0..m.nrows()).collect();
    let mut cumulative: Vec<usize> = Vec::new();
    let mut records = Vec::new();
    let mut used = 0;

    for iteration in 1..=params.max_iterations {
        // Deleting rows is equivalent to zeroing them; all-zero rows can
        // never help a reconstruction.
        remaining.retain(|&r| m.entries.row(r).iter().any(|&v| v != 0.0));
        if remaining.is_empty() {
            break;
        }
        let candidate = m.rows(&remaining);
        let problem = ReconstructionProblem::new(candidate, targets, params.alpha, params.beta)?;
        let raw = sparsereco::solve(&problem, &settings)?;
        if !raw.feasible {
            break;
        }
        let pruned = sparsereco::prune(&problem, &raw, &settings)?;
        if !pruned.feasible {
            break;
        }
        used += 1;
        let new_rows: Vec<usize> = pruned.support.iter().map(|&k| remaining[k]).collect();
        cumulative.extend(&new_rows);
        cumulative.sort_unstable();
        remaining.retain(|r| !new_rows.contains(r));

        match truncated_measures(&m.rows(&cumulative), params.sigma0) {
            Ok((retained, kappa_squared)) => records.push(IterationRecord {
                iteration,
                new_row_meta: new_rows.iter().map(|&r| m.row_meta[r]).collect(),
                new_rows,
                cumulative_rows: cumulative.clone(),
                retained_singular_values: retained,
                kappa_squared,
            }),
            Err(EisoError::BelowThreshold { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    let kappa_min = records.iter().map(|r| r.kappa_squared).fold(f64::INFINITY, f64::min);
    Ok(EisoResult {
        target_states: targets.to_vec(),
        iterations: records,
        observable: kappa_min.is_finite(),
        kappa_min,
        iterations_used: used,
    })
}

/// [`run`] for a combination of at least two states.
pub fn run_multi(
    m: &EmpiricalObservabilityMatrix,
    targets: &[usize],
    params: &EisoParams,
) -> Result<EisoResult, EisoError> {
    if targets.len() < 2 {
        return Err(EisoError::InvalidTargets(
            "a combination needs at least two states".into(),
        ));
    }
    run(m, targets, params)
}

/// Rank test: state `j` is observable iff appending `e_j` to `Mᵀ` leaves
/// its numerical rank unchanged (rank counts `σ ≥ sigma0·σ_max`).
pub fn rank_augmentation_check(m: &DMatrix<f64>, j: usize, sigma0: f64) -> bool {
    let n = m.ncols();
    assert!(j < n, "state index out of range");
    let mt = m.transpose();
    let mut aug = mt.clone().insert_column(mt.ncols(), 0.0);
    aug[(j, mt.ncols())] = 1.0;
    numerical_rank(&aug, sigma0) == numerical_rank(&mt, sigma0)
}

/// Number of nonempty row subsets of a matrix with `rows` rows, `2^rows − 1`.
pub fn combination_count(rows: usize) -> BigUint {
    assert!(rows >= 1, "need at least one row");
    (BigUint::from(1u8) << rows) - 1u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_kappa_squared: f64,
    pub best_subset: Vec<usize>,
}

pub const DEFAULT_ORACLE_CAP: usize = 20;

/// Best truncated `κ²` over every row subset whose minimum-norm
/// least-squares reconstruction of the targets meets `beta`.
///
/// Subsets are visited by size, then lexicographically; the first subset
/// reaching the minimum wins. Meant for small test fixtures.
pub fn exhaustive_oracle(
    m: &DMatrix<f64>,
    targets: &[usize],
    beta: f64,
    sigma0: f64,
    cap: usize,
) -> Result<OracleResult, EisoError> {
    let q = m.nrows();
    let n = m.ncols();
    if q > cap {
        return Err(EisoError::TooLarge { rows: q, cap });
    }
    check_targets(n, targets)?;
    let mut target = DMatrix::zeros(n, targets.len());
    for (c, &j) in targets.iter().enumerate() {
        target[(j, c)] = 1.0;
    }

    let mut best = OracleResult {
        best_kappa_squared: f64::INFINITY,
        best_subset: Vec::new(),
    };
    for size in 1..=q {
        for subset in (0..q).combinations(size) {
            let rows = m.select_rows(subset.iter());
            let coef = lstsq_min_norm(&rows.transpose(), &target, sigma0);
            let residual = &target - rows.transpose() * coef;
            if max_abs(&residual) > beta {
                continue;
            }
            if let Ok((_, k2)) = truncated_measures(&rows, sigma0) {
                if k2 < best.best_kappa_squared {
                    best = OracleResult {
                        best_kappa_squared: k2,
                        best_subset: subset.clone(),
                    };
                }
            }
        }
    }
    Ok(best)
}
