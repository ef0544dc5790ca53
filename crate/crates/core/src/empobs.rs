//! Empirical observability matrices and Gramian measures.
//!
//! For a window of `w` samples anchored at `x0`, every state is perturbed by
//! `±ε` and the system is simulated under the nominal inputs. Column `j` of
//! the matrix holds `(y⁺ʲ_k − y⁻ʲ_k) / 2ε` stacked time-major, so row
//! `k·p + s` is output `s` at sample `k`.

use crate::linalg::wrap_angle;
use crate::numfmt::sig12;
use crate::par;
use crate::sysmodel::{simulate, InputSchedule, OutputKind, SimError, SystemModel, Trajectory};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::io::{self, Write};
use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EmpObsError {
    #[error("simulation failed for window anchored at sample {anchor}: {source}")]
    Simulation {
        anchor: usize,
        #[source]
        source: SimError,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Provenance of one matrix row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct RowMeta {
    pub time_index: usize,
    pub output_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalObservabilityMatrix {
    pub entries: DMatrix<f64>,
    pub row_meta: Vec<RowMeta>,
    pub epsilon: f64,
    pub dt: f64,
    pub x0: DVector<f64>,
}

impl EmpiricalObservabilityMatrix {
    /// Wrap a given matrix whose rows are laid out time-major with `p`
    /// outputs per sample. `epsilon` and `dt` are set to 1.
    pub fn from_entries(entries: DMatrix<f64>, p: usize) -> Result<Self, EmpObsError> {
        if p == 0 || !entries.nrows().is_multiple_of(p) {
            return Err(EmpObsError::InvalidArgument(format!(
                "{} rows is not a multiple of {p} outputs",
                entries.nrows()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(EmpObsError::NonFinite);
        }
        let row_meta = (0..entries.nrows())
            .map(|r| RowMeta {
                time_index: r / p,
                output_index: r % p,
            })
            .collect();
        let n = entries.ncols();
        Ok(Self {
            entries,
            row_meta,
            epsilon: 1.0,
            dt: 1.0,
            x0: DVector::zeros(n),
        })
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// Rows `idx` of the matrix, in the given order.
    pub fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        self.entries.select_rows(idx.iter())
    }

    /// Keep only rows whose output is in `outputs`.
    pub fn select_outputs(&self, outputs: &[usize]) -> Self {
        let keep: Vec<usize> = (0..self.nrows())
            .filter(|&r| outputs.contains(&self.row_meta[r].output_index))
            .collect();
        Self {
            entries: self.rows(&keep),
            row_meta: keep.iter().map(|&r| self.row_meta[r]).collect(),
            epsilon: self.epsilon,
            dt: self.dt,
            x0: self.x0.clone(),
        }
    }

    /// Multiply every row of output `s` by `scales[s]`.
    pub fn scale_outputs(&self, scales: &[f64]) -> Self {
        let mut out = self.clone();
        for (r, meta) in self.row_meta.iter().enumerate() {
            let c = scales[meta.output_index];
            out.entries.row_mut(r).scale_mut(c);
        }
        out
    }

    /// Row-major CSV of the entries, no header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for row in self.entries.row_iter() {
            let line: Vec<String> = row.iter().map(|&v| sig12(v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Sidecar for [`write_csv`](Self::write_csv): one line per row.
    pub fn write_row_meta_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "row,time_index,output_index")?;
        for (r, m) in self.row_meta.iter().enumerate() {
            writeln!(w, "{r},{},{}", m.time_index, m.output_index)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Outputs `y_k(x0 ± ε e_j)` for `k` in `0..inputs.len()`.
pub fn perturbed_outputs(
    system: &SystemModel,
    x0: &DVector<f64>,
    inputs: &InputSchedule,
    j: usize,
    sign: Sign,
    epsilon: f64,
) -> Result<Vec<DVector<f64>>, SimError> {
    if j >= system.n() {
        return Err(SimError::InvalidArgument(format!(
            "state index {j} out of range for n = {}",
            system.n()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if inputs.is_empty() {
        return Err(SimError::InvalidArgument("empty input schedule".into()));
    }
    let mut x = x0.clone();
    x[j] += sign.factor() * epsilon;
    Ok(simulate(system, &x, inputs, inputs.len())?.outputs)
}

/// `w`-step empirical observability matrix anchored at `x0`.
///
/// `inputs` must hold at least `w − 1` values; only the first `w` are used.
pub fn build_matrix(
    system: &SystemModel,
    x0: &DVector<f64>,
    inputs: &InputSchedule,
    w: usize,
    epsilon: f64,
) -> Result<EmpiricalObservabilityMatrix, EmpObsError> {
    build_matrix_at(system, x0, inputs, w, epsilon, 0)
}

fn build_matrix_at(
    system: &SystemModel,
    x0: &DVector<f64>,
    inputs: &InputSchedule,
    w: usize,
    epsilon: f64,
    anchor: usize,
) -> Result<EmpiricalObservabilityMatrix, EmpObsError> {
    if w == 0 {
        return Err(EmpObsError::InvalidArgument("window length must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(EmpObsError::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if inputs.len() + 1 < w {
        return Err(EmpObsError::InvalidArgument(format!(
            "window of {w} samples needs {} inputs, got {}",
            w - 1,
            inputs.len()
        )));
    }
    if x0.len() != system.n() {
        return Err(EmpObsError::Simulation {
            anchor,
            source: SimError::DimensionMismatch {
                what: "initial state",
                expected: system.n(),
                got: x0.len(),
            },
        });
    }
    // Pad so that the schedule covers exactly w samples; the last input
    // never influences an output inside the window.
    let mut values: Vec<DVector<f64>> = inputs.values.iter().take(w).cloned().collect();
    while values.len() < w {
        values.push(DVector::zeros(system.m()));
    }
    let schedule = InputSchedule { values, dt: inputs.dt };

    let n = system.n();
    let p = system.p();
    let tasks: Vec<(usize, Sign)> = (0..n).flat_map(|j| [(j, Sign::Plus), (j, Sign::Minus)]).collect();
    let runs = par::try_map(&tasks, |&(j, sign)| {
        perturbed_outputs(system, x0, &schedule, j, sign, epsilon)
    })
    .map_err(|source| EmpObsError::Simulation { anchor, source })?;

    let kinds = system.output_kinds();
    let mut entries = DMatrix::zeros(w * p, n);
    for j in 0..n {
        let (plus, minus) = (&runs[2 * j], &runs[2 * j + 1]);
        for k in 0..w {
            for s in 0..p {
                let mut dy = plus[k][s] - minus[k][s];
                if kinds[s] == OutputKind::Angular {
                    dy = wrap_angle(dy);
                }
                entries[(k * p + s, j)] = dy / (2.0 * epsilon);
            }
        }
    }
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(EmpObsError::NonFinite);
    }
    let row_meta = (0..w * p)
        .map(|r| RowMeta {
            time_index: r / p,
            output_index: r % p,
        })
        .collect();
    Ok(EmpiricalObservabilityMatrix {
        entries,
        row_meta,
        epsilon,
        dt: inputs.dt,
        x0: x0.clone(),
    })
}

/// One matrix per anchor `t = 0, …, len − w`, each built from the nominal
/// state `x(t)` and the nominal inputs restricted to the window.
pub fn sliding_windows(
    system: &SystemModel,
    nominal: &Trajectory,
    inputs: &InputSchedule,
    w: usize,
    epsilon: f64,
) -> Result<Vec<EmpiricalObservabilityMatrix>, EmpObsError> {
    if w == 0 || w > nominal.len() {
        return Err(EmpObsError::InvalidArgument(format!(
            "window length {w} does not fit a trajectory of {} samples",
            nominal.len()
        )));
    }
    if inputs.len() + 1 < nominal.len() {
        return Err(EmpObsError::InvalidArgument(format!(
            "input schedule of {} values is too short for {} samples",
            inputs.len(),
            nominal.len()
        )));
    }
    let anchors: Vec<usize> = (0..=nominal.len() - w).collect();
    par::try_map(&anchors, |&t| {
        let end = (t + w).min(inputs.len());
        let window = InputSchedule {
            values: inputs.values[t..end].to_vec(),
            dt: inputs.dt,
        };
        build_matrix_at(system, &nominal.states[t], &window, w, epsilon, t)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianMeasures {
    pub gramian: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `1 / λ_min`, or `+∞` when the Gramian is numerically singular.
    pub unobservability_index: f64,
    /// `λ_max / λ_min`, or `+∞` when the Gramian is numerically singular.
    pub estimation_condition_number: f64,
}

/// `W ≈ OᵀO·Δt` and its eigenvalue measures. Eigenvalues below `σ0²·Δt`
/// (singular values of `O` below `σ0`) count as zero.
pub fn empirical_gramian(m: &EmpiricalObservabilityMatrix, sigma0: f64) -> Result<GramianMeasures, EmpObsError> {
    if m.entries.iter().any(|v| !v.is_finite()) {
        return Err(EmpObsError::NonFinite);
    }
    let gramian = m.entries.transpose() * &m.entries * m.dt;
    Ok(gramian_measures(gramian, sigma0 * sigma0 * m.dt))
}

pub(crate) fn gramian_measures(gramian: DMatrix<f64>, threshold: f64) -> GramianMeasures {
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(gramian.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    let lmin = eigenvalues.first().copied().unwrap_or(0.0);
    let lmax = eigenvalues.last().copied().unwrap_or(0.0);
    let (unobservability_index, estimation_condition_number) = if lmax <= 0.0 || lmin < threshold || lmin <= 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (1.0 / lmin, lmax / lmin)
    };
    GramianMeasures {
        gramian,
        eigenvalues,
        unobservability_index,
        estimation_condition_number,
    }
}
