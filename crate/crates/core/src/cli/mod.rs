//! Config-driven experiments.
//!
//! [`run_experiment`] simulates the nominal trajectory of a configured
//! system, builds one empirical observability matrix per sliding window and
//! runs E-ISO for every (window, sensor subset, target set) combination.
//! [`sensor_selection_study`] compares Gramian conditioning with the worst
//! per-state measure across alternative output matrices of a linear system.
//!
//! Scaling matters: the measures are not invariant to the units of states
//! and outputs. Choose state units so that all states have comparable
//! magnitudes, and use `output_scales` to weight outputs by their expected
//! noise levels. Outputs are never normalised automatically.

pub mod config;
pub mod report;

pub use config::{ConfigError, ExperimentConfig};
pub use report::{ExperimentReport, ReportError, SensorReport};

use crate::eiso::{self, EisoError};
use crate::empobs::{self, EmpObsError, EmpiricalObservabilityMatrix};
use crate::par;
use crate::sysmodel::{simulate, SimError};
use report::{GramianRow, IterationRow, SensorRow, WindowRow};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("simulation of the nominal trajectory failed: {0}")]
    Nominal(#[source] SimError),
    #[error("window {window}: {source}")]
    Matrix {
        window: usize,
        #[source]
        source: EmpObsError,
    },
    #[error("window {window}, targets {targets:?}: {source}")]
    Eiso {
        window: usize,
        targets: Vec<usize>,
        #[source]
        source: EisoError,
    },
    #[error("sensor set {name:?}: {message}")]
    Sensor { name: String, message: String },
    #[error("writing reports: {0}")]
    Report(#[from] ReportError),
}

impl RunError {
    /// Process exit code: 2 for configuration errors, 3 for numerical
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Report(_) => 1,
            _ => 3,
        }
    }
}

fn window_matrices(cfg: &ExperimentConfig) -> Result<Vec<EmpiricalObservabilityMatrix>, RunError> {
    let system = cfg.build_system(None)?;
    let schedule = cfg.schedule()?;
    let nominal = simulate(&system, &cfg.x0(), &schedule, schedule.len()).map_err(RunError::Nominal)?;
    let mut windows = empobs::sliding_windows(&system, &nominal, &schedule, cfg.window, cfg.epsilon).map_err(
        |source| match source {
            EmpObsError::Simulation { anchor, .. } => RunError::Matrix { window: anchor, source },
            source => RunError::Matrix { window: 0, source },
        },
    )?;
    if let Some(scales) = &cfg.output_scales {
        for m in &mut windows {
            *m = m.scale_outputs(scales);
        }
    }
    Ok(windows)
}

/// Run every (window, sensor subset, target set) combination of `cfg`.
///
/// Rows are ordered by window, then sensor subset, then target set, in
/// config order, whatever the degree of parallelism.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, RunError> {
    let windows = window_matrices(cfg)?;
    let p = cfg.build_system(None)?.p();
    let subsets: Vec<Vec<usize>> = match &cfg.sensor_subsets {
        Some(s) => s.clone(),
        None => vec![(0..p).collect()],
    };
    let dt = cfg.system.dt();

    let views: Vec<(usize, usize, EmpiricalObservabilityMatrix)> = windows
        .iter()
        .enumerate()
        .flat_map(|(w, m)| {
            subsets.iter().enumerate().map(move |(s, outs)| {
                let view = if outs.len() == p {
                    m.clone()
                } else {
                    m.select_outputs(outs)
                };
                (w, s, view)
            })
        })
        .collect();

    let gramians = par::try_map(&views, |(w, _, m)| {
        empobs::empirical_gramian(m, cfg.eiso.sigma0).map_err(|source| RunError::Matrix { window: *w, source })
    })?;

    let tasks: Vec<(usize, usize)> = (0..views.len())
        .flat_map(|v| (0..cfg.targets.len()).map(move |t| (v, t)))
        .collect();
    let results = par::try_map(&tasks, |&(v, t)| {
        let (w, _, m) = &views[v];
        eiso::run(m, &cfg.targets[t], &cfg.eiso).map_err(|source| RunError::Eiso {
            window: *w,
            targets: cfg.targets[t].clone(),
            source,
        })
    })?;

    let mut report = ExperimentReport::default();
    for ((w, s, _), g) in views.iter().zip(&gramians) {
        report.gramian_summary.push(GramianRow {
            window: *w,
            anchor_time: *w as f64 * dt,
            sensor_subset: subsets[*s].clone(),
            estimation_condition_number: g.estimation_condition_number,
            unobservability_index: g.unobservability_index,
        });
    }
    for (&(v, t), res) in tasks.iter().zip(&results) {
        let (w, s, m) = &views[v];
        let g = &gramians[v];
        let anchor_time = *w as f64 * dt;
        let rows_used = res
            .best()
            .map(|b| b.cumulative_rows.iter().map(|&r| m.row_meta[r]).collect())
            .unwrap_or_default();
        report.windows.push(WindowRow {
            window: *w,
            anchor_time,
            sensor_subset: subsets[*s].clone(),
            target_set: cfg.targets[t].clone(),
            kappa_min: res.kappa_min,
            observable: res.observable,
            iterations_used: res.iterations_used,
            rows_used,
            estimation_condition_number: g.estimation_condition_number,
            unobservability_index: g.unobservability_index,
        });
        for rec in &res.iterations {
            report.iterations.push(IterationRow {
                window: *w,
                anchor_time,
                sensor_subset: subsets[*s].clone(),
                target_set: cfg.targets[t].clone(),
                iteration: rec.iteration,
                new_rows: rec.new_row_meta.clone(),
                rows_total: rec.cumulative_rows.len(),
                retained_rank: rec.retained_singular_values.len(),
                kappa_squared: rec.kappa_squared,
            });
        }
    }
    Ok(report)
}

/// Gramian condition number and per-state `κ_min` for every configured
/// sensor set, using the first window of the trajectory.
pub fn sensor_selection_study(cfg: &ExperimentConfig) -> Result<SensorReport, RunError> {
    if cfg.sensor_sets.is_empty() {
        return Err(ConfigError::Invalid {
            field: "sensor_sets".into(),
            message: "the sensors command needs at least one sensor set".into(),
        }
        .into());
    }
    let schedule = cfg.schedule()?;
    let x0 = cfg.x0();
    let n = x0.len();
    let states: Vec<usize> = (0..n).collect();

    let sensors = par::try_map(&cfg.sensor_sets, |set| {
        let fail = |message: String| RunError::Sensor {
            name: set.name.clone(),
            message,
        };
        let system = cfg.build_system(Some(&set.c))?;
        let mut m =
            empobs::build_matrix(&system, &x0, &schedule, cfg.window, cfg.epsilon).map_err(|e| fail(e.to_string()))?;
        if let Some(scales) = &cfg.output_scales {
            if scales.len() == system.p() {
                m = m.scale_outputs(scales);
            }
        }
        let g = empobs::empirical_gramian(&m, cfg.eiso.sigma0).map_err(|e| fail(e.to_string()))?;
        let kappa_min = states
            .iter()
            .map(|&j| eiso::run(&m, &[j], &cfg.eiso).map(|r| r.kappa_min))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| fail(e.to_string()))?;
        let worst = kappa_min.iter().copied().fold(0.0, f64::max);
        Ok::<_, RunError>(SensorRow {
            sensor_set: set.name.clone(),
            outputs: system.p(),
            gramian_condition_number: g.estimation_condition_number,
            unobservability_index: g.unobservability_index,
            kappa_min,
            worst_kappa_min: worst,
        })
    })?;

    let points: Vec<(f64, f64)> = sensors
        .iter()
        .filter(|r| r.gramian_condition_number.is_finite() && r.worst_kappa_min.is_finite())
        .map(|r| (r.gramian_condition_number.log10(), r.worst_kappa_min.log10()))
        .collect();
    Ok(SensorReport {
        states: n,
        sensors,
        fit_points: points.len(),
        r_squared: r_squared(&points),
    })
}

/// Squared Pearson correlation of the points.
pub fn r_squared(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let k = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / k, b + y / k));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let scale = sxx.max(syy);
    if !(scale > 0.0) || sxx <= 1e-24 * scale || syy <= 1e-24 * scale {
        return None;
    }
    Some(sxy * sxy / (sxx * syy))
}
