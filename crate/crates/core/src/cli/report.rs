//! Report tables and their CSV/JSON forms.
//!
//! Floats are written with 12 significant digits (`inf` for unobservable
//! measures). Index sets are `;`-separated lists of 0-based indices, and row
//! lists are `;`-separated `time_index:output_index` pairs. An empty sensor
//! subset field means "all outputs".
//!
//! `windows.csv`, one row per (window, sensor subset, target set):
//!
//! | column | meaning |
//! |---|---|
//! | `window` | window number, 0-based |
//! | `anchor_time` | `window · dt` |
//! | `sensor_subset` | output indices |
//! | `target_set` | state indices |
//! | `kappa_min` | minimum `κ²` over iterations |
//! | `observable` | `kappa_min` is finite |
//! | `iterations_used` | successful reconstructions |
//! | `rows_used` | rows of the iteration attaining `kappa_min` |
//! | `estimation_condition_number` | Gramian `λmax/λmin` |
//! | `unobservability_index` | Gramian `1/λmin` |
//!
//! `iterations.csv`, one row per recorded iteration: `window`,
//! `anchor_time`, `sensor_subset`, `target_set`, `iteration`, `new_rows`,
//! `rows_total`, `retained_rank`, `kappa_squared`.
//!
//! `sensors.csv`, one row per sensor set: `sensor_set`, `outputs`,
//! `gramian_condition_number`, `unobservability_index`, `kappa_min_<j>` for
//! every state `j`, `worst_kappa_min`.
//!
//! `report.json` mirrors the tables and adds the fit statistics of the
//! sensor study.

use crate::empobs::RowMeta;
use crate::numfmt::{round_sig12, sig12};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: bad {column} value {value:?}")]
    Field {
        line: u64,
        column: &'static str,
        value: String,
    },
}

/// JSON form of a float: a number rounded to 12 significant digits, or the
/// string `"inf"`/`"-inf"`/`"NaN"`.
mod float12 {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(round_sig12(*x))
        } else {
            s.serialize_str(&sig12(*x))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            #[derive(Serialize)]
            struct W(#[serde(with = "super")] f64);
            s.collect_seq(xs.iter().map(|&x| W(x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            #[derive(Deserialize)]
            struct W(#[serde(with = "super")] f64);
            Ok(Vec::<W>::deserialize(d)?.into_iter().map(|w| w.0).collect())
        }
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match x {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            #[derive(Deserialize)]
            struct W(#[serde(with = "super")] f64);
            Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window: usize,
    #[serde(with = "float12")]
    pub anchor_time: f64,
    pub sensor_subset: Vec<usize>,
    pub target_set: Vec<usize>,
    #[serde(with = "float12")]
    pub kappa_min: f64,
    pub observable: bool,
    pub iterations_used: usize,
    pub rows_used: Vec<RowMeta>,
    #[serde(with = "float12")]
    pub estimation_condition_number: f64,
    #[serde(with = "float12")]
    pub unobservability_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub window: usize,
    #[serde(with = "float12")]
    pub anchor_time: f64,
    pub sensor_subset: Vec<usize>,
    pub target_set: Vec<usize>,
    pub iteration: usize,
    pub new_rows: Vec<RowMeta>,
    pub rows_total: usize,
    pub retained_rank: usize,
    #[serde(with = "float12")]
    pub kappa_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramianRow {
    pub window: usize,
    #[serde(with = "float12")]
    pub anchor_time: f64,
    pub sensor_subset: Vec<usize>,
    #[serde(with = "float12")]
    pub estimation_condition_number: f64,
    #[serde(with = "float12")]
    pub unobservability_index: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub windows: Vec<WindowRow>,
    pub iterations: Vec<IterationRow>,
    pub gramian_summary: Vec<GramianRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRow {
    pub sensor_set: String,
    pub outputs: usize,
    #[serde(with = "float12")]
    pub gramian_condition_number: f64,
    #[serde(with = "float12")]
    pub unobservability_index: f64,
    #[serde(with = "float12::vec")]
    pub kappa_min: Vec<f64>,
    #[serde(with = "float12")]
    pub worst_kappa_min: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorReport {
    pub states: usize,
    pub sensors: Vec<SensorRow>,
    /// Sensor sets with finite Gramian condition number and worst measure.
    pub fit_points: usize,
    /// `R²` of `log10 worst_kappa_min` against `log10
    /// gramian_condition_number`; absent with fewer than three points or a
    /// degenerate spread.
    #[serde(with = "float12::opt")]
    pub r_squared: Option<f64>,
}

fn join_indices(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn join_rows(v: &[RowMeta]) -> String {
    v.iter()
        .map(|m| format!("{}:{}", m.time_index, m.output_index))
        .collect::<Vec<_>>()
        .join(";")
}

struct Fields<'a> {
    rec: &'a csv::StringRecord,
    headers: &'a csv::StringRecord,
}

impl Fields<'_> {
    fn raw(&self, column: &'static str) -> Result<&str, ReportError> {
        let idx = self.headers.iter().position(|h| h == column);
        idx.and_then(|i| self.rec.get(i)).ok_or_else(|| self.bad(column, ""))
    }

    fn bad(&self, column: &'static str, value: &str) -> ReportError {
        ReportError::Field {
            line: self.rec.position().map_or(0, |p| p.line()),
            column,
            value: value.to_string(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, column: &'static str) -> Result<T, ReportError> {
        let s = self.raw(column)?;
        s.parse().map_err(|_| self.bad(column, s))
    }

    fn indices(&self, column: &'static str) -> Result<Vec<usize>, ReportError> {
        let s = self.raw(column)?;
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|t| t.parse().map_err(|_| self.bad(column, s)))
            .collect()
    }

    fn rows(&self, column: &'static str) -> Result<Vec<RowMeta>, ReportError> {
        let s = self.raw(column)?;
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|t| {
                let (a, b) = t.split_once(':').ok_or_else(|| self.bad(column, s))?;
                Ok(RowMeta {
                    time_index: a.parse().map_err(|_| self.bad(column, s))?,
                    output_index: b.parse().map_err(|_| self.bad(column, s))?,
                })
            })
            .collect()
    }
}

fn read_records<R: Read, T>(r: R, mut f: impl FnMut(&Fields) -> Result<T, ReportError>) -> Result<Vec<T>, ReportError> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        out.push(f(&Fields {
            rec: &rec,
            headers: &headers,
        })?);
    }
    Ok(out)
}

const WINDOW_COLUMNS: [&str; 10] = [
    "window",
    "anchor_time",
    "sensor_subset",
    "target_set",
    "kappa_min",
    "observable",
    "iterations_used",
    "rows_used",
    "estimation_condition_number",
    "unobservability_index",
];

const ITERATION_COLUMNS: [&str; 9] = [
    "window",
    "anchor_time",
    "sensor_subset",
    "target_set",
    "iteration",
    "new_rows",
    "rows_total",
    "retained_rank",
    "kappa_squared",
];

pub fn write_windows_csv<W: Write>(rows: &[WindowRow], w: W) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(WINDOW_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.window.to_string(),
            sig12(r.anchor_time),
            join_indices(&r.sensor_subset),
            join_indices(&r.target_set),
            sig12(r.kappa_min),
            r.observable.to_string(),
            r.iterations_used.to_string(),
            join_rows(&r.rows_used),
            sig12(r.estimation_condition_number),
            sig12(r.unobservability_index),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_windows_csv<R: Read>(r: R) -> Result<Vec<WindowRow>, ReportError> {
    read_records(r, |f| {
        Ok(WindowRow {
            window: f.parse("window")?,
            anchor_time: f.parse("anchor_time")?,
            sensor_subset: f.indices("sensor_subset")?,
            target_set: f.indices("target_set")?,
            kappa_min: f.parse("kappa_min")?,
            observable: f.parse("observable")?,
            iterations_used: f.parse("iterations_used")?,
            rows_used: f.rows("rows_used")?,
            estimation_condition_number: f.parse("estimation_condition_number")?,
            unobservability_index: f.parse("unobservability_index")?,
        })
    })
}

pub fn write_iterations_csv<W: Write>(rows: &[IterationRow], w: W) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ITERATION_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.window.to_string(),
            sig12(r.anchor_time),
            join_indices(&r.sensor_subset),
            join_indices(&r.target_set),
            r.iteration.to_string(),
            join_rows(&r.new_rows),
            r.rows_total.to_string(),
            r.retained_rank.to_string(),
            sig12(r.kappa_squared),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_iterations_csv<R: Read>(r: R) -> Result<Vec<IterationRow>, ReportError> {
    read_records(r, |f| {
        Ok(IterationRow {
            window: f.parse("window")?,
            anchor_time: f.parse("anchor_time")?,
            sensor_subset: f.indices("sensor_subset")?,
            target_set: f.indices("target_set")?,
            iteration: f.parse("iteration")?,
            new_rows: f.rows("new_rows")?,
            rows_total: f.parse("rows_total")?,
            retained_rank: f.parse("retained_rank")?,
            kappa_squared: f.parse("kappa_squared")?,
        })
    })
}

pub fn write_sensors_csv<W: Write>(report: &SensorReport, w: W) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "sensor_set",
        "outputs",
        "gramian_condition_number",
        "unobservability_index",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..report.states).map(|j| format!("kappa_min_{j}")));
    header.push("worst_kappa_min".into());
    out.write_record(&header)?;
    for r in &report.sensors {
        let mut rec = vec![
            r.sensor_set.clone(),
            r.outputs.to_string(),
            sig12(r.gramian_condition_number),
            sig12(r.unobservability_index),
        ];
        rec.extend(r.kappa_min.iter().map(|&k| sig12(k)));
        rec.push(sig12(r.worst_kappa_min));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Rows of `sensors.csv`; the state count is taken from the header.
pub fn read_sensors_csv<R: Read>(r: R) -> Result<Vec<SensorRow>, ReportError> {
    read_records(r, |f| {
        let states = f.headers.iter().filter(|h| h.starts_with("kappa_min_")).count();
        let kappa_min = (0..states)
            .map(|j| {
                let s = f.rec.get(4 + j).unwrap_or("");
                s.parse().map_err(|_| f.bad("kappa_min", s))
            })
            .collect::<Result<_, _>>()?;
        Ok(SensorRow {
            sensor_set: f.raw("sensor_set")?.to_string(),
            outputs: f.parse("outputs")?,
            gramian_condition_number: f.parse("gramian_condition_number")?,
            unobservability_index: f.parse("unobservability_index")?,
            kappa_min,
            worst_kappa_min: f.parse("worst_kappa_min")?,
        })
    })
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>, ReportError> {
    Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(value: &T, dir: &Path) -> Result<(), ReportError> {
    let mut w = create(dir, "report.json")?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Write `windows.csv`, `iterations.csv` and `report.json` into `dir`.
pub fn emit_experiment(report: &ExperimentReport, dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir)?;
    write_windows_csv(&report.windows, create(dir, "windows.csv")?)?;
    write_iterations_csv(&report.iterations, create(dir, "iterations.csv")?)?;
    write_json(report, dir)
}

/// Write `sensors.csv` and `report.json` into `dir`.
pub fn emit_sensors(report: &SensorReport, dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir)?;
    write_sensors_csv(report, create(dir, "sensors.csv")?)?;
    write_json(report, dir)
}

pub fn read_experiment_json(dir: &Path) -> Result<ExperimentReport, ReportError> {
    Ok(serde_json::from_reader(std::fs::File::open(dir.join("report.json"))?)?)
}

pub fn read_sensors_json(dir: &Path) -> Result<SensorReport, ReportError> {
    Ok(serde_json::from_reader(std::fs::File::open(dir.join("report.json"))?)?)
}
