//! Parallel critical-point sweeps over a cross product of config values.
//!
//! ```toml
//! [sweep]
//! max_points = 10000
//!
//! [[sweep.axes]]
//! path = "suspension.alpha_i_deg"
//! values = [0.0, 20.0, 40.0]
//! ```

use std::path::{Path, PathBuf};

use photobio::config::RunConfig;
use photobio::solve_basic_state;
use photobio::stability::critical_point;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{config_from_table, load_table};
use crate::format::{num, opt, rounded_json, write_json, write_text, Csv};
use crate::{CliError, Common};

const DEFAULT_MAX_POINTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dotted key into the run config, e.g. `suspension.omega`.
    pub path: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    #[serde(default = "default_max_points")]
    max_points: usize,
    #[serde(default)]
    axes: Vec<Axis>,
}

fn default_max_points() -> usize {
    DEFAULT_MAX_POINTS
}

/// Base config, axes and execution settings for one sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: toml::Table,
    pub axes: Vec<Axis>,
    pub max_points: usize,
    pub out: PathBuf,
    pub jobs: usize,
}

/// One point of the cross product, ready to run.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub values: Vec<toml::Value>,
    pub config: RunConfig,
    pub hash: String,
}

/// Stored outcome of one point; reused when the hash matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub hash: String,
    pub config: RunConfig,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok {
        a_c: f64,
        ra_c: f64,
        branch: String,
        im_gamma: f64,
        wavelength: f64,
        period: Option<f64>,
    },
    Failed {
        error: String,
    },
}

impl SweepSpec {
    pub fn from_args(args: &Common) -> Result<SweepSpec, CliError> {
        let mut base = load_table(&args.config)?;
        let section: SweepSection = match base.remove("sweep") {
            Some(v) => v.try_into().map_err(|e| CliError::Config(format!("[sweep]: {e}")))?,
            None => SweepSection { max_points: DEFAULT_MAX_POINTS, axes: Vec::new() },
        };
        let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        if let Some(v) = args.a_min {
            set_path(&mut base, "stability.a_min", v.into())?;
        }
        if let Some(v) = args.a_max {
            set_path(&mut base, "stability.a_max", v.into())?;
        }
        if let Some(n) = args.a_points {
            set_path(&mut base, "stability.a_points", (n as i64).into())?;
        }
        Ok(SweepSpec { base, axes: section.axes, max_points: section.max_points, out: args.out.clone(), jobs })
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Cross product in row-major order, last axis fastest.
    pub fn points(&self) -> Result<Vec<SweepPoint>, CliError> {
        let size = self.size();
        if size > self.max_points {
            return Err(CliError::Config(format!("sweep has {size} points, above the cap of {}", self.max_points)));
        }
        (0..size)
            .map(|mut index| {
                let mut values = vec![toml::Value::from(0); self.axes.len()];
                for (k, axis) in self.axes.iter().enumerate().rev() {
                    values[k] = axis.values[index % axis.values.len()].clone();
                    index /= axis.values.len();
                }
                let mut table = self.base.clone();
                for (axis, value) in self.axes.iter().zip(&values) {
                    set_path(&mut table, &axis.path, value.clone())?;
                }
                let config = config_from_table(table)?;
                let hash = content_hash(&config);
                Ok(SweepPoint { values, config, hash })
            })
            .collect()
    }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), CliError> {
    let mut keys: Vec<&str> = path.split('.').collect();
    let leaf = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| CliError::Config(format!("empty axis path `{path}`")))?;
    let mut node = table;
    for key in keys {
        let entry = node.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("axis path `{path}`: `{key}` is not a table")))?;
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}

fn content_hash(config: &RunConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml().as_bytes()))
}

fn record_path(out: &Path, hash: &str) -> PathBuf {
    out.join("points").join(format!("{hash}.json"))
}

/// A completed record for this point, if one is stored.
fn stored(out: &Path, point: &SweepPoint) -> Option<PointRecord> {
    let text = std::fs::read_to_string(record_path(out, &point.hash)).ok()?;
    let record: PointRecord = serde_json::from_str(&text).ok()?;
    (record.config == point.config && matches!(record.outcome, Outcome::Ok { .. })).then_some(record)
}

fn evaluate(point: &SweepPoint) -> Outcome {
    let run = || -> photobio::Result<Outcome> {
        let cfg = &point.config;
        let params = cfg.params()?;
        let state = solve_basic_state(&params, &cfg.numerics)?;
        let st = cfg.stability;
        let (_, c) = critical_point(&state, st.a_min, st.a_max, st.a_points, &cfg.numerics)?;
        Ok(Outcome::Ok {
            a_c: c.a_c,
            ra_c: c.ra_c,
            branch: c.branch.as_str().into(),
            im_gamma: c.im_gamma,
            wavelength: c.wavelength,
            period: c.period,
        })
    };
    run().unwrap_or_else(|e| Outcome::Failed { error: e.to_string() })
}

fn cell(value: &toml::Value) -> String {
    match value {
        toml::Value::Float(x) => num(*x),
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn run(args: &Common) -> Result<(), CliError> {
    let spec = SweepSpec::from_args(args)?;
    // Validate the base config before doing any work.
    let base = config_from_table(spec.base.clone())?;
    let points = spec.points()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let records: Vec<PointRecord> = pool.install(|| {
        points
            .par_iter()
            .map(|p| -> Result<PointRecord, CliError> {
                if let Some(r) = stored(&spec.out, p) {
                    return Ok(r);
                }
                let record = PointRecord { hash: p.hash.clone(), config: p.config.clone(), outcome: evaluate(p) };
                write_json(&record_path(&spec.out, &p.hash), &record)?;
                Ok(record)
            })
            .collect::<Result<_, _>>()
    })?;

    let mut header: Vec<&str> = spec.axes.iter().map(|a| a.path.as_str()).collect();
    header.extend(["a_c", "ra_c", "branch", "im_gamma", "wavelength", "period", "status", "error", "hash"]);
    let mut csv = Csv::new(&header);
    let mut failed = 0;
    for (point, record) in points.iter().zip(&records) {
        let mut row: Vec<String> = point.values.iter().map(cell).collect();
        match &record.outcome {
            Outcome::Ok { a_c, ra_c, branch, im_gamma, wavelength, period } => {
                row.extend([num(*a_c), num(*ra_c), branch.clone(), num(*im_gamma), num(*wavelength), opt(*period)]);
                row.extend(["ok".to_string(), String::new()]);
            }
            Outcome::Failed { error } => {
                failed += 1;
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.extend(["failed".to_string(), error.clone()]);
            }
        }
        row.push(record.hash.clone());
        csv.row(&row);
    }
    write_text(&spec.out.join("sweep.csv"), &csv.into_string())?;
    let axes: Vec<serde_json::Value> = spec
        .axes
        .iter()
        .map(|a| serde_json::json!({ "path": a.path, "values": a.values }))
        .collect();
    let summary = serde_json::json!({
        "command": "sweep",
        "config": base,
        "axes": axes,
        "points": points.len(),
        "failed": failed,
    });
    write_json(&spec.out.join("sweep.json"), &rounded_json(&summary))?;
    if failed > 0 {
        return Err(CliError::PartialSweep { failed, total: points.len() });
    }
    Ok(())
}
