//! Long-format plot data from one or more `metrics.csv` files.
//!
//! Every input row becomes one output row per metric column:
//! `run_id, step, metric, value`. The run id is the input path as given.
//! After the inputs, run id `aggregate` holds, per step and metric, the
//! mean across runs under the metric's own name and the sample standard
//! deviation under `<metric>_std` (0 for a single run).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evalstats::{mean, std_dev};
use crate::harness::run::write_csv;

pub const AGGREGATE: &str = "aggregate";
pub const HEADER: [&str; 4] = ["run_id", "step", "metric", "value"];

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub run_id: String,
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

struct Metrics {
    columns: Vec<String>,
    /// `(step, values)` in file order.
    rows: Vec<(u64, Vec<f64>)>,
}

fn read_metrics(path: &Path) -> Result<Metrics> {
    let err = |msg: String| Error::Csv { path: path.to_path_buf(), msg };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let header = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(err("empty file".into()));
    }
    if header.get(0) != Some("step") || header.len() < 2 {
        return Err(err(format!("expected `step` followed by metric columns, got {:?}", header.iter().collect::<Vec<_>>())));
    }
    let columns: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let line = i + 2;
        let step = record[0].parse().map_err(|_| err(format!("line {line}: bad step `{}`", &record[0])))?;
        let values = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| err(format!("line {line}: bad value `{v}`"))))
            .collect::<Result<_>>()?;
        rows.push((step, values));
    }
    if rows.is_empty() {
        return Err(err("no data rows".into()));
    }
    Ok(Metrics { columns, rows })
}

/// Reads every input, checks they share one header, and returns the long
/// rows followed by the aggregate.
pub fn collect_plotdata(inputs: &[PathBuf]) -> Result<Vec<PlotRow>> {
    let first = inputs.first().ok_or_else(|| Error::invalid("emit-plotdata needs at least one metrics file"))?;
    let runs = inputs.iter().map(|p| read_metrics(p)).collect::<Result<Vec<_>>>()?;
    let columns = &runs[0].columns;
    for (path, run) in inputs.iter().zip(&runs) {
        if &run.columns != columns {
            return Err(Error::Csv {
                path: path.clone(),
                msg: format!("columns {:?} do not match {:?} of {}", run.columns, columns, first.display()),
            });
        }
    }
    let mut out = Vec::new();
    let mut by_step: BTreeMap<u64, Vec<Vec<f64>>> = BTreeMap::new();
    for (path, run) in inputs.iter().zip(&runs) {
        let id = path.display().to_string();
        for (step, values) in &run.rows {
            for (metric, &value) in columns.iter().zip(values) {
                out.push(PlotRow { run_id: id.clone(), step: *step, metric: metric.clone(), value });
            }
            by_step.entry(*step).or_default().push(values.clone());
        }
    }
    for (step, samples) in by_step {
        for (j, metric) in columns.iter().enumerate() {
            let xs: Vec<f64> = samples.iter().map(|v| v[j]).collect();
            out.push(PlotRow { run_id: AGGREGATE.into(), step, metric: metric.clone(), value: mean(&xs) });
            out.push(PlotRow { run_id: AGGREGATE.into(), step, metric: format!("{metric}_std"), value: std_dev(&xs) });
        }
    }
    Ok(out)
}

/// [`collect_plotdata`] written to `out`.
pub fn emit_plotdata(inputs: &[PathBuf], out: &Path) -> Result<Vec<PlotRow>> {
    let rows = collect_plotdata(inputs)?;
    write_csv(
        out,
        &HEADER,
        rows.iter().map(|r| vec![r.run_id.clone(), r.step.to_string(), r.metric.clone(), r.value.to_string()]),
    )?;
    Ok(rows)
}
