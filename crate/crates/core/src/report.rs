//! CSV and JSON renderings of Monte Carlo reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::montecarlo::MCReport;
use crate::placebo::{PlaceboPoint, SurfacePoint};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_json(report: &MCReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_json(path: impl AsRef<Path>) -> Result<MCReport> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|_| Error::DataNotFound(path.display().to_string()))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Parse { row: e.line(), message: e.to_string() })
}

/// One row of the long format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatRow {
    pub experiment: String,
    pub params: String,
    pub label: String,
    pub estimator: String,
    pub variance: String,
    pub rate: f64,
    pub mc_se: f64,
    #[serde(rename = "R")]
    pub reps: usize,
}

fn join_params(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// Every rate in the report, one row per cell.
pub fn flat_rows(r: &MCReport) -> Vec<FlatRow> {
    let row = |params: String, label: &str, estimator: &str, variance: &str, rate: f64, mc_se: f64, reps: usize| FlatRow {
        experiment: r.experiment.clone(),
        params,
        label: label.into(),
        estimator: estimator.into(),
        variance: variance.into(),
        rate,
        mc_se,
        reps,
    };
    let mut out = Vec::new();
    for c in &r.cells {
        let p: Vec<(&str, String)> = c.params.iter().map(|(k, v)| (k.as_str(), v.to_string())).collect();
        out.push(row(join_params(&p), &c.label, &c.estimator, &c.variance, c.rate, c.mc_se, c.reps));
    }
    for c in &r.pretest {
        let p = join_params(&[("T", c.t.to_string()), ("rho", c.rho.to_string())]);
        out.push(row(p.clone(), &c.panel, "pretest", "pass_rate", c.pass_rate, c.mc_se, c.reps));
        if let (Some(q), Some(se)) = (c.cond_rej, c.cond_mc_se) {
            out.push(row(p, &c.panel, "fd", "cond_rej", q, se, c.reps));
        }
    }
    for c in &r.placebo_curve {
        out.push(row(join_params(&[("delta", c.delta.to_string())]), &c.scheme, "fd", "crve_group", c.rate, c.mc_se, c.n_cells));
    }
    for c in &r.placebo_surface {
        let p = join_params(&[("delta_time", c.delta_time.to_string()), ("delta_group", c.delta_group.to_string())]);
        out.push(row(p, "cluster_random", "fd", "crve_group", c.rate, c.mc_se, c.n_cells));
    }
    for c in &r.curve {
        let p = join_params(&[("T", c.t.to_string()), ("rho", c.rho.to_string())]);
        out.push(row(p, "nabla_second_moment", "closed_form", "", c.value, 0.0, 0));
    }
    out
}

pub fn write_flat_csv(r: &MCReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["experiment", "params", "label", "estimator", "variance", "rate", "mc_se", "R"]).map_err(csv_err)?;
    for row in flat_rows(r) {
        w.write_record([
            row.experiment,
            row.params,
            row.label,
            row.estimator,
            row.variance,
            row.rate.to_string(),
            row.mc_se.to_string(),
            row.reps.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Pre-test grid: `panel,T,rho,pass_rate,cond_rej,mc_se`, with `cond_rej`
/// left empty where it is omitted.
pub fn write_pretest_csv(r: &MCReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["panel", "T", "rho", "pass_rate", "cond_rej", "mc_se"]).map_err(csv_err)?;
    for c in &r.pretest {
        w.write_record([
            c.panel.clone(),
            c.t.to_string(),
            c.rho.to_string(),
            c.pass_rate.to_string(),
            opt(c.cond_rej),
            c.mc_se.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Wide grid: one row per parameter combination (and label), one column
/// per `estimator/variance` pair, with `<column>_se` companions.
pub fn write_grid_csv(r: &MCReport, path: impl AsRef<Path>) -> Result<()> {
    let mut keys: Vec<String> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    for c in &r.cells {
        for k in c.params.keys() {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
        let col = if r.cells.iter().all(|x| x.estimator == c.estimator) { c.variance.clone() } else { format!("{}/{}", c.estimator, c.variance) };
        if !cols.contains(&col) {
            cols.push(col);
        }
    }
    let mut rows: Vec<(Vec<String>, Vec<Option<(f64, f64)>>)> = Vec::new();
    for c in &r.cells {
        let mut id: Vec<String> = keys.iter().map(|k| c.params.get(k).map(|v| v.to_string()).unwrap_or_default()).collect();
        id.push(c.label.clone());
        let col = if r.cells.iter().all(|x| x.estimator == c.estimator) { c.variance.clone() } else { format!("{}/{}", c.estimator, c.variance) };
        let ci = cols.iter().position(|x| *x == col).unwrap_or(0);
        let pos = match rows.iter().position(|(k, _)| *k == id) {
            Some(p) => p,
            None => {
                rows.push((id, vec![None; cols.len()]));
                rows.len() - 1
            }
        };
        rows[pos].1[ci] = Some((c.rate, c.mc_se));
    }
    let mut w = writer(path.as_ref())?;
    let mut header: Vec<String> = keys.clone();
    header.push("label".into());
    for c in &cols {
        header.push(c.clone());
        header.push(format!("{c}_se"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (id, vals) in rows {
        let mut rec = id;
        for v in vals {
            rec.push(opt(v.map(|x| x.0)));
            rec.push(opt(v.map(|x| x.1)));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_placebo_curve_csv(points: &[PlaceboPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["delta", "scheme", "rate", "mc_se", "n_cells"]).map_err(csv_err)?;
    for p in points {
        w.write_record([p.delta.to_string(), p.scheme.clone(), p.rate.to_string(), p.mc_se.to_string(), p.n_cells.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_placebo_surface_csv(points: &[SurfacePoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["delta_time", "delta_group", "rate", "mc_se"]).map_err(csv_err)?;
    for p in points {
        w.write_record([p.delta_time.to_string(), p.delta_group.to_string(), p.rate.to_string(), p.mc_se.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_nabla_curve_csv(r: &MCReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["rho", "T", "value", "mc_value", "mc_se"]).map_err(csv_err)?;
    for p in &r.curve {
        w.write_record([p.rho.to_string(), p.t.to_string(), p.value.to_string(), opt(p.mc_value), opt(p.mc_se)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// The natural CSV for the report's contents: the pre-test grid, the
/// derivative curve, the placebo curve, or the rate grid.
pub fn write_csv(r: &MCReport, path: impl AsRef<Path>) -> Result<()> {
    if !r.pretest.is_empty() {
        write_pretest_csv(r, path)
    } else if !r.curve.is_empty() {
        write_nabla_curve_csv(r, path)
    } else if !r.placebo_curve.is_empty() {
        write_placebo_curve_csv(&r.placebo_curve, path)
    } else if !r.cells.is_empty() {
        write_grid_csv(r, path)
    } else {
        write_flat_csv(r, path)
    }
}
