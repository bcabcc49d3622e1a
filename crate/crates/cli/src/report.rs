//! Result files: one JSON document plus plot-ready CSV files next to it.

use std::io::Write;
use std::path::{Path, PathBuf};

use bernfit::basis::{BernsteinCurve, BernsteinSurface};
use bernfit::constraints::{ShapeReport, ShapeSpec};
use bernfit::data::Rescale;
use bernfit::inference::{CiBand, TestReport};
use bernfit::model::ModelKind;
use bernfit::selection::CvResult;
use bernfit::simulation::MetricTable;
use bernfit::{Error, Result};
use serde::Serialize;
use serde_json::Value;

pub const REPORT_POINTS: usize = 200;

#[derive(Debug, Serialize)]
pub struct Named {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Curves {
    pub grid: Vec<f64>,
    pub functions: Vec<Named>,
}

impl Curves {
    pub fn from_bernstein(curves: &[(String, BernsteinCurve)]) -> Result<Self> {
        let grid = curves
            .first()
            .map(|(_, c)| c.spec.reporting_grid(REPORT_POINTS))
            .unwrap_or_default();
        let functions = curves
            .iter()
            .map(|(name, c)| {
                Ok(Named {
                    name: name.clone(),
                    values: c.eval_many(&grid)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { grid, functions })
    }
}

#[derive(Debug, Serialize)]
pub struct Surface {
    pub name: String,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    /// `values[i][j]` is the surface at `(s[i], t[j])`.
    pub values: Vec<Vec<f64>>,
}

impl Surface {
    pub fn from_bernstein(name: &str, surface: &BernsteinSurface) -> Result<Self> {
        let s = surface.spec.s_spec().reporting_grid(REPORT_POINTS);
        let t = surface.spec.t_spec().reporting_grid(REPORT_POINTS);
        let values = s
            .iter()
            .map(|&si| t.iter().map(|&tj| surface.eval(si, tj)).collect())
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.into(),
            s,
            t,
            values,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Rss {
    pub raw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub whitened: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CvReport {
    pub chosen: usize,
    pub folds: usize,
    pub seed: u64,
    pub scores: Vec<CvScore>,
    /// Candidates too small for the shape.
    pub skipped: Vec<usize>,
    pub fold_assignment: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct CvScore {
    pub order: usize,
    pub score: f64,
}

impl From<&CvResult> for CvReport {
    fn from(cv: &CvResult) -> Self {
        let mut scores = Vec::new();
        let mut skipped = Vec::new();
        for (&order, s) in cv.candidate_orders.iter().zip(&cv.scores) {
            match s {
                Some(score) => scores.push(CvScore {
                    order,
                    score: *score,
                }),
                None => skipped.push(order),
            }
        }
        Self {
            chosen: cv.chosen,
            folds: cv.folds,
            seed: cv.seed,
            scores,
            skipped,
            fold_assignment: cv.fold_assignment.clone(),
        }
    }
}

/// Everything a command may report; absent parts are left out of the JSON.
#[derive(Debug, Default, Serialize)]
pub struct Report {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_subjects: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<Named>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curves: Option<Curves>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surface: Option<Surface>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rss: Option<Rss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<ShapeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescale: Option<Vec<Rescale>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<CiBand>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<TestReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<MetricTable>,
}

/// serde_json writes NaN and infinities as `null`, and the report has no other nulls.
fn find_null(v: &Value, path: &mut Vec<String>) -> Option<String> {
    match v {
        Value::Null => Some(path.join(".")),
        Value::Array(items) => items.iter().enumerate().find_map(|(i, x)| {
            path.push(i.to_string());
            let hit = find_null(x, path);
            path.pop();
            hit
        }),
        Value::Object(map) => map.iter().find_map(|(k, x)| {
            path.push(k.clone());
            let hit = find_null(x, path);
            path.pop();
            hit
        }),
        _ => None,
    }
}

/// Destination of results and their companion CSV files.
pub struct Sink {
    pub results: Option<PathBuf>,
    /// Overrides the band CSV location.
    pub bands: Option<PathBuf>,
}

impl Sink {
    /// `<stem>_<suffix>.csv` next to the results file.
    pub fn companion(&self, suffix: &str) -> Option<PathBuf> {
        let p = self.results.as_ref()?;
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Some(p.with_file_name(format!("{stem}_{suffix}.csv")))
    }

    pub fn write(&self, report: &Report) -> Result<()> {
        let value = serde_json::to_value(report)?;
        if let Some(path) = find_null(&value, &mut Vec::new()) {
            return Err(Error::NonFinite(format!("result field {path}")));
        }
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        match &self.results {
            Some(p) => std::fs::write(p, text)?,
            None => std::io::stdout().lock().write_all(text.as_bytes())?,
        }
        if let Some(p) = self.companion("curves") {
            if let Some(c) = &report.curves {
                write_curves(&p, c)?;
            }
        }
        if let Some(p) = self.bands.clone().or_else(|| self.companion("band")) {
            if let Some(b) = &report.band {
                write_band(&p, b)?;
            }
        }
        if let Some(p) = self.companion("table") {
            if let Some(t) = &report.table {
                std::fs::write(p, t.to_csv_string()?)?;
            }
        }
        Ok(())
    }
}

fn write_rows(
    path: &Path,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_curves(path: &Path, c: &Curves) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(c.functions.iter().map(|f| f.name.clone()));
    let rows = c.grid.iter().enumerate().map(|(i, &t)| {
        let mut row = vec![t];
        row.extend(c.functions.iter().map(|f| f.values[i]));
        row
    });
    write_rows(path, header, rows)
}

fn write_band(path: &Path, b: &CiBand) -> Result<()> {
    let header = ["t", "estimate", "lower", "upper"]
        .map(String::from)
        .to_vec();
    let rows = (0..b.grid.len()).map(|i| vec![b.grid[i], b.estimate[i], b.lower[i], b.upper[i]]);
    write_rows(path, header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_values_are_caught() {
        let report = Report {
            command: "x".into(),
            rss: Some(Rss {
                raw: f64::NAN,
                whitened: None,
            }),
            ..Report::default()
        };
        let sink = Sink {
            results: None,
            bands: None,
        };
        match sink.write(&report) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("rss.raw")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
