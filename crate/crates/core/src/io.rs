//! Dataset files.
//!
//! Wide layout: one row per subject with columns `id`, optional `y`, scalar
//! covariates `z_*`, covariate samples `t=<time>` and response samples
//! `yt=<time>` (`p=<level>` is accepted for quantile-function responses).
//! Empty cells mark unobserved points.
//!
//! Long layout: one row per observation with columns `id,t,x[,y_t]`, plus a
//! companion file `id[,y][,z_*]` holding the scalars.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::Grid;
use crate::data::{FunctionalDataset, Samples, Subject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    #[default]
    WideCsv,
    LongCsv,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wide_csv" | "wide" => Ok(Self::WideCsv),
            "long_csv" | "long" => Ok(Self::LongCsv),
            _ => Err(Error::Config(format!("unknown data format {s:?}"))),
        }
    }
}

/// Scalars file that accompanies a long-format file: `data.csv` pairs with `data.scalars.csv`.
pub fn companion_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.scalars.csv"))
}

pub fn read_dataset(path: &Path, format: DataFormat) -> Result<FunctionalDataset> {
    match format {
        DataFormat::WideCsv => read_wide_csv(path),
        DataFormat::LongCsv => {
            let scalars = companion_path(path);
            read_long_csv(path, scalars.exists().then_some(scalars.as_path()))
        }
    }
}

fn location(path: &Path, line: u64, column: &str) -> String {
    format!("{}:{line}, column {column}", path.display())
}

fn parse_cell(path: &Path, line: u64, column: &str, cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Err(Error::Parse {
            location: location(path, line, column),
            message: format!("non-finite value {cell:?}"),
        }),
        Err(_) => Err(Error::Parse {
            location: location(path, line, column),
            message: format!("not a number: {cell:?}"),
        }),
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            location: format!("{}:{line}", path.display()),
            message: format!("{other:?}"),
        },
    }
}

enum Column {
    Id,
    Y,
    Z,
    X(usize),
    Response(usize),
}

/// Sorted time columns; duplicates are a data error.
fn time_columns(
    path: &Path,
    times: Vec<(f64, usize)>,
    what: &str,
) -> Result<(Vec<f64>, HashMap<usize, usize>)> {
    let mut times = times;
    times.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = times.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!(
            "{}: duplicate {what} time {} in the header",
            path.display(),
            w[0].0
        )));
    }
    let pos = times
        .iter()
        .enumerate()
        .map(|(k, &(_, col))| (col, k))
        .collect();
    Ok((times.into_iter().map(|(t, _)| t).collect(), pos))
}

pub fn read_wide_csv(path: &Path) -> Result<FunctionalDataset> {
    let mut rdr = open(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut columns = Vec::with_capacity(header.len());
    let mut z_names = Vec::new();
    let (mut x_times, mut y_times) = (Vec::new(), Vec::new());
    for (c, name) in header.iter().enumerate() {
        let time = |prefix: &str| -> Result<Option<f64>> {
            match name.strip_prefix(prefix) {
                Some(v) => parse_cell(path, 1, name, v)?
                    .map(Some)
                    .ok_or_else(|| Error::Parse {
                        location: location(path, 1, name),
                        message: "missing time in column name".into(),
                    }),
                None => Ok(None),
            }
        };
        let col = if name == "id" {
            Column::Id
        } else if name == "y" {
            Column::Y
        } else if name.starts_with("z_") {
            z_names.push(name.to_string());
            Column::Z
        } else if let Some(t) = time("t=")? {
            x_times.push((t, c));
            Column::X(c)
        } else if let Some(t) = time("yt=")?.map_or_else(|| time("p="), |t| Ok(Some(t)))? {
            y_times.push((t, c));
            Column::Response(c)
        } else {
            return Err(Error::Parse {
                location: location(path, 1, name),
                message: format!("unrecognised column {name:?}"),
            });
        };
        columns.push(col);
    }
    if !columns.iter().any(|c| matches!(c, Column::Id)) {
        return Err(Error::Parse {
            location: location(path, 1, "id"),
            message: "missing id column".into(),
        });
    }
    let (x_grid, x_pos) = time_columns(path, x_times, "covariate")?;
    let (y_grid, y_pos) = time_columns(path, y_times, "response")?;

    let mut subjects = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut subject = Subject::new("");
        let mut x: Vec<(usize, f64)> = Vec::new();
        let mut y: Vec<(usize, f64)> = Vec::new();
        for ((col, name), cell) in columns.iter().zip(header.iter()).zip(record.iter()) {
            match col {
                Column::Id => subject.id = cell.to_string(),
                Column::Y => subject.y = parse_cell(path, line, name, cell)?,
                Column::Z => subject
                    .z
                    .push(parse_cell(path, line, name, cell)?.ok_or_else(|| {
                        Error::Data(format!(
                            "{}: missing scalar covariate",
                            location(path, line, name)
                        ))
                    })?),
                Column::X(c) => {
                    if let Some(v) = parse_cell(path, line, name, cell)? {
                        x.push((x_pos[c], v));
                    }
                }
                Column::Response(c) => {
                    if let Some(v) = parse_cell(path, line, name, cell)? {
                        y.push((y_pos[c], v));
                    }
                }
            }
        }
        if subject.id.is_empty() {
            return Err(Error::Data(format!(
                "{}: empty subject id",
                location(path, line, "id")
            )));
        }
        subject.x = samples(x);
        subject.y_curve = samples(y);
        subjects.push(subject);
    }
    let grid = |g: Vec<f64>| {
        if g.is_empty() {
            Ok(None)
        } else {
            Grid::new(g).map(Some)
        }
    };
    let mut data = FunctionalDataset::new(subjects, grid(x_grid)?, grid(y_grid)?)?;
    data.z_names = z_names;
    Ok(data)
}

fn samples(mut obs: Vec<(usize, f64)>) -> Option<Samples> {
    if obs.is_empty() {
        return None;
    }
    obs.sort_by_key(|o| o.0);
    let (idx, values) = obs.into_iter().unzip();
    Some(Samples { idx, values })
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Dense view of a curve on an `m`-point grid with `None` for unobserved points.
fn spread(s: Option<&Samples>, m: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; m];
    if let Some(s) = s {
        for (&j, &v) in s.idx.iter().zip(&s.values) {
            out[j] = Some(v);
        }
    }
    out
}

pub fn write_wide_csv(data: &FunctionalDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let has_y = data.subjects.iter().any(|s| s.y.is_some());
    let xg = data.x_grid.as_ref().map_or(&[][..], Grid::points);
    let yg = data.y_grid.as_ref().map_or(&[][..], Grid::points);
    let mut header = vec!["id".to_string()];
    if has_y {
        header.push("y".into());
    }
    header.extend(data.z_names.iter().cloned());
    header.extend(xg.iter().map(|t| format!("t={t}")));
    header.extend(yg.iter().map(|t| format!("yt={t}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for s in &data.subjects {
        let mut row = vec![s.id.clone()];
        if has_y {
            row.push(cell(s.y));
        }
        row.extend(s.z.iter().map(|v| v.to_string()));
        row.extend(spread(s.x.as_ref(), xg.len()).into_iter().map(cell));
        row.extend(spread(s.y_curve.as_ref(), yg.len()).into_iter().map(cell));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_long_csv(path: &Path, scalars: Option<&Path>) -> Result<FunctionalDataset> {
    let mut rdr = open(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let missing = |name: &str| Error::Parse {
        location: location(path, 1, name),
        message: format!("missing {name} column"),
    };
    let id_col = find("id").ok_or_else(|| missing("id"))?;
    let t_col = find("t").ok_or_else(|| missing("t"))?;
    let x_col = find("x");
    let y_col = find("y_t");
    if x_col.is_none() && y_col.is_none() {
        return Err(missing("x"));
    }

    struct Obs {
        t: f64,
        x: Option<f64>,
        y: Option<f64>,
        line: u64,
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Obs>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Data(format!(
                "{}: empty subject id",
                location(path, line, "id")
            )));
        }
        let t = parse_cell(path, line, "t", record.get(t_col).unwrap_or(""))?
            .ok_or_else(|| Error::Data(format!("{}: missing time", location(path, line, "t"))))?;
        let get = |c: Option<usize>, name: &str| match c {
            Some(c) => parse_cell(path, line, name, record.get(c).unwrap_or("")),
            None => Ok(None),
        };
        let obs = Obs {
            t,
            x: get(x_col, "x")?,
            y: get(y_col, "y_t")?,
            line,
        };
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if let Some(prev) = entry.iter().find(|o| o.t == t) {
            return Err(Error::Data(format!(
                "{}:{line}: subject {id} repeats time {t} (first at line {})",
                path.display(),
                prev.line
            )));
        }
        entry.push(obs);
    }

    let pooled = |pick: &dyn Fn(&Obs) -> bool| -> Vec<f64> {
        let mut ts: Vec<f64> = rows
            .values()
            .flatten()
            .filter(|o| pick(o))
            .map(|o| o.t)
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    };
    let x_grid = pooled(&|o| o.x.is_some());
    let y_grid = pooled(&|o| o.y.is_some());
    let index = |grid: &[f64], t: f64| {
        grid.binary_search_by(|g| g.total_cmp(&t))
            .expect("time is on the pooled grid")
    };

    let (z_names, mut scalar_rows) = match scalars {
        Some(p) => read_scalars(p)?,
        None => (Vec::new(), HashMap::new()),
    };
    let mut subjects = Vec::with_capacity(order.len());
    for id in &order {
        let obs = &rows[id];
        let mut s = Subject::new(id.clone());
        s.x = samples(
            obs.iter()
                .filter_map(|o| o.x.map(|v| (index(&x_grid, o.t), v)))
                .collect(),
        );
        s.y_curve = samples(
            obs.iter()
                .filter_map(|o| o.y.map(|v| (index(&y_grid, o.t), v)))
                .collect(),
        );
        if let Some((y, z)) = scalar_rows.remove(id) {
            s.y = y;
            s.z = z;
        } else if scalars.is_some() {
            return Err(Error::Data(format!(
                "subject {id} has no row in the scalars file"
            )));
        }
        subjects.push(s);
    }
    if let Some(id) = scalar_rows.keys().min() {
        return Err(Error::Data(format!(
            "scalars file lists subject {id} with no observations"
        )));
    }
    let grid = |g: Vec<f64>| {
        if g.is_empty() {
            Ok(None)
        } else {
            Grid::new(g).map(Some)
        }
    };
    let mut data = FunctionalDataset::new(subjects, grid(x_grid)?, grid(y_grid)?)?;
    if !z_names.is_empty() {
        data.z_names = z_names;
    }
    Ok(data)
}

type ScalarRows = HashMap<String, (Option<f64>, Vec<f64>)>;

fn read_scalars(path: &Path) -> Result<(Vec<String>, ScalarRows)> {
    let mut rdr = open(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let id_col = header
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| Error::Parse {
            location: location(path, 1, "id"),
            message: "missing id column".into(),
        })?;
    let y_col = header.iter().position(|h| h == "y");
    let z_cols: Vec<usize> = (0..header.len())
        .filter(|&c| header[c].starts_with("z_"))
        .collect();
    if let Some(c) =
        (0..header.len()).find(|&c| c != id_col && Some(c) != y_col && !z_cols.contains(&c))
    {
        return Err(Error::Parse {
            location: location(path, 1, &header[c]),
            message: format!("unrecognised column {:?}", &header[c]),
        });
    }
    let mut out = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[id_col].to_string();
        let y = match y_col {
            Some(c) => parse_cell(path, line, "y", &record[c])?,
            None => None,
        };
        let z = z_cols
            .iter()
            .map(|&c| {
                parse_cell(path, line, &header[c], &record[c])?.ok_or_else(|| {
                    Error::Data(format!(
                        "{}: missing scalar covariate",
                        location(path, line, &header[c])
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if out.insert(id.clone(), (y, z)).is_some() {
            return Err(Error::Data(format!(
                "{}: subject {id} listed twice",
                location(path, line, "id")
            )));
        }
    }
    Ok((z_cols.iter().map(|&c| header[c].to_string()).collect(), out))
}

/// Writes the long layout and its scalars file.
pub fn write_long_csv(data: &FunctionalDataset, path: &Path, scalars: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let has_x = data.subjects.iter().any(|s| s.x.is_some());
    let has_y = data.subjects.iter().any(|s| s.y_curve.is_some());
    let mut header = vec!["id", "t"];
    if has_x {
        header.push("x");
    }
    if has_y {
        header.push("y_t");
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for s in &data.subjects {
        let mut obs: Vec<(f64, Option<f64>, Option<f64>)> = Vec::new();
        if let (Some(x), Some(g)) = (&s.x, &data.x_grid) {
            obs.extend(
                x.idx
                    .iter()
                    .zip(&x.values)
                    .map(|(&j, &v)| (g.points()[j], Some(v), None)),
            );
        }
        if let (Some(y), Some(g)) = (&s.y_curve, &data.y_grid) {
            for (&j, &v) in y.idx.iter().zip(&y.values) {
                let t = g.points()[j];
                match obs.iter_mut().find(|o| o.0 == t) {
                    Some(o) => o.2 = Some(v),
                    None => obs.push((t, None, Some(v))),
                }
            }
        }
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, x, y) in obs {
            let mut row = vec![s.id.clone(), t.to_string()];
            if has_x {
                row.push(cell(x));
            }
            if has_y {
                row.push(cell(y));
            }
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(scalars).map_err(|e| csv_error(scalars, e))?;
    let has_scalar_y = data.subjects.iter().any(|s| s.y.is_some());
    let mut header = vec!["id".to_string()];
    if has_scalar_y {
        header.push("y".into());
    }
    header.extend(data.z_names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(scalars, e))?;
    for s in &data.subjects {
        let mut row = vec![s.id.clone()];
        if has_scalar_y {
            row.push(cell(s.y));
        }
        row.extend(s.z.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| csv_error(scalars, e))?;
    }
    w.flush()?;
    Ok(())
}
