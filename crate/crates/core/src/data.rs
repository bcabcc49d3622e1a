//! Subject-level functional data.

use serde::{Deserialize, Serialize};

use crate::basis::Grid;
use crate::error::{Error, Result};

/// Samples of one curve, stored as indices into a dataset grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Samples {
    pub fn new(idx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if idx.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} indices but {} values",
                idx.len(),
                values.len()
            )));
        }
        if idx.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data(
                "sample indices must be strictly increasing".into(),
            ));
        }
        Ok(Self { idx, values })
    }

    /// A curve observed at every point of an `m`-point grid.
    pub fn dense(values: Vec<f64>) -> Self {
        Self {
            idx: (0..values.len()).collect(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn times(&self, grid: &Grid) -> Vec<f64> {
        self.idx.iter().map(|&j| grid.points()[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    /// Scalar response.
    #[serde(default)]
    pub y: Option<f64>,
    /// Scalar covariates.
    #[serde(default)]
    pub z: Vec<f64>,
    /// Functional covariate on the dataset's `x_grid`.
    #[serde(default)]
    pub x: Option<Samples>,
    /// Functional response on the dataset's `y_grid`.
    #[serde(default)]
    pub y_curve: Option<Samples>,
}

impl Subject {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            y: None,
            z: Vec::new(),
            x: None,
            y_curve: None,
        }
    }
}

/// Min-max rescaling record: `scaled = (raw - min) / (max - min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub min: f64,
    pub max: f64,
}

impl Rescale {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, scaled: f64) -> f64 {
        self.min + scaled * (self.max - self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    pub subjects: Vec<Subject>,
    pub x_grid: Option<Grid>,
    pub y_grid: Option<Grid>,
    #[serde(default)]
    pub z_names: Vec<String>,
    #[serde(default)]
    pub z_rescale: Option<Vec<Rescale>>,
}

fn check_samples(s: &Samples, grid: Option<&Grid>, what: &str, id: &str) -> Result<()> {
    let grid =
        grid.ok_or_else(|| Error::Data(format!("subject {id} has a {what} curve but no grid")))?;
    if s.idx.len() != s.values.len() {
        return Err(Error::Shape(format!(
            "subject {id}: {what} indices and values differ in length"
        )));
    }
    if s.idx.windows(2).any(|w| w[1] <= w[0]) || s.idx.iter().any(|&j| j >= grid.len()) {
        return Err(Error::Data(format!(
            "subject {id}: invalid {what} grid indices"
        )));
    }
    if s.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "subject {id}: non-finite {what} value"
        )));
    }
    Ok(())
}

fn attach_subsets(grid: Option<Grid>, curves: Vec<Option<&Samples>>) -> Result<Option<Grid>> {
    let Some(grid) = grid else { return Ok(None) };
    let m = grid.len();
    let present: Vec<&Samples> = curves.into_iter().flatten().collect();
    if present.is_empty() || present.iter().all(|s| s.len() == m) {
        return Ok(Some(Grid::new(grid.points().to_vec())?));
    }
    let subsets = present.iter().map(|s| s.idx.clone()).collect();
    Grid::new(grid.points().to_vec())?
        .with_subsets(subsets)
        .map(Some)
}

impl FunctionalDataset {
    /// Validates subjects against the grids and records sparse observation patterns.
    pub fn new(subjects: Vec<Subject>, x_grid: Option<Grid>, y_grid: Option<Grid>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Data("dataset has no subjects".into()));
        }
        let q = subjects[0].z.len();
        for s in &subjects {
            if s.z.len() != q {
                return Err(Error::Data(format!(
                    "subject {} has {} scalar covariates, expected {q}",
                    s.id,
                    s.z.len()
                )));
            }
            if s.z.iter().any(|v| !v.is_finite()) || s.y.is_some_and(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "subject {} has a non-finite scalar",
                    s.id
                )));
            }
            if let Some(x) = &s.x {
                check_samples(x, x_grid.as_ref(), "covariate", &s.id)?;
            }
            if let Some(y) = &s.y_curve {
                check_samples(y, y_grid.as_ref(), "response", &s.id)?;
            }
        }
        let x_grid = attach_subsets(x_grid, subjects.iter().map(|s| s.x.as_ref()).collect())?;
        let y_grid = attach_subsets(
            y_grid,
            subjects.iter().map(|s| s.y_curve.as_ref()).collect(),
        )?;
        Ok(Self {
            subjects,
            x_grid,
            y_grid,
            z_names: (1..=q).map(|j| format!("z_{j}")).collect(),
            z_rescale: None,
        })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_scalar_covariates(&self) -> usize {
        self.subjects.first().map_or(0, |s| s.z.len())
    }

    pub fn x_grid(&self) -> Result<&Grid> {
        self.x_grid
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no functional covariate".into()))
    }

    pub fn y_grid(&self) -> Result<&Grid> {
        self.y_grid
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no functional response".into()))
    }

    pub fn is_sparse(&self) -> bool {
        let sparse = |g: &Option<Grid>| g.as_ref().is_some_and(|g| g.per_subject().is_some());
        sparse(&self.x_grid) || sparse(&self.y_grid)
    }

    pub fn scalar_responses(&self) -> Result<Vec<f64>> {
        self.subjects
            .iter()
            .map(|s| {
                s.y.ok_or_else(|| Error::Data(format!("subject {} has no scalar response", s.id)))
            })
            .collect()
    }

    /// Functional covariate of subject `i` as `(times, values)`.
    pub fn x_curve(&self, i: usize) -> Result<(Vec<f64>, &[f64])> {
        let grid = self.x_grid()?;
        let s = &self.subjects[i];
        let x = s
            .x
            .as_ref()
            .ok_or_else(|| Error::Data(format!("subject {} has no functional covariate", s.id)))?;
        Ok((x.times(grid), &x.values))
    }

    pub fn y_curve(&self, i: usize) -> Result<&Samples> {
        let s = &self.subjects[i];
        s.y_curve
            .as_ref()
            .ok_or_else(|| Error::Data(format!("subject {} has no functional response", s.id)))
    }

    /// Subjects at the given positions, in that order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let subjects = rows.iter().map(|&i| self.subjects[i].clone()).collect();
        let mut out = Self::new(subjects, self.x_grid.clone(), self.y_grid.clone())?;
        out.z_names = self.z_names.clone();
        out.z_rescale = self.z_rescale.clone();
        Ok(out)
    }

    /// Min-max rescales scalar covariates to `[0, 1]` and stores the record.
    pub fn rescale_covariates(&mut self) -> Result<()> {
        if self.z_rescale.is_some() {
            return Ok(());
        }
        let q = self.n_scalar_covariates();
        let mut records = Vec::with_capacity(q);
        for j in 0..q {
            let (min, max) = self
                .subjects
                .iter()
                .map(|s| s.z[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            if max <= min {
                return Err(Error::Data(format!(
                    "scalar covariate {} is constant and cannot be rescaled",
                    self.z_names.get(j).map_or("?", String::as_str)
                )));
            }
            records.push(Rescale { min, max });
        }
        for s in &mut self.subjects {
            for (v, r) in s.z.iter_mut().zip(&records) {
                *v = r.apply(*v);
            }
        }
        self.z_rescale = Some(records);
        Ok(())
    }
}
