//! Scalar-on-function regression `Y = alpha + Z' gamma + int X(t) beta(t) dt + e`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{sofr_design, BasisSpec, BernsteinCurve};
use crate::constraints::{
    build_constraints, ConstraintSystem, ShapeReport, ShapeSpec, DEFAULT_TOL,
};
use crate::data::FunctionalDataset;
use crate::error::{Error, Result};
use crate::qp::{ClsqFactor, QpOptions, QpSolution};

/// Design `[1 | Z | W]` and response of a scalar-on-function problem.
#[derive(Debug, Clone)]
pub struct SofrDesign {
    pub spec: BasisSpec,
    pub matrix: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Number of scalar covariates.
    pub q: usize,
}

impl SofrDesign {
    /// Design for a dataset whose responses may be absent (prediction only).
    pub fn covariates(data: &FunctionalDataset, spec: &BasisSpec) -> Result<DMatrix<f64>> {
        let grid = data.x_grid()?;
        grid.check_within((spec.domain.0, spec.domain.1))?;
        let curves = (0..data.n())
            .map(|i| data.x_curve(i))
            .collect::<Result<Vec<_>>>()?;
        let w = sofr_design(curves.iter().map(|(t, x)| (t.as_slice(), *x)), spec)?;
        let q = data.n_scalar_covariates();
        let n = data.n();
        let p = spec.n_coefs();
        let mut m = DMatrix::zeros(n, 1 + q + p);
        for i in 0..n {
            m[(i, 0)] = 1.0;
            for (j, &z) in data.subjects[i].z.iter().enumerate() {
                m[(i, 1 + j)] = z;
            }
        }
        m.view_mut((0, 1 + q), (n, p)).copy_from(&w);
        Ok(m)
    }

    pub fn new(data: &FunctionalDataset, spec: &BasisSpec) -> Result<Self> {
        let y = DVector::from_vec(data.scalar_responses()?);
        let q = data.n_scalar_covariates();
        let need = spec.n_coefs() + 1 + q;
        if data.n() < need {
            return Err(Error::Data(format!(
                "scalar-on-function fit with order {} and {q} covariates needs at least {need} subjects, got {}",
                spec.order,
                data.n()
            )));
        }
        let matrix = Self::covariates(data, spec)?;
        Ok(Self {
            spec: *spec,
            matrix,
            y,
            q,
        })
    }

    pub fn beta_offset(&self) -> usize {
        1 + self.q
    }

    pub fn n_coefs(&self) -> usize {
        self.matrix.ncols()
    }

    /// Constraint rows on the functional block, lifted to the full parameter vector.
    pub fn constraints(&self, shape: Option<&ShapeSpec>) -> Result<ConstraintSystem> {
        match shape {
            None => Ok(ConstraintSystem::empty(self.n_coefs())),
            Some(s) => build_constraints(s, &self.spec)?.embed(self.beta_offset(), self.n_coefs()),
        }
    }

    pub fn factor(&self, shape: Option<&ShapeSpec>) -> Result<ClsqFactor> {
        ClsqFactor::new(
            self.matrix.clone(),
            self.constraints(shape)?,
            QpOptions::default(),
        )
    }

    /// Packages a solver result for response `y`.
    pub fn make_fit(
        &self,
        sol: QpSolution,
        y: &DVector<f64>,
        shape: Option<&ShapeSpec>,
    ) -> Result<SofrFit> {
        let coefs = DVector::from_column_slice(&sol.beta);
        let fitted = &self.matrix * &coefs;
        let residuals: Vec<f64> = (y - &fitted).iter().copied().collect();
        let rss = residuals.iter().map(|e| e * e).sum();
        let off = self.beta_offset();
        let beta_coefs = sol.beta[off..].to_vec();
        let certificate = shape
            .map(|s| build_constraints(s, &self.spec)?.check(&beta_coefs, DEFAULT_TOL))
            .transpose()?;
        Ok(SofrFit {
            alpha: sol.beta[0],
            gamma: sol.beta[1..off].to_vec(),
            beta_coefs,
            basis: self.spec,
            shape: shape.cloned(),
            rss,
            residuals,
            fitted: fitted.iter().copied().collect(),
            ridge: sol.ridge,
            active_set: sol.active_set,
            certificate,
        })
    }

    pub fn fit(&self, shape: Option<&ShapeSpec>) -> Result<SofrFit> {
        let sol = self.factor(shape)?.solve(&self.y)?;
        self.make_fit(sol, &self.y, shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SofrFit {
    pub alpha: f64,
    pub gamma: Vec<f64>,
    pub beta_coefs: Vec<f64>,
    pub basis: BasisSpec,
    pub shape: Option<ShapeSpec>,
    pub rss: f64,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub ridge: f64,
    pub active_set: Vec<usize>,
    pub certificate: Option<ShapeReport>,
}

impl SofrFit {
    pub fn beta(&self) -> BernsteinCurve {
        BernsteinCurve {
            spec: self.basis,
            coefs: self.beta_coefs.clone(),
        }
    }
}

/// Fits the model; `shape = None` gives the unconstrained fit.
pub fn fit_sofr(
    data: &FunctionalDataset,
    spec: &BasisSpec,
    shape: Option<&ShapeSpec>,
) -> Result<SofrFit> {
    SofrDesign::new(data, spec)?.fit(shape)
}

/// `alpha + Z gamma + W beta` for new subjects.
pub fn predict_sofr(fit: &SofrFit, newdata: &FunctionalDataset) -> Result<Vec<f64>> {
    if newdata.n_scalar_covariates() != fit.gamma.len() {
        return Err(Error::Shape(format!(
            "fit has {} scalar covariates, new data has {}",
            fit.gamma.len(),
            newdata.n_scalar_covariates()
        )));
    }
    let m = SofrDesign::covariates(newdata, &fit.basis)?;
    let mut coefs = vec![fit.alpha];
    coefs.extend(&fit.gamma);
    coefs.extend(&fit.beta_coefs);
    Ok((m * DVector::from_vec(coefs)).iter().copied().collect())
}
