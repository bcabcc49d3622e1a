//! Functional-response models fitted by the two-step procedure: an unconstrained
//! least-squares fit whose residual curves give an FPCA error covariance, then a
//! pre-whitened constrained fit of all coefficient blocks at once.
//!
//! Parameters are stacked block-wise. Block 0 is the intercept function
//! `beta_0(t)`; block 1 is the coefficient that carries the shape (`beta_1(t)` or
//! `beta_1(s, t)`); function-on-scalar models with several covariates add one
//! block per covariate.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{
    eval_basis_matrix, flcm_design, fofr_design, BasisSpec, BernsteinCurve, BernsteinSurface,
    TensorBasisSpec,
};
use crate::constraints::{
    build_constraints, build_quantile_monotone, ConstraintSystem, ShapeReport, ShapeSpec,
    DEFAULT_TOL,
};
use crate::data::{FunctionalDataset, Samples};
use crate::error::{Error, Result};
use crate::fpca::{
    estimate_covariance_sparse, estimate_covariance_with, pace_scores, sparse_mean, CovSmoother,
    CovarianceModel, DEFAULT_PVE,
};
use crate::qp::{ClsqFactor, QpOptions, QpSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    /// `Y(t) = beta_0(t) + sum_j z_j beta_j(t)`.
    Fosr,
    /// `Y(t) = beta_0(t) + X(t) beta_1(t)`.
    Flcm,
    /// `Y(t) = beta_0(t) + int X(s) beta_1(s, t) ds`.
    Fofr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub kind: FunctionalKind,
    pub order: usize,
    /// Response domain; the response grid's range when absent.
    #[serde(default)]
    pub t_domain: Option<(f64, f64)>,
    /// Covariate domain for function-on-function fits; the covariate grid's range when absent.
    #[serde(default)]
    pub s_domain: Option<(f64, f64)>,
}

impl FunctionalSpec {
    pub fn new(kind: FunctionalKind, order: usize) -> Self {
        Self {
            kind,
            order,
            t_domain: None,
            s_domain: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlsOptions {
    pub pve: f64,
    pub whiten: bool,
    /// Replace observed covariate values by their FPCA reconstruction in sparse designs.
    pub denoise: bool,
    #[serde(default)]
    pub smoother: CovSmoother,
}

impl Default for GlsOptions {
    fn default() -> Self {
        Self {
            pve: DEFAULT_PVE,
            whiten: true,
            denoise: false,
            smoother: CovSmoother::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

fn grid_range(points: &[f64]) -> Result<(f64, f64)> {
    match (points.first(), points.last()) {
        (Some(&a), Some(&b)) if b > a => Ok((a, b)),
        _ => Err(Error::Data(
            "grid must span an interval of positive length".into(),
        )),
    }
}

/// Stacked design of a functional-response model.
#[derive(Debug, Clone)]
pub struct FunctionalDesign {
    pub kind: FunctionalKind,
    pub t_spec: BasisSpec,
    pub tensor: Option<TensorBasisSpec>,
    pub blocks: Vec<Block>,
    /// Response grid.
    pub grid: Vec<f64>,
    /// Rows of the stacked design belonging to each subject.
    pub rows: Vec<Range<usize>>,
    /// Observed response-grid indices per subject.
    pub idx: Vec<Vec<usize>>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl FunctionalDesign {
    pub fn new(data: &FunctionalDataset, spec: &FunctionalSpec) -> Result<Self> {
        let y_grid = data.y_grid()?;
        let grid = y_grid.points().to_vec();
        let t_domain = match spec.t_domain {
            Some(d) => d,
            None => grid_range(&grid)?,
        };
        let t_spec = BasisSpec::new(spec.order, t_domain)?;
        y_grid.check_within(t_domain)?;
        let p = t_spec.n_coefs();
        let q = data.n_scalar_covariates();

        let (tensor, extra_blocks) = match spec.kind {
            FunctionalKind::Fosr => {
                if q == 0 {
                    return Err(Error::Data(
                        "function-on-scalar fit needs at least one scalar covariate".into(),
                    ));
                }
                (
                    None,
                    (0..q)
                        .map(|j| (format!("beta_{}", j + 1), p))
                        .collect::<Vec<_>>(),
                )
            }
            FunctionalKind::Flcm => {
                let xg = data.x_grid()?;
                if xg.points() != y_grid.points() {
                    return Err(Error::Data(
                        "concurrent model needs covariate and response on the same grid".into(),
                    ));
                }
                (None, vec![("beta_1".to_string(), p)])
            }
            FunctionalKind::Fofr => {
                let xg = data.x_grid()?;
                let s_domain = match spec.s_domain {
                    Some(d) => d,
                    None => grid_range(xg.points())?,
                };
                xg.check_within(s_domain)?;
                let tensor = TensorBasisSpec::new(spec.order, spec.order, s_domain, t_domain)?;
                (Some(tensor), vec![("beta_1".to_string(), tensor.n_coefs())])
            }
        };
        let mut blocks = vec![Block {
            name: "beta_0".into(),
            offset: 0,
            len: p,
        }];
        let mut offset = p;
        for (name, len) in extra_blocks {
            blocks.push(Block { name, offset, len });
            offset += len;
        }
        let total = offset;

        let mut row_blocks = Vec::with_capacity(data.n());
        let mut rows = Vec::with_capacity(data.n());
        let mut idx = Vec::with_capacity(data.n());
        let mut ys = Vec::new();
        let mut start = 0;
        for i in 0..data.n() {
            let yc = data.y_curve(i)?;
            let times = yc.times(y_grid);
            let b0 = eval_basis_matrix(&times, &t_spec)?;
            let mi = times.len();
            let mut block = DMatrix::zeros(mi, total);
            block.view_mut((0, 0), (mi, p)).copy_from(&b0);
            match spec.kind {
                FunctionalKind::Fosr => {
                    for (j, &z) in data.subjects[i].z.iter().enumerate() {
                        block
                            .view_mut((0, p * (j + 1)), (mi, p))
                            .copy_from(&(&b0 * z));
                    }
                }
                FunctionalKind::Flcm => {
                    let xs = data.subjects[i].x.as_ref().ok_or_else(|| {
                        Error::Data(format!(
                            "subject {} has no functional covariate",
                            data.subjects[i].id
                        ))
                    })?;
                    let xv = yc
                        .idx
                        .iter()
                        .map(|j| match xs.idx.binary_search(j) {
                            Ok(pos) => Ok(xs.values[pos]),
                            Err(_) => Err(Error::Data(format!(
                                "subject {}: covariate missing where the response is observed; \
                                 reconstruct sparse covariates first",
                                data.subjects[i].id
                            ))),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    block
                        .view_mut((0, p), (mi, p))
                        .copy_from(&flcm_design(&xv, &b0)?);
                }
                FunctionalKind::Fofr => {
                    let (s_times, xv) = data.x_curve(i)?;
                    let tensor = tensor
                        .as_ref()
                        .expect("tensor basis set for function-on-function");
                    let w = fofr_design(&s_times, xv, tensor, &times)?;
                    block.view_mut((0, p), (mi, tensor.n_coefs())).copy_from(&w);
                }
            }
            rows.push(start..start + mi);
            start += mi;
            idx.push(yc.idx.clone());
            ys.extend_from_slice(&yc.values);
            row_blocks.push(block);
        }
        let mut x = DMatrix::zeros(start, total);
        for (r, b) in rows.iter().zip(&row_blocks) {
            x.view_mut((r.start, 0), (r.len(), total)).copy_from(b);
        }
        Ok(Self {
            kind: spec.kind,
            t_spec,
            tensor,
            blocks,
            grid,
            rows,
            idx,
            x,
            y: DVector::from_vec(ys),
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.rows.len()
    }

    pub fn n_coefs(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_dense(&self) -> bool {
        let m = self.grid.len();
        self.idx.iter().all(|ix| ix.len() == m)
    }

    /// Constraint rows for a shape on the shaped block (or on all blocks for
    /// quantile monotonicity), lifted to the full parameter vector.
    pub fn constraints(&self, shape: Option<&ShapeSpec>) -> Result<ConstraintSystem> {
        let total = self.n_coefs();
        match shape {
            None => Ok(ConstraintSystem::empty(total)),
            Some(ShapeSpec::QuantileMonotone { j }) => {
                if self.kind != FunctionalKind::Fosr || *j + 1 != self.blocks.len() {
                    return Err(Error::Config(format!(
                        "quantile-monotone constraints need a function-on-scalar model with {j} covariates"
                    )));
                }
                build_quantile_monotone(*j, &self.t_spec)
            }
            Some(s) => self.block_constraints(1, s),
        }
    }

    /// A shape on block `k`, lifted to the full parameter vector.
    pub fn block_constraints(&self, k: usize, shape: &ShapeSpec) -> Result<ConstraintSystem> {
        let block = self
            .blocks
            .get(k)
            .ok_or_else(|| Error::Config(format!("model has no coefficient block {k}")))?;
        let sys = match (&self.tensor, k) {
            (Some(t), 1) => build_constraints(shape, t)?,
            _ => build_constraints(shape, &self.t_spec)?,
        };
        sys.embed(block.offset, self.n_coefs())
    }

    /// Applies `Sigma[O_i, O_i]^{-1/2}` to each subject's rows of `m`.
    pub fn whiten_rows(&self, m: &DMatrix<f64>, cov: &CovarianceModel) -> Result<DMatrix<f64>> {
        if m.nrows() != self.x.nrows() {
            return Err(Error::Shape(
                "matrix rows do not match the stacked design".into(),
            ));
        }
        if cov.identity {
            return Ok(m.clone());
        }
        if cov.m() != self.grid.len() {
            return Err(Error::Shape(
                "covariance model grid does not match the response grid".into(),
            ));
        }
        let mut cache: HashMap<&[usize], DMatrix<f64>> = HashMap::new();
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (r, ix) in self.rows.iter().zip(&self.idx) {
            let s = cache
                .entry(ix.as_slice())
                .or_insert_with(|| cov.inv_sqrt_sub(ix).expect("non-identity model"));
            let block = &*s * m.rows(r.start, r.len());
            out.rows_mut(r.start, r.len()).copy_from(&block);
        }
        Ok(out)
    }

    /// Ordinary least-squares residual curves and the FPCA covariance built from them.
    pub fn step_one(&self, pve: f64, smoother: CovSmoother) -> Result<CovarianceModel> {
        let sol = ClsqFactor::new(
            self.x.clone(),
            ConstraintSystem::empty(self.n_coefs()),
            QpOptions::default(),
        )?
        .solve(&self.y)?;
        let resid = &self.y - &self.x * DVector::from_column_slice(&sol.beta);
        self.covariance_from_residuals(&resid, pve, smoother)
    }

    pub fn covariance_from_residuals(
        &self,
        resid: &DVector<f64>,
        pve: f64,
        smoother: CovSmoother,
    ) -> Result<CovarianceModel> {
        if self.is_dense() {
            let m = self.grid.len();
            let mat = DMatrix::from_fn(self.n_subjects(), m, |i, j| resid[self.rows[i].start + j]);
            estimate_covariance_with(&mat, &self.grid, pve, smoother)
        } else {
            let curves: Vec<Samples> = self
                .rows
                .iter()
                .zip(&self.idx)
                .map(|(r, ix)| Samples {
                    idx: ix.clone(),
                    values: resid.rows(r.start, r.len()).iter().copied().collect(),
                })
                .collect();
            let refs: Vec<&Samples> = curves.iter().collect();
            estimate_covariance_sparse(&refs, &self.grid, pve)
        }
    }

    /// Solver for `shape` in the metric of `cov` (raw least squares when `None`).
    pub fn factor(
        &self,
        shape: Option<&ShapeSpec>,
        cov: Option<&CovarianceModel>,
    ) -> Result<ClsqFactor> {
        let cons = self.constraints(shape)?;
        let x = match cov {
            Some(c) => self.whiten_rows(&self.x, c)?,
            None => self.x.clone(),
        };
        ClsqFactor::new(x, cons, QpOptions::default())
    }

    /// Fits response `y` (stacked like the design) with a prepared factor.
    pub fn fit_with(
        &self,
        factor: &ClsqFactor,
        y: &DVector<f64>,
        shape: Option<&ShapeSpec>,
        cov: Option<&CovarianceModel>,
    ) -> Result<FunctionalFit> {
        let yw = match cov {
            Some(c) => self
                .whiten_rows(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()), c)?
                .column(0)
                .into_owned(),
            None => y.clone(),
        };
        let sol = factor.solve(&yw)?;
        self.package(sol, y, shape, cov)
    }

    fn package(
        &self,
        sol: QpSolution,
        y: &DVector<f64>,
        shape: Option<&ShapeSpec>,
        cov: Option<&CovarianceModel>,
    ) -> Result<FunctionalFit> {
        let coefs = DVector::from_column_slice(&sol.beta);
        let resid = y - &self.x * &coefs;
        let rss_raw = resid.norm_squared();
        let rss_whitened = match cov {
            Some(c) => self
                .whiten_rows(
                    &DMatrix::from_column_slice(resid.len(), 1, resid.as_slice()),
                    c,
                )?
                .norm_squared(),
            None => rss_raw,
        };
        let certificate = shape
            .map(|s| self.constraints(Some(s))?.check(&sol.beta, DEFAULT_TOL))
            .transpose()?;
        Ok(FunctionalFit {
            kind: self.kind,
            t_spec: self.t_spec,
            tensor: self.tensor,
            blocks: self.blocks.clone(),
            coefs: sol.beta,
            shape: shape.cloned(),
            covariance: cov.cloned(),
            rss_raw,
            rss_whitened,
            residuals: self
                .rows
                .iter()
                .map(|r| resid.rows(r.start, r.len()).iter().copied().collect())
                .collect(),
            residual_idx: self.idx.clone(),
            ridge: sol.ridge,
            active_set: sol.active_set,
            certificate,
        })
    }

    pub fn fit(
        &self,
        shape: Option<&ShapeSpec>,
        cov: Option<&CovarianceModel>,
    ) -> Result<FunctionalFit> {
        let factor = self.factor(shape, cov)?;
        self.fit_with(&factor, &self.y, shape, cov)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalFit {
    pub kind: FunctionalKind,
    pub t_spec: BasisSpec,
    pub tensor: Option<TensorBasisSpec>,
    pub blocks: Vec<Block>,
    /// All coefficient blocks stacked.
    pub coefs: Vec<f64>,
    pub shape: Option<ShapeSpec>,
    pub covariance: Option<CovarianceModel>,
    pub rss_raw: f64,
    pub rss_whitened: f64,
    /// Residual curve of each subject at its observed response points.
    pub residuals: Vec<Vec<f64>>,
    pub residual_idx: Vec<Vec<usize>>,
    pub ridge: f64,
    pub active_set: Vec<usize>,
    pub certificate: Option<ShapeReport>,
}

impl FunctionalFit {
    pub fn block(&self, k: usize) -> &[f64] {
        let b = &self.blocks[k];
        &self.coefs[b.offset..b.offset + b.len]
    }

    pub fn beta0_coefs(&self) -> &[f64] {
        self.block(0)
    }

    pub fn beta1_coefs(&self) -> &[f64] {
        self.block(1)
    }

    pub fn beta0(&self) -> BernsteinCurve {
        BernsteinCurve {
            spec: self.t_spec,
            coefs: self.beta0_coefs().to_vec(),
        }
    }

    /// Coefficient function of block `k >= 1` for univariate models.
    pub fn beta_curve(&self, k: usize) -> Result<BernsteinCurve> {
        if self.tensor.is_some() && k == 1 {
            return Err(Error::Config(
                "function-on-function coefficient is a surface".into(),
            ));
        }
        Ok(BernsteinCurve {
            spec: self.t_spec,
            coefs: self.block(k).to_vec(),
        })
    }

    pub fn beta1_surface(&self) -> Result<BernsteinSurface> {
        let tensor = self
            .tensor
            .ok_or_else(|| Error::Config("coefficient is univariate".into()))?;
        BernsteinSurface::new(tensor, self.beta1_coefs().to_vec())
    }

    /// Residuals as an `n x m` matrix, available for dense designs.
    pub fn residual_matrix(&self) -> Option<DMatrix<f64>> {
        let m = self.residual_idx.first()?.len();
        if self.residual_idx.iter().any(|ix| ix.len() != m)
            || self.residuals.iter().any(|r| r.len() != m)
        {
            return None;
        }
        Some(DMatrix::from_fn(self.residuals.len(), m, |i, j| {
            self.residuals[i][j]
        }))
    }
}

/// Completes sparse covariate curves by FPCA conditional expectation on the pooled grid.
///
/// Observed covariate values are kept unless `denoise` is set. Subjects with fewer
/// than two observed covariate points are dropped with a warning. Responses are
/// left at their observed points. Dense input is returned unchanged.
pub fn reconstruct_sparse(
    data: &FunctionalDataset,
    pve: f64,
    denoise: bool,
) -> Result<FunctionalDataset> {
    let Some(xg) = data.x_grid.as_ref() else {
        return Ok(data.clone());
    };
    if xg.per_subject().is_none() {
        return Ok(data.clone());
    }
    let mut keep = Vec::new();
    for (i, s) in data.subjects.iter().enumerate() {
        match &s.x {
            Some(x) if x.len() >= 2 => keep.push(i),
            _ => log::warn!(
                "subject {} has fewer than 2 covariate points and is excluded",
                s.id
            ),
        }
    }
    let data = data.subset(&keep)?;
    let grid = data.x_grid()?.points().to_vec();
    let curves: Vec<&Samples> = data.subjects.iter().filter_map(|s| s.x.as_ref()).collect();
    let mean = sparse_mean(&curves, &grid)?;
    let centred: Vec<Samples> = curves
        .iter()
        .map(|c| Samples {
            idx: c.idx.clone(),
            values: c
                .idx
                .iter()
                .zip(&c.values)
                .map(|(&j, v)| v - mean[j])
                .collect(),
        })
        .collect();
    let refs: Vec<&Samples> = centred.iter().collect();
    let cov = estimate_covariance_sparse(&refs, &grid, pve)?;
    let mut out = data.clone();
    for s in &mut out.subjects {
        let x = s.x.as_ref().expect("kept subjects have covariates");
        let scores = pace_scores(x, &mean, &cov)?;
        let mut full: Vec<f64> = (0..grid.len())
            .map(|j| {
                mean[j]
                    + scores
                        .iter()
                        .zip(&cov.eigenfunctions)
                        .map(|(xi, phi)| xi * phi[j])
                        .sum::<f64>()
            })
            .collect();
        if !denoise {
            for (&j, &v) in x.idx.iter().zip(&x.values) {
                full[j] = v;
            }
        }
        s.x = Some(Samples::dense(full));
    }
    FunctionalDataset::new(
        out.subjects,
        Some(crate::basis::Grid::new(grid)?),
        data.y_grid.clone(),
    )
    .map(|mut d| {
        d.z_names = data.z_names.clone();
        d.z_rescale = data.z_rescale.clone();
        d
    })
}

fn prepare(
    data: &FunctionalDataset,
    spec: &FunctionalSpec,
    opts: &GlsOptions,
) -> Result<FunctionalDesign> {
    let needs_x = spec.kind != FunctionalKind::Fosr;
    if needs_x
        && data
            .x_grid
            .as_ref()
            .is_some_and(|g| g.per_subject().is_some())
    {
        FunctionalDesign::new(&reconstruct_sparse(data, opts.pve, opts.denoise)?, spec)
    } else {
        FunctionalDesign::new(data, spec)
    }
}

/// Step one on its own: the unconstrained, unwhitened least-squares fit.
pub fn fit_unconstrained_ols(
    data: &FunctionalDataset,
    spec: &FunctionalSpec,
) -> Result<FunctionalFit> {
    prepare(data, spec, &GlsOptions::default())?.fit(None, None)
}

/// The full two-step fit. With `whiten` off this is plain constrained least squares.
pub fn fit_constrained_gls(
    data: &FunctionalDataset,
    spec: &FunctionalSpec,
    shape: Option<&ShapeSpec>,
    opts: &GlsOptions,
) -> Result<FunctionalFit> {
    let design = prepare(data, spec, opts)?;
    if opts.whiten {
        let cov = design.step_one(opts.pve, opts.smoother)?;
        design.fit(shape, Some(&cov))
    } else {
        design.fit(shape, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{eval_bernstein, Grid};
    use crate::data::Subject;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Concurrent-model data from sieve coefficients, optionally with noise.
    fn flcm_data(
        n: usize,
        m: usize,
        b0: &[f64],
        b1: &[f64],
        noise: f64,
        seed: u64,
    ) -> FunctionalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::equispaced(m, (0.0, 1.0)).unwrap();
        let subjects = (0..n)
            .map(|i| {
                let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x: Vec<f64> = grid
                    .points()
                    .iter()
                    .map(|&t| c[0] + c[1] * t + c[2] * t * t)
                    .collect();
                let shift = noise * rng.random_range(-1.0..1.0);
                let y: Vec<f64> = grid
                    .points()
                    .iter()
                    .zip(&x)
                    .map(|(&t, &xv)| {
                        eval_bernstein(b0, t).unwrap()
                            + xv * eval_bernstein(b1, t).unwrap()
                            + shift * (1.0 + t)
                            + noise * rng.random_range(-1.0..1.0)
                    })
                    .collect();
                Subject {
                    x: Some(Samples::dense(x)),
                    y_curve: Some(Samples::dense(y)),
                    ..Subject::new(i.to_string())
                }
            })
            .collect();
        FunctionalDataset::new(subjects, Some(grid.clone()), Some(grid)).unwrap()
    }

    #[test]
    fn noiseless_recovery() {
        let b0 = [1.0, 0.0, 2.0];
        let b1 = [3.0, 2.0, 0.5];
        let data = flcm_data(20, 15, &b0, &b1, 0.0, 1);
        let spec = FunctionalSpec::new(FunctionalKind::Flcm, 2);
        let fit = fit_unconstrained_ols(&data, &spec).unwrap();
        for (a, b) in fit.beta0_coefs().iter().zip(&b0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        for (a, b) in fit.beta1_coefs().iter().zip(&b1) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn constrained_fit_is_certified_and_costlier() {
        let data = flcm_data(30, 20, &[0.0, 0.5, 0.0], &[1.0, 1.1, 0.9, 1.0], 0.5, 2);
        let spec = FunctionalSpec::new(FunctionalKind::Flcm, 3);
        let design = FunctionalDesign::new(&data, &spec).unwrap();
        let cov = design.step_one(0.95, CovSmoother::default()).unwrap();
        let free = design.fit(None, Some(&cov)).unwrap();
        let shaped = design
            .fit(Some(&ShapeSpec::NonIncreasing), Some(&cov))
            .unwrap();
        assert!(shaped.rss_whitened >= free.rss_whitened * (1.0 - 1e-12));
        assert!(shaped.certificate.as_ref().unwrap().feasible);
        let c = shaped.beta_curve(1).unwrap();
        let vals = c
            .eval_many(&crate::basis::equispaced(200, (0.0, 1.0)))
            .unwrap();
        assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    }

    #[test]
    fn identity_covariance_reduces_to_least_squares_bitwise() {
        let data = flcm_data(25, 12, &[0.0, 1.0], &[1.0, 0.0], 0.3, 3);
        let spec = FunctionalSpec::new(FunctionalKind::Flcm, 1);
        let design = FunctionalDesign::new(&data, &spec).unwrap();
        let id = CovarianceModel::identity(&design.grid);
        let white = design
            .fit(Some(&ShapeSpec::NonNegative), Some(&id))
            .unwrap();
        let raw = design.fit(Some(&ShapeSpec::NonNegative), None).unwrap();
        assert_eq!(white.coefs, raw.coefs);
    }

    #[test]
    fn fosr_and_quantile_layout() {
        let grid = Grid::equispaced(10, (0.0, 1.0)).unwrap();
        let subjects = (0..12)
            .map(|i| {
                let z = i as f64 / 11.0;
                let y = grid.points().iter().map(|&t| t + z * t * t).collect();
                Subject {
                    z: vec![z],
                    y_curve: Some(Samples::dense(y)),
                    ..Subject::new(i.to_string())
                }
            })
            .collect();
        let data = FunctionalDataset::new(subjects, None, Some(grid)).unwrap();
        let spec = FunctionalSpec::new(FunctionalKind::Fosr, 2);
        let design = FunctionalDesign::new(&data, &spec).unwrap();
        assert_eq!(design.n_coefs(), 6);
        let cons = design
            .constraints(Some(&ShapeSpec::QuantileMonotone { j: 1 }))
            .unwrap();
        assert_eq!(cons.n_rows(), 4);
        assert!(design
            .constraints(Some(&ShapeSpec::QuantileMonotone { j: 2 }))
            .is_err());
        let fit = design
            .fit(Some(&ShapeSpec::QuantileMonotone { j: 1 }), None)
            .unwrap();
        assert_abs_diff_eq!(fit.rss_raw, 0.0, epsilon = 1e-20);
    }

    #[test]
    fn fofr_surface_shapes() {
        let grid = Grid::equispaced(12, (0.0, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let subjects = (0..30)
            .map(|i| {
                let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x: Vec<f64> = grid
                    .points()
                    .iter()
                    .map(|&s| c[0] + c[1] * s + c[2] * s * s)
                    .collect();
                let ix = crate::basis::trapezoid(grid.points(), &x);
                let y = grid
                    .points()
                    .iter()
                    .map(|&t| t + ix * t + 0.1 * rng.random_range(-1.0..1.0))
                    .collect();
                Subject {
                    x: Some(Samples::dense(x)),
                    y_curve: Some(Samples::dense(y)),
                    ..Subject::new(i.to_string())
                }
            })
            .collect();
        let data = FunctionalDataset::new(subjects, Some(grid.clone()), Some(grid)).unwrap();
        let spec = FunctionalSpec::new(FunctionalKind::Fofr, 2);
        let shape = ShapeSpec::BivariateMonotone {
            in_s: true,
            in_t: true,
        };
        let fit = fit_constrained_gls(&data, &spec, Some(&shape), &GlsOptions::default()).unwrap();
        assert!(fit.certificate.as_ref().unwrap().feasible);
        assert_eq!(fit.beta1_coefs().len(), 9);
        assert!(fit.beta1_surface().is_ok());
        assert!(fit.beta_curve(1).is_err());
    }

    #[test]
    fn dense_reconstruction_is_identity() {
        let data = flcm_data(5, 6, &[0.0, 1.0], &[1.0, 0.0], 0.1, 6);
        assert_eq!(reconstruct_sparse(&data, 0.95, false).unwrap(), data);
    }
}
