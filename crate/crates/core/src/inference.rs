//! Projection-based pointwise confidence bands and residual-bootstrap shape tests.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{eval_basis_matrix, BasisSpec};
use crate::constraints::{build_constraints, ConstraintSystem, ShapeSpec};
use crate::data::FunctionalDataset;
use crate::error::{Error, Result};
use crate::fpca::{CovSmoother, CovarianceModel, DEFAULT_PVE};
use crate::functional::{
    reconstruct_sparse, FunctionalDesign, FunctionalKind, FunctionalSpec, GlsOptions,
};
use crate::qp::OmegaProjector;
use crate::rng::{role, stream};
use crate::sofr::SofrDesign;
use crate::stats::quantile_sorted;

pub const DEFAULT_CI_DRAWS: usize = 500;
pub const DEFAULT_TEST_DRAWS: usize = 200;
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiOptions {
    pub level: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for CiOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            draws: DEFAULT_CI_DRAWS,
            seed: 0,
        }
    }
}

impl CiOptions {
    fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "confidence level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.draws < MIN_DRAWS {
            return Err(Error::Config(format!(
                "at least {MIN_DRAWS} draws are needed, got {}",
                self.draws
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiBand {
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Projection of the unconstrained estimate.
    pub estimate: Vec<f64>,
    pub level: f64,
    pub draws: usize,
    pub seed: u64,
}

impl CiBand {
    /// Share of grid points where `truth` lies inside the band.
    pub fn coverage(&self, truth: &[f64]) -> f64 {
        let hits = truth
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .filter(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
            .count();
        hits as f64 / truth.len().max(1) as f64
    }

    pub fn mean_width(&self) -> f64 {
        let w: f64 = self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).sum();
        w / self.grid.len().max(1) as f64
    }
}

/// Everything the band needs, with rows grouped by subject.
struct SandwichInput<'a> {
    design: &'a DMatrix<f64>,
    clusters: &'a [Range<usize>],
    resid: &'a DVector<f64>,
    beta: &'a DVector<f64>,
    /// Columns that are projected; the rest are partialled out.
    target: Range<usize>,
    cons: &'a ConstraintSystem,
    /// Basis values on the band grid for the reported function.
    eval: DMatrix<f64>,
    /// Columns of the reported function, relative to `target`.
    report: Range<usize>,
}

fn pseudo_inverse_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let tol = 1e-12 * eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let inv = eig.eigenvalues.map(|v| if v > tol { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Factor `L` with `L L' = delta`, clipping negative eigenvalues when needed.
fn draw_factor(delta: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (delta + delta.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&v| v < 0.0) {
        log::warn!(
            "draw covariance is not positive semi-definite; clipping negative eigenvalues at 0"
        );
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

fn sandwich_band(inp: SandwichInput<'_>, grid: Vec<f64>, opts: &CiOptions) -> Result<CiBand> {
    opts.validate()?;
    let n = inp.clusters.len() as f64;
    let p = inp.target.len();
    let wt = inp.design.columns(inp.target.start, p).into_owned();
    let others: Vec<usize> = (0..inp.design.ncols())
        .filter(|c| !inp.target.contains(c))
        .collect();
    let wtil = if others.is_empty() {
        wt
    } else {
        let m = inp.design.select_columns(&others);
        let coef =
            m.clone().svd(true, true).solve(&wt, 1e-12).map_err(|e| {
                Error::NotSpd(format!("partialling out nuisance columns failed: {e}"))
            })?;
        wt - m * coef
    };
    let omega = wtil.tr_mul(&wtil) / n;
    let mut meat = DMatrix::zeros(p, p);
    for r in inp.clusters {
        let s = wtil
            .rows(r.start, r.len())
            .tr_mul(&inp.resid.rows(r.start, r.len()));
        meat += &s * s.transpose();
    }
    meat /= n;
    let oinv = pseudo_inverse_sym(&omega);
    let delta = &oinv * meat * &oinv / n;
    let l = draw_factor(&delta);
    let projector = OmegaProjector::new(&omega, inp.cons)?;
    let center = inp.beta.rows(inp.target.start, p).into_owned();
    let report = |beta: &[f64]| -> Vec<f64> {
        let b = DVector::from_column_slice(&beta[inp.report.clone()]);
        (&inp.eval * b).iter().copied().collect()
    };
    let estimate = report(&projector.project(&center)?.beta);

    let curves: Vec<Vec<f64>> = (0..opts.draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(opts.seed, &[role::CI_DRAWS, b as u64]);
            let xi = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &center + &l * xi;
            Ok(report(&projector.project(&z)?.beta))
        })
        .collect::<Result<_>>()?;

    let alpha = 1.0 - opts.level;
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut col = vec![0.0; opts.draws];
    for j in 0..grid.len() {
        for (c, curve) in col.iter_mut().zip(&curves) {
            *c = curve[j];
        }
        col.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&col, alpha / 2.0));
        upper.push(quantile_sorted(&col, 1.0 - alpha / 2.0));
    }
    Ok(CiBand {
        grid,
        lower,
        upper,
        estimate,
        level: opts.level,
        draws: opts.draws,
        seed: opts.seed,
    })
}

/// Band for `beta(t)` in scalar-on-function regression, on the covariate grid.
pub fn projection_ci_scalar(
    data: &FunctionalDataset,
    spec: &BasisSpec,
    shape: Option<&ShapeSpec>,
    opts: &CiOptions,
) -> Result<CiBand> {
    let design = SofrDesign::new(data, spec)?;
    let fit = design.fit(None)?;
    let cons = match shape {
        Some(s) => build_constraints(s, spec)?,
        None => ConstraintSystem::empty(spec.n_coefs()),
    };
    let mut beta = vec![fit.alpha];
    beta.extend(&fit.gamma);
    beta.extend(&fit.beta_coefs);
    let clusters: Vec<Range<usize>> = (0..data.n()).map(|i| i..i + 1).collect();
    let grid = data.x_grid()?.points().to_vec();
    let off = design.beta_offset();
    sandwich_band(
        SandwichInput {
            design: &design.matrix,
            clusters: &clusters,
            resid: &DVector::from_vec(fit.residuals),
            beta: &DVector::from_vec(beta),
            target: off..off + spec.n_coefs(),
            cons: &cons,
            eval: eval_basis_matrix(&grid, spec)?,
            report: 0..spec.n_coefs(),
        },
        grid,
        opts,
    )
}

/// Band for a functional-response model, computed on the design whitened by `cov`.
///
/// `cons` restricts the columns in `target`; `block` picks the coefficient
/// function reported on the response grid.
pub fn projection_ci_design(
    design: &FunctionalDesign,
    cov: Option<&CovarianceModel>,
    target: Range<usize>,
    cons: &ConstraintSystem,
    block: usize,
    opts: &CiOptions,
) -> Result<CiBand> {
    if design.kind == FunctionalKind::Fofr {
        return Err(Error::Config(
            "pointwise bands are available for univariate coefficient functions only".into(),
        ));
    }
    let blk = design
        .blocks
        .get(block)
        .ok_or_else(|| Error::Config(format!("model has no coefficient block {block}")))?;
    if blk.offset < target.start || blk.offset + blk.len > target.end {
        return Err(Error::Config(
            "reported block must lie inside the constrained columns".into(),
        ));
    }
    let fit = design.fit(None, cov)?;
    let beta = DVector::from_column_slice(&fit.coefs);
    let resid = &design.y - &design.x * &beta;
    let (x, resid) = match cov {
        Some(c) => (
            design.whiten_rows(&design.x, c)?,
            design
                .whiten_rows(
                    &DMatrix::from_column_slice(resid.len(), 1, resid.as_slice()),
                    c,
                )?
                .column(0)
                .into_owned(),
        ),
        None => (design.x.clone(), resid),
    };
    let grid = design.grid.clone();
    sandwich_band(
        SandwichInput {
            design: &x,
            clusters: &design.rows,
            resid: &resid,
            beta: &beta,
            report: blk.offset - target.start..blk.offset - target.start + blk.len,
            target,
            cons,
            eval: eval_basis_matrix(&grid, &design.t_spec)?,
        },
        grid,
        opts,
    )
}

/// Band for the shaped coefficient function `beta_1(t)` of a function-on-scalar or
/// concurrent model.
pub fn projection_ci_functional(
    data: &FunctionalDataset,
    spec: &FunctionalSpec,
    shape: Option<&ShapeSpec>,
    gls: &GlsOptions,
    opts: &CiOptions,
) -> Result<CiBand> {
    if spec.kind == FunctionalKind::Fofr {
        return Err(Error::Config(
            "pointwise bands are available for univariate coefficient functions only".into(),
        ));
    }
    let data = if spec.kind != FunctionalKind::Fosr {
        reconstruct_sparse(data, gls.pve, gls.denoise)?
    } else {
        data.clone()
    };
    let design = FunctionalDesign::new(&data, spec)?;
    let (target, cons) = match shape {
        Some(ShapeSpec::QuantileMonotone { .. }) => {
            (0..design.n_coefs(), design.constraints(shape)?)
        }
        Some(s) => {
            let b = &design.blocks[1];
            (
                b.offset..b.offset + b.len,
                build_constraints(s, &design.t_spec)?,
            )
        }
        None => {
            let b = &design.blocks[1];
            (b.offset..b.offset + b.len, ConstraintSystem::empty(b.len))
        }
    };
    let cov = if gls.whiten {
        Some(design.step_one(gls.pve, gls.smoother)?)
    } else {
        None
    };
    projection_ci_design(&design, cov.as_ref(), target, &cons, 1, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub rss_constrained: f64,
    pub rss_unconstrained: f64,
    pub bootstrap_stats: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub draws: usize,
    pub seed: u64,
    /// Whiten the functional fits with the step-one covariance; off by default.
    pub whiten: bool,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            draws: DEFAULT_TEST_DRAWS,
            seed: 0,
            whiten: false,
        }
    }
}

/// `(RSS_c - RSS_u) / RSS_u`, with the degenerate `RSS_u = 0` case sent to 0 or infinity.
pub fn rss_statistic(rss_c: f64, rss_u: f64) -> f64 {
    if rss_u > 0.0 {
        ((rss_c - rss_u) / rss_u).max(0.0)
    } else if rss_c > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn p_value(t_obs: f64, stats: &[f64]) -> f64 {
    stats.iter().filter(|&&t| t >= t_obs).count() as f64 / stats.len() as f64
}

fn check_draws(draws: usize) -> Result<()> {
    if draws < MIN_DRAWS {
        return Err(Error::Config(format!(
            "at least {MIN_DRAWS} bootstrap draws are needed, got {draws}"
        )));
    }
    Ok(())
}

/// Residual bootstrap test of `H0: beta` has `shape_null` in scalar-on-function regression.
pub fn bootstrap_shape_test_scalar(
    data: &FunctionalDataset,
    spec: &BasisSpec,
    shape_null: &ShapeSpec,
    opts: &TestOptions,
) -> Result<TestReport> {
    check_draws(opts.draws)?;
    let design = SofrDesign::new(data, spec)?;
    let free = design.factor(None)?;
    let null = design.factor(Some(shape_null))?;
    let fit_u = design.make_fit(free.solve(&design.y)?, &design.y, None)?;
    let fit_c = design.make_fit(null.solve(&design.y)?, &design.y, Some(shape_null))?;
    let t_obs = rss_statistic(fit_c.rss, fit_u.rss);
    if fit_u.rss == 0.0 {
        log::warn!("unconstrained fit is exact; statistic set to {t_obs}");
    }
    let n = data.n();
    let fitted_c = DVector::from_column_slice(&fit_c.fitted);
    let stats: Vec<f64> = (0..opts.draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(opts.seed, &[role::BOOTSTRAP, b as u64]);
            let y = DVector::from_fn(n, |i, _| {
                fitted_c[i] + fit_u.residuals[rng.random_range(0..n)]
            });
            let rss = |f: &crate::qp::ClsqFactor| -> Result<f64> {
                let beta = DVector::from_vec(f.solve(&y)?.beta);
                Ok((&y - &design.matrix * beta).norm_squared())
            };
            Ok(rss_statistic(rss(&null)?, rss(&free)?))
        })
        .collect::<Result<_>>()?;
    Ok(TestReport {
        statistic: t_obs,
        p_value: p_value(t_obs, &stats),
        rss_constrained: fit_c.rss,
        rss_unconstrained: fit_u.rss,
        bootstrap_stats: stats,
        seed: opts.seed,
    })
}

/// Curve-level residual bootstrap test for a functional-response model.
///
/// Needs every response on the full grid; sparse covariates are completed first.
pub fn bootstrap_shape_test_functional(
    data: &FunctionalDataset,
    spec: &FunctionalSpec,
    shape_null: &ShapeSpec,
    opts: &TestOptions,
) -> Result<TestReport> {
    check_draws(opts.draws)?;
    let data = if spec.kind != FunctionalKind::Fosr {
        reconstruct_sparse(data, DEFAULT_PVE, false)?
    } else {
        data.clone()
    };
    let design = FunctionalDesign::new(&data, spec)?;
    if !design.is_dense() {
        return Err(Error::Config(
            "the curve bootstrap needs every response observed on the full grid".into(),
        ));
    }
    let cov = if opts.whiten {
        Some(design.step_one(DEFAULT_PVE, CovSmoother::default())?)
    } else {
        None
    };
    let free = design.factor(None, cov.as_ref())?;
    let null = design.factor(Some(shape_null), cov.as_ref())?;
    let fit_u = design.fit_with(&free, &design.y, None, cov.as_ref())?;
    let fit_c = design.fit_with(&null, &design.y, Some(shape_null), cov.as_ref())?;
    let t_obs = rss_statistic(fit_c.rss_whitened, fit_u.rss_whitened);
    if fit_u.rss_whitened == 0.0 {
        log::warn!("unconstrained fit is exact; statistic set to {t_obs}");
    }
    let n = design.n_subjects();
    let fitted_c = &design.x * DVector::from_column_slice(&fit_c.coefs);
    let stats: Vec<f64> = (0..opts.draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(opts.seed, &[role::BOOTSTRAP, b as u64]);
            let mut y = fitted_c.clone();
            for r in &design.rows {
                let donor = &fit_u.residuals[rng.random_range(0..n)];
                for (k, e) in r.clone().zip(donor) {
                    y[k] += e;
                }
            }
            let rc = design.fit_with(&null, &y, None, cov.as_ref())?.rss_whitened;
            let ru = design.fit_with(&free, &y, None, cov.as_ref())?.rss_whitened;
            Ok(rss_statistic(rc, ru))
        })
        .collect::<Result<_>>()?;
    Ok(TestReport {
        statistic: t_obs,
        p_value: p_value(t_obs, &stats),
        rss_constrained: fit_c.rss_whitened,
        rss_unconstrained: fit_u.rss_whitened,
        bootstrap_stats: stats,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Grid;
    use crate::data::{Samples, Subject};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sofr_data(n: usize, noise: f64, seed: u64) -> FunctionalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::equispaced(30, (0.0, 1.0)).unwrap();
        let subjects = (0..n)
            .map(|i| {
                let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x: Vec<f64> = grid
                    .points()
                    .iter()
                    .map(|&t| c[0] + c[1] * t + c[2] * (4.0 * t).sin() + c[3] * t * t)
                    .collect();
                let xb: Vec<f64> = grid.points().iter().zip(&x).map(|(t, v)| v * t).collect();
                let y = 0.5
                    + crate::basis::trapezoid(grid.points(), &xb)
                    + noise * rng.random_range(-1.0..1.0);
                Subject {
                    y: Some(y),
                    x: Some(Samples::dense(x)),
                    ..Subject::new(i.to_string())
                }
            })
            .collect();
        FunctionalDataset::new(subjects, Some(grid), None).unwrap()
    }

    #[test]
    fn feasible_noiseless_null_gives_p_one() {
        let data = sofr_data(30, 0.0, 1);
        let opts = TestOptions {
            draws: 100,
            seed: 3,
            whiten: false,
        };
        let rep = bootstrap_shape_test_scalar(
            &data,
            &BasisSpec::unit(2),
            &ShapeSpec::NonDecreasing,
            &opts,
        )
        .unwrap();
        assert_eq!(rep.statistic, 0.0);
        assert_eq!(rep.p_value, 1.0);
        assert_eq!(rep.bootstrap_stats.len(), 100);
    }

    #[test]
    fn test_is_seed_deterministic() {
        let data = sofr_data(40, 0.3, 2);
        let opts = TestOptions {
            draws: 100,
            seed: 11,
            whiten: false,
        };
        let a = bootstrap_shape_test_scalar(
            &data,
            &BasisSpec::unit(3),
            &ShapeSpec::NonIncreasing,
            &opts,
        )
        .unwrap();
        let b = bootstrap_shape_test_scalar(
            &data,
            &BasisSpec::unit(3),
            &ShapeSpec::NonIncreasing,
            &opts,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.statistic > 0.0);
        let expect = a
            .bootstrap_stats
            .iter()
            .filter(|&&t| t >= a.statistic)
            .count() as f64
            / 100.0;
        assert_eq!(a.p_value, expect);
    }

    #[test]
    fn statistic_degenerate_cases() {
        assert_eq!(rss_statistic(0.0, 0.0), 0.0);
        assert_eq!(rss_statistic(1.0, 0.0), f64::INFINITY);
        assert_abs_diff_eq!(rss_statistic(3.0, 2.0), 0.5);
    }

    #[test]
    fn unconstrained_band_is_normal_percentile_band() {
        let data = sofr_data(50, 0.2, 4);
        let spec = BasisSpec::unit(2);
        let opts = CiOptions {
            level: 0.9,
            draws: 200,
            seed: 5,
        };
        let band = projection_ci_scalar(&data, &spec, None, &opts).unwrap();
        // Free projection is the identity, so the estimate is the unconstrained curve.
        let fit = crate::sofr::fit_sofr(&data, &spec, None).unwrap();
        let free = fit.beta().eval_many(&band.grid).unwrap();
        for (a, b) in band.estimate.iter().zip(&free) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        for j in 0..band.grid.len() {
            assert!(
                band.lower[j] <= band.estimate[j] + 1e-9
                    && band.estimate[j] <= band.upper[j] + 1e-9
            );
        }
    }

    #[test]
    fn bands_nest_across_levels() {
        let data = sofr_data(50, 0.2, 6);
        let spec = BasisSpec::unit(3);
        let shape = ShapeSpec::NonDecreasing;
        let o95 = CiOptions {
            level: 0.95,
            draws: 150,
            seed: 8,
        };
        let o90 = CiOptions { level: 0.9, ..o95 };
        let wide = projection_ci_scalar(&data, &spec, Some(&shape), &o95).unwrap();
        let narrow = projection_ci_scalar(&data, &spec, Some(&shape), &o90).unwrap();
        for j in 0..wide.grid.len() {
            assert!(wide.lower[j] <= narrow.lower[j] && narrow.upper[j] <= wide.upper[j]);
        }
        // The projected estimate is the constrained fit.
        let fit = crate::sofr::fit_sofr(&data, &spec, Some(&shape)).unwrap();
        let curve = fit.beta().eval_many(&wide.grid).unwrap();
        for (a, b) in wide.estimate.iter().zip(&curve) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn too_few_draws_is_config_error() {
        let data = sofr_data(20, 0.2, 7);
        let opts = CiOptions {
            draws: 10,
            ..CiOptions::default()
        };
        assert!(matches!(
            projection_ci_scalar(&data, &BasisSpec::unit(2), None, &opts),
            Err(Error::Config(_))
        ));
    }
}
