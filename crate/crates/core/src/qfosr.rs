//! Quantile function-on-scalar regression: each subject's response is a quantile
//! function `Q_i(p)`, modelled as `beta_0(p) + sum_j x_ij beta_j(p)` with the
//! covariates rescaled to `[0, 1]`. Monotonicity of every predicted quantile
//! function over the covariate box is enforced at the box's vertices.

use serde::{Deserialize, Serialize};

use crate::basis::BernsteinCurve;
use crate::constraints::{ConstraintSystem, ShapeReport, ShapeSpec, DEFAULT_TOL};
use crate::data::{FunctionalDataset, Rescale};
use crate::error::{Error, Result};
use crate::functional::{FunctionalDesign, FunctionalFit, FunctionalKind, GlsOptions};
use crate::inference::{projection_ci_design, CiBand, CiOptions};
use crate::model::functional_spec;
use crate::qp::{ClsqFactor, QpOptions};

/// Extra shape on one predictor's coefficient, stacked on the monotonicity rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockShape {
    /// 1-based predictor index.
    pub predictor: usize,
    pub shape: ShapeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfosrOptions {
    pub order: usize,
    pub gls: GlsOptions,
    pub block_shape: Option<BlockShape>,
    /// Decreases in an input quantile function up to this size are tolerated with a warning.
    pub monotone_tol: f64,
    /// Band for the coefficient of this predictor (0 is the intercept function).
    pub ci_block: usize,
    pub ci: Option<CiOptions>,
}

impl Default for QfosrOptions {
    fn default() -> Self {
        Self {
            order: 7,
            gls: GlsOptions::default(),
            block_shape: None,
            monotone_tol: 1e-8,
            ci_block: 1,
            ci: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfosrFit {
    pub fit: FunctionalFit,
    pub rescale: Vec<Rescale>,
    pub z_names: Vec<String>,
    /// Check of all imposed rows (vertex monotonicity plus any block shape).
    pub certificate: ShapeReport,
    pub band: Option<CiBand>,
}

impl QfosrFit {
    pub fn n_predictors(&self) -> usize {
        self.rescale.len()
    }

    /// `beta_0` for `j = 0`, otherwise the coefficient of predictor `j`.
    pub fn coefficient(&self, j: usize) -> Result<BernsteinCurve> {
        self.fit.beta_curve(j)
    }

    /// Predicted quantile function at covariates already on the `[0, 1]` scale.
    pub fn predict_scaled(&self, x: &[f64]) -> Result<BernsteinCurve> {
        if x.len() != self.n_predictors() {
            return Err(Error::Shape(format!(
                "expected {} predictors, got {}",
                self.n_predictors(),
                x.len()
            )));
        }
        let mut coefs = self.fit.block(0).to_vec();
        for (j, &xj) in x.iter().enumerate() {
            for (c, b) in coefs.iter_mut().zip(self.fit.block(j + 1)) {
                *c += xj * b;
            }
        }
        BernsteinCurve::new(self.fit.t_spec, coefs)
    }

    /// Predicted quantile function at covariates on their original scale.
    pub fn predict(&self, raw: &[f64]) -> Result<BernsteinCurve> {
        let scaled: Vec<f64> = raw
            .iter()
            .zip(&self.rescale)
            .map(|(v, r)| r.apply(*v))
            .collect();
        if scaled.len() != raw.len() {
            return Err(Error::Shape(format!(
                "expected {} predictors, got {}",
                self.n_predictors(),
                raw.len()
            )));
        }
        self.predict_scaled(&scaled)
    }
}

/// Rejects response curves that decrease by more than `tol`; smaller dips are logged.
pub fn check_monotone_responses(data: &FunctionalDataset, tol: f64) -> Result<()> {
    let mut bad = Vec::new();
    for i in 0..data.n() {
        let y = data.y_curve(i)?;
        let worst = y.values.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        if worst > tol {
            bad.push(data.subjects[i].id.clone());
        } else if worst > 0.0 {
            log::warn!(
                "subject {}: quantile function decreases by {worst:.2e}, within tolerance",
                data.subjects[i].id
            );
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "quantile functions are not non-decreasing for subjects: {}",
            bad.join(", ")
        )))
    }
}

/// Two-step fit with the vertex monotonicity constraints over all blocks.
pub fn fit_qfosr(data: &FunctionalDataset, opts: &QfosrOptions) -> Result<QfosrFit> {
    check_monotone_responses(data, opts.monotone_tol)?;
    let mut data = data.clone();
    data.rescale_covariates()?;
    let j = data.n_scalar_covariates();
    let spec = functional_spec(&data, FunctionalKind::Fosr, opts.order)?;
    let design = FunctionalDesign::new(&data, &spec)?;
    let qm = ShapeSpec::QuantileMonotone { j };
    let mut cons: ConstraintSystem = design.constraints(Some(&qm))?;
    if let Some(bs) = &opts.block_shape {
        if bs.predictor == 0 || bs.predictor > j {
            return Err(Error::Config(format!(
                "block shape names predictor {} but the model has {j}",
                bs.predictor
            )));
        }
        cons = cons.stack(&design.block_constraints(bs.predictor, &bs.shape)?)?;
    }
    let cov = if opts.gls.whiten {
        Some(design.step_one(opts.gls.pve, opts.gls.smoother)?)
    } else {
        None
    };
    let x = match &cov {
        Some(c) => design.whiten_rows(&design.x, c)?,
        None => design.x.clone(),
    };
    let factor = ClsqFactor::new(x, cons.clone(), QpOptions::default())?;
    let fit = design.fit_with(&factor, &design.y, Some(&qm), cov.as_ref())?;
    let certificate = cons.check(&fit.coefs, DEFAULT_TOL)?;
    let band = match &opts.ci {
        Some(ci) => Some(projection_ci_design(
            &design,
            cov.as_ref(),
            0..design.n_coefs(),
            &cons,
            opts.ci_block,
            ci,
        )?),
        None => None,
    };
    Ok(QfosrFit {
        fit,
        rescale: data.z_rescale.clone().expect("covariates were rescaled"),
        z_names: data.z_names.clone(),
        certificate,
        band,
    })
}

/// Smallest derivative of the predicted quantile function at `x` over `points`.
pub fn min_slope(fit: &QfosrFit, x: &[f64], points: &[f64]) -> Result<f64> {
    let d = fit.predict_scaled(x)?.derivative()?;
    Ok(d.eval_many(points)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{equispaced, Grid};
    use crate::data::{Samples, Subject};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(
        n: usize,
        q: impl Fn(&[f64], f64) -> f64,
        j: usize,
        noise: f64,
        seed: u64,
    ) -> FunctionalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = equispaced(30, (0.0, 1.0));
        let subjects = (0..n)
            .map(|i| {
                let mut z: Vec<f64> = (0..j).map(|_| rng.random_range(0.0..1.0)).collect();
                if i < 2 {
                    // Pin the covariate range to [0, 1] so rescaling is the identity.
                    z.iter_mut().for_each(|v| *v = i as f64);
                }
                let shift = noise * rng.random_range(-1.0..1.0);
                let y: Vec<f64> = grid.iter().map(|&p| q(&z, p) + shift).collect();
                Subject {
                    z,
                    y_curve: Some(Samples::dense(y)),
                    ..Subject::new(format!("q{i}"))
                }
            })
            .collect();
        FunctionalDataset::new(subjects, None, Some(Grid::new(grid).unwrap())).unwrap()
    }

    #[test]
    fn decreasing_slope_coefficient_is_allowed() {
        let data = dataset(40, |z, p| p + z[0] * (-0.2 * p), 1, 0.0, 1);
        let opts = QfosrOptions {
            order: 3,
            ..QfosrOptions::default()
        };
        let fit = fit_qfosr(&data, &opts).unwrap();
        assert!(fit.certificate.feasible);
        let grid = equispaced(200, (0.0, 1.0));
        for x in [0.0, 1.0] {
            assert!(min_slope(&fit, &[x], &grid).unwrap() >= -1e-10);
        }
        let b1 = fit.coefficient(1).unwrap();
        assert!(b1.eval(1.0).unwrap() < b1.eval(0.0).unwrap());
        assert_abs_diff_eq!(b1.eval(1.0).unwrap(), -0.2, epsilon = 1e-6);
    }

    #[test]
    fn identical_curves_give_flat_covariate_effects() {
        let data = dataset(20, |_, p| p * p, 2, 0.0, 2);
        let opts = QfosrOptions {
            order: 4,
            ..QfosrOptions::default()
        };
        let fit = fit_qfosr(&data, &opts).unwrap();
        for j in 1..=2 {
            for c in fit.fit.block(j) {
                assert_abs_diff_eq!(*c, 0.0, epsilon = 1e-6);
            }
        }
        let b0 = fit.coefficient(0).unwrap();
        for p in equispaced(50, (0.0, 1.0)) {
            assert_abs_diff_eq!(b0.eval(p).unwrap(), p * p, epsilon = 1e-6);
        }
    }

    #[test]
    fn predictions_are_monotone_inside_the_box() {
        let data = dataset(
            60,
            |z, p| p + z[0] * 0.1 * (3.0 * p).sin() - z[1] * 0.3 * p * p,
            2,
            0.2,
            3,
        );
        let opts = QfosrOptions {
            order: 5,
            ..QfosrOptions::default()
        };
        let fit = fit_qfosr(&data, &opts).unwrap();
        let grid = equispaced(500, (0.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            assert!(min_slope(&fit, &x, &grid).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn block_shape_is_stacked() {
        let data = dataset(40, |z, p| p + z[0] * 0.1 * (6.0 * p).sin(), 1, 0.1, 4);
        let opts = QfosrOptions {
            order: 4,
            block_shape: Some(BlockShape {
                predictor: 1,
                shape: ShapeSpec::NonIncreasing,
            }),
            ..QfosrOptions::default()
        };
        let fit = fit_qfosr(&data, &opts).unwrap();
        assert!(fit.certificate.feasible);
        let b1 = fit.fit.block(1);
        assert!(b1.windows(2).all(|w| w[1] <= w[0] + 1e-8));
    }

    #[test]
    fn non_monotone_responses_are_rejected() {
        let data = dataset(10, |_, p| (6.0 * p).sin(), 1, 0.0, 5);
        match fit_qfosr(&data, &QfosrOptions::default()) {
            Err(Error::Data(msg)) => assert!(msg.contains("q0")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
