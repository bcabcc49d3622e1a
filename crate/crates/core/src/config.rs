//! Run configuration read from JSON by the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constraints::ShapeSpec;
use crate::error::{Error, Result};
use crate::fpca::{CovSmoother, DEFAULT_PVE};
use crate::functional::GlsOptions;
use crate::inference::{CiOptions, TestOptions, DEFAULT_CI_DRAWS, DEFAULT_TEST_DRAWS, MIN_DRAWS};
use crate::model::ModelKind;
use crate::qfosr::BlockShape;
use crate::selection::DEFAULT_FOLDS;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub results: Option<PathBuf>,
    /// Plot-ready CSV of the band or coefficient curves.
    #[serde(default)]
    pub bands: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    /// Fixed Bernstein order; cross-validated over `candidates` when absent.
    pub order: Option<usize>,
    pub candidates: Option<Vec<usize>>,
    pub shape: Option<ShapeSpec>,
    /// Shape under the null hypothesis of a shape test; `shape` when absent.
    pub null_shape: Option<ShapeSpec>,
    /// Extra shape on one predictor's coefficient in quantile models.
    pub block_shape: Option<BlockShape>,
    pub pve: f64,
    /// Monte Carlo or bootstrap draws; the command's default when absent.
    pub draws: Option<usize>,
    pub level: f64,
    pub folds: usize,
    pub seed: Option<u64>,
    pub whiten: bool,
    /// Whiten the bootstrap shape test fits.
    pub whiten_test: bool,
    pub smoother: CovSmoother,
    pub denoise: bool,
    pub outputs: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            order: None,
            candidates: None,
            shape: None,
            null_shape: None,
            block_shape: None,
            pve: DEFAULT_PVE,
            draws: None,
            level: 0.95,
            folds: DEFAULT_FOLDS,
            seed: None,
            whiten: true,
            whiten_test: false,
            smoother: CovSmoother::default(),
            denoise: false,
            outputs: OutputPaths::default(),
        }
    }
}

fn mentions_quantile(shape: &ShapeSpec) -> bool {
    match shape {
        ShapeSpec::QuantileMonotone { .. } => true,
        ShapeSpec::Combination { shapes } => shapes.iter().any(mentions_quantile),
        _ => false,
    }
}

fn mentions_bivariate(shape: &ShapeSpec) -> bool {
    match shape {
        ShapeSpec::BivariateMonotone { .. } | ShapeSpec::PartialConvex { .. } => true,
        ShapeSpec::Combination { shapes } => shapes.iter().any(mentions_bivariate),
        _ => false,
    }
}

fn mentions_univariate(shape: &ShapeSpec) -> bool {
    match shape {
        ShapeSpec::Combination { shapes } => shapes.iter().any(mentions_univariate),
        s => !mentions_bivariate(s) && !mentions_quantile(s),
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!(
                "{}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    fn check_shape(&self, model: ModelKind, shape: &ShapeSpec, field: &str) -> Result<()> {
        if mentions_quantile(shape) {
            return Err(Error::Config(format!(
                "{field}: quantile monotonicity is implied by the qfosr model and cannot be set by hand"
            )));
        }
        if mentions_bivariate(shape) && model != ModelKind::Fofr {
            return Err(Error::Config(format!(
                "{field}: bivariate shapes apply only to fofr models"
            )));
        }
        if model == ModelKind::Fofr && mentions_univariate(shape) {
            return Err(Error::Config(format!(
                "{field}: fofr coefficients are surfaces and need bivariate shapes"
            )));
        }
        if model == ModelKind::Qfosr {
            return Err(Error::Config(format!(
                "{field}: qfosr takes extra shapes through block_shape"
            )));
        }
        Ok(())
    }

    /// Checks ranges and that the shapes fit the model.
    pub fn validate(&self) -> Result<()> {
        if !(self.pve > 0.0 && self.pve <= 1.0) {
            return Err(Error::Config(format!(
                "pve must lie in (0, 1], got {}",
                self.pve
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if let Some(b) = self.draws {
            if b < MIN_DRAWS {
                return Err(Error::Config(format!(
                    "draws must be at least {MIN_DRAWS}, got {b}"
                )));
            }
        }
        if self.order.is_some() && self.candidates.is_some() {
            return Err(Error::Config(
                "give either order or candidates, not both".into(),
            ));
        }
        if self.candidates.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("candidates is empty".into()));
        }
        if self.order == Some(0) || self.candidates.as_ref().is_some_and(|c| c.contains(&0)) {
            return Err(Error::Config("Bernstein orders start at 1".into()));
        }
        let Some(model) = self.model else {
            if self.shape.is_some() || self.null_shape.is_some() || self.block_shape.is_some() {
                return Err(Error::Config("shapes need a model kind".into()));
            }
            return Ok(());
        };
        if let Some(s) = &self.shape {
            self.check_shape(model, s, "shape")?;
        }
        if let Some(s) = &self.null_shape {
            self.check_shape(model, s, "null_shape")?;
        }
        if let Some(bs) = &self.block_shape {
            if model != ModelKind::Qfosr {
                return Err(Error::Config(
                    "block_shape applies only to qfosr models".into(),
                ));
            }
            if mentions_bivariate(&bs.shape) || mentions_quantile(&bs.shape) {
                return Err(Error::Config(
                    "block_shape must be a univariate shape".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn gls(&self) -> GlsOptions {
        GlsOptions {
            pve: self.pve,
            whiten: self.whiten,
            denoise: self.denoise,
            smoother: self.smoother,
        }
    }

    pub fn ci_options(&self, seed: u64) -> CiOptions {
        CiOptions {
            level: self.level,
            draws: self.draws.unwrap_or(DEFAULT_CI_DRAWS),
            seed,
        }
    }

    pub fn test_options(&self, seed: u64) -> TestOptions {
        TestOptions {
            draws: self.draws.unwrap_or(DEFAULT_TEST_DRAWS),
            seed,
            whiten: self.whiten_test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(model: ModelKind, shape: ShapeSpec) -> RunConfig {
        RunConfig {
            model: Some(model),
            shape: Some(shape),
            ..RunConfig::default()
        }
    }

    #[test]
    fn shape_must_match_model() {
        let biv = ShapeSpec::BivariateMonotone {
            in_s: true,
            in_t: false,
        };
        assert!(with(ModelKind::Fofr, biv.clone()).validate().is_ok());
        assert!(matches!(
            with(ModelKind::Flcm, biv).validate(),
            Err(Error::Config(_))
        ));
        assert!(with(ModelKind::Fofr, ShapeSpec::NonNegative)
            .validate()
            .is_err());
        assert!(with(ModelKind::Sofr, ShapeSpec::QuantileMonotone { j: 1 })
            .validate()
            .is_err());
        let mixed = ShapeSpec::Combination {
            shapes: vec![
                ShapeSpec::NonNegative,
                ShapeSpec::PartialConvex {
                    in_s: true,
                    in_t: true,
                },
            ],
        };
        assert!(with(ModelKind::Sofr, mixed).validate().is_err());
    }

    #[test]
    fn parses_json_with_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"model": "flcm", "order": 5, "shape": {"kind": "non_increasing"}, "draws": 300}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.shape, Some(ShapeSpec::NonIncreasing));
        assert_eq!(cfg.ci_options(4).draws, 300);
        assert!(cfg.whiten);
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle": "flcm"}"#).is_err());
    }

    #[test]
    fn ranges_are_checked() {
        for cfg in [
            RunConfig {
                level: 1.0,
                ..RunConfig::default()
            },
            RunConfig {
                pve: 0.0,
                ..RunConfig::default()
            },
            RunConfig {
                folds: 1,
                ..RunConfig::default()
            },
            RunConfig {
                draws: Some(20),
                ..RunConfig::default()
            },
            RunConfig {
                order: Some(3),
                candidates: Some(vec![2, 3]),
                ..RunConfig::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
