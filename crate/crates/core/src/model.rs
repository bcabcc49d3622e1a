//! Model families and the domains their bases are built on.

use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::data::FunctionalDataset;
use crate::error::{Error, Result};
use crate::functional::{FunctionalKind, FunctionalSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sofr,
    Fosr,
    Flcm,
    Fofr,
    Qfosr,
}

impl ModelKind {
    pub fn functional(self) -> Option<FunctionalKind> {
        match self {
            ModelKind::Sofr => None,
            ModelKind::Fosr | ModelKind::Qfosr => Some(FunctionalKind::Fosr),
            ModelKind::Flcm => Some(FunctionalKind::Flcm),
            ModelKind::Fofr => Some(FunctionalKind::Fofr),
        }
    }

    pub fn is_bivariate(self) -> bool {
        self == ModelKind::Fofr
    }
}

fn range_of(points: &[f64]) -> Result<(f64, f64)> {
    match (points.first(), points.last()) {
        (Some(&a), Some(&b)) if b > a => Ok((a, b)),
        _ => Err(Error::Data(
            "grid must span an interval of positive length".into(),
        )),
    }
}

/// Scalar-on-function basis over the covariate grid's range.
pub fn sofr_basis(data: &FunctionalDataset, order: usize) -> Result<BasisSpec> {
    BasisSpec::new(order, range_of(data.x_grid()?.points())?)
}

/// Functional-response `BasisSpec` set with domains pinned to the dataset's grids, so that
/// subsets of the data (cross-validation folds) share one basis.
pub fn functional_spec(
    data: &FunctionalDataset,
    kind: FunctionalKind,
    order: usize,
) -> Result<FunctionalSpec> {
    let t_domain = Some(range_of(data.y_grid()?.points())?);
    let s_domain = match kind {
        FunctionalKind::Fofr => Some(range_of(data.x_grid()?.points())?),
        _ => None,
    };
    Ok(FunctionalSpec {
        kind,
        order,
        t_domain,
        s_domain,
    })
}
