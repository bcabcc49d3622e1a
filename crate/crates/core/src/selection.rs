//! Choice of the Bernstein order by V-fold cross-validation over subjects.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::ShapeSpec;
use crate::data::FunctionalDataset;
use crate::error::{Error, Result};
use crate::fpca::DEFAULT_PVE;
use crate::functional::{reconstruct_sparse, FunctionalDesign};
use crate::model::{functional_spec, sofr_basis, ModelKind};
use crate::rng::{role, stream};
use crate::sofr::{predict_sofr, SofrDesign};

pub const DEFAULT_FOLDS: usize = 5;

/// Scores within this fraction of the response energy count as ties.
const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub candidate_orders: Vec<usize>,
    /// Held-out squared error per candidate; `None` when the candidate was skipped.
    pub scores: Vec<Option<f64>>,
    pub chosen: usize,
    pub folds: usize,
    /// Fold of each subject.
    pub fold_assignment: Vec<usize>,
    pub seed: u64,
}

/// Default candidate grid for a model family.
pub fn default_candidates(kind: ModelKind) -> Vec<usize> {
    match kind {
        ModelKind::Fofr => (2..=6).collect(),
        ModelKind::Qfosr => (4..=9).collect(),
        _ => (2..=10).collect(),
    }
}

/// Seeded partition of `n` subjects into `v` folds whose sizes differ by at most one.
pub fn fold_assignment(n: usize, v: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, &[role::FOLDS]));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % v;
    }
    fold
}

/// Held-out squared error of one fold for one order.
pub fn fold_error(
    data: &FunctionalDataset,
    kind: ModelKind,
    shape: Option<&ShapeSpec>,
    order: usize,
    train: &[usize],
    test: &[usize],
) -> Result<f64> {
    let train_data = data.subset(train)?;
    let test_data = data.subset(test)?;
    match kind.functional() {
        None => {
            let spec = sofr_basis(data, order)?;
            let fit = SofrDesign::new(&train_data, &spec)?.fit(shape)?;
            let pred = predict_sofr(&fit, &test_data)?;
            let y = test_data.scalar_responses()?;
            Ok(y.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum())
        }
        Some(fk) => {
            let spec = functional_spec(data, fk, order)?;
            let design = FunctionalDesign::new(&train_data, &spec)?;
            let fit = design.fit(shape, None)?;
            let held = FunctionalDesign::new(&test_data, &spec)?;
            let pred = &held.x * DVector::from_column_slice(&fit.coefs);
            Ok((&held.y - pred).norm_squared())
        }
    }
}

/// Picks the order minimising the cross-validated squared error; ties go to the smaller order.
pub fn cv_select_order(
    data: &FunctionalDataset,
    kind: ModelKind,
    shape: Option<&ShapeSpec>,
    candidates: &[usize],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if folds < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Config("no candidate orders given".into()));
    }
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let n = data.n();
    let smallest_train = n - n.div_ceil(folds);
    let biggest = *cands.last().expect("non-empty");
    if smallest_train < biggest + 2 {
        return Err(Error::Config(format!(
            "{folds}-fold cross-validation leaves {smallest_train} training subjects, \
             too few for order {biggest}"
        )));
    }
    let data = match kind.functional() {
        Some(_)
            if data
                .x_grid
                .as_ref()
                .is_some_and(|g| g.per_subject().is_some()) =>
        {
            reconstruct_sparse(data, DEFAULT_PVE, false)?
        }
        _ => data.clone(),
    };
    let assignment = fold_assignment(data.n(), folds, seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..data.n()).partition(|&i| assignment[i] == f);
            (train, test)
        })
        .collect();

    let scores: Vec<Option<f64>> = cands
        .par_iter()
        .map(|&order| {
            if let Some(s) = shape {
                if order < s.min_order() {
                    log::info!("order {order} is too small for the shape; skipped");
                    return Ok(None);
                }
            }
            let mut total = 0.0;
            for (train, test) in &splits {
                total += fold_error(&data, kind, shape, order, train, test)?;
            }
            Ok(Some(total))
        })
        .collect::<Result<_>>()?;

    let energy = match kind.functional() {
        None => data.scalar_responses()?.iter().map(|v| v * v).sum::<f64>(),
        Some(_) => (0..data.n())
            .map(|i| {
                data.y_curve(i)
                    .map(|c| c.values.iter().map(|v| v * v).sum::<f64>())
            })
            .sum::<Result<f64>>()?,
    };
    let best = scores
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::Config(
            "no candidate order is usable for this shape".into(),
        ));
    }
    let tol = TIE_TOL * energy;
    let chosen = cands
        .iter()
        .zip(&scores)
        .find(|(_, s)| s.is_some_and(|v| v <= best + tol))
        .map(|(&o, _)| o)
        .expect("minimum is attained");
    Ok(CvResult {
        candidate_orders: cands,
        scores,
        chosen,
        folds,
        fold_assignment: assignment,
        seed,
    })
}
