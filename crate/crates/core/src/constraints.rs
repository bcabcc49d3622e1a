//! Linear constraint systems `A beta >= b` encoding shape restrictions on
//! Bernstein coefficients.
//!
//! Because Bernstein polynomials are non-negative and sum to one, sign
//! conditions on coefficient differences carry over to the whole domain: a
//! coefficient vector that satisfies the system yields a function with the
//! shape everywhere, not only at observation points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, TensorBasisSpec};
use crate::error::{Error, Result};

/// Default absolute feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Largest number of scalar predictors accepted by the quantile-monotone builder.
pub const MAX_QUANTILE_PREDICTORS: usize = 20;

/// Catalog of shape restrictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    /// `beta(a) = a0` and/or `beta(b) = a1`. Either endpoint may be left free.
    FixedBoundaries {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a1: Option<f64>,
    },
    NonNegative,
    NonPositive,
    NonDecreasing,
    NonIncreasing,
    Convex,
    Concave,
    /// Non-decreasing in `s` and/or `t`.
    BivariateMonotone {
        in_s: bool,
        in_t: bool,
    },
    /// Convex in `s` and/or `t`.
    PartialConvex {
        in_s: bool,
        in_t: bool,
    },
    /// Monotone predicted quantile functions for `j` predictors scaled to `[0, 1]`.
    QuantileMonotone {
        j: usize,
    },
    Combination {
        shapes: Vec<ShapeSpec>,
    },
}

impl ShapeSpec {
    pub fn is_bivariate(&self) -> bool {
        match self {
            ShapeSpec::BivariateMonotone { .. } | ShapeSpec::PartialConvex { .. } => true,
            ShapeSpec::Combination { shapes } => shapes.first().is_some_and(|s| s.is_bivariate()),
            _ => false,
        }
    }

    /// Smallest basis order for which the shape can be assembled.
    pub fn min_order(&self) -> usize {
        match self {
            ShapeSpec::NonNegative | ShapeSpec::NonPositive => 0,
            ShapeSpec::FixedBoundaries { a0, a1 } => usize::from(a0.is_some() && a1.is_some()),
            ShapeSpec::NonDecreasing
            | ShapeSpec::NonIncreasing
            | ShapeSpec::BivariateMonotone { .. }
            | ShapeSpec::QuantileMonotone { .. } => 1,
            ShapeSpec::Convex | ShapeSpec::Concave | ShapeSpec::PartialConvex { .. } => 2,
            ShapeSpec::Combination { shapes } => {
                shapes.iter().map(ShapeSpec::min_order).max().unwrap_or(0)
            }
        }
    }

    /// Number of coefficients the constraint system acts on.
    pub fn coef_len(&self, target: Target) -> usize {
        match (self, target.bivariate) {
            (ShapeSpec::QuantileMonotone { j }, _) => (target.order + 1) * (j + 1),
            (ShapeSpec::Combination { shapes }, _) if !shapes.is_empty() => {
                shapes[0].coef_len(target)
            }
            (_, true) => (target.order + 1) * (target.order + 1),
            (_, false) => target.order + 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ShapeSpec::QuantileMonotone { j } if *j == 0 => Err(Error::Config(
                "quantile-monotone constraints need at least one predictor".into(),
            )),
            ShapeSpec::QuantileMonotone { j } if *j > MAX_QUANTILE_PREDICTORS => {
                Err(Error::Config(format!(
                    "quantile-monotone constraints with {j} predictors would need 2^{j} rows per \
                     difference; prune the predictor set to at most {MAX_QUANTILE_PREDICTORS}"
                )))
            }
            ShapeSpec::BivariateMonotone { in_s, in_t }
            | ShapeSpec::PartialConvex { in_s, in_t }
                if !in_s && !in_t =>
            {
                Err(Error::Config(
                    "bivariate shape must act on at least one of s and t".into(),
                ))
            }
            ShapeSpec::Combination { shapes } => {
                if shapes.is_empty() {
                    return Err(Error::Config("combination of shapes is empty".into()));
                }
                let biv = shapes[0].is_bivariate();
                for s in shapes {
                    if matches!(s, ShapeSpec::QuantileMonotone { .. }) {
                        return Err(Error::Config(
                            "quantile-monotone constraints cannot be combined; stack a \
                             single-block shape through the quantile model instead"
                                .into(),
                        ));
                    }
                    if s.is_bivariate() != biv {
                        return Err(Error::Config(
                            "combination mixes univariate and bivariate shapes".into(),
                        ));
                    }
                    s.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// The coefficient layout a shape is assembled against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub order: usize,
    pub bivariate: bool,
}

impl Target {
    pub fn univariate(order: usize) -> Self {
        Self {
            order,
            bivariate: false,
        }
    }

    pub fn bivariate(order: usize) -> Self {
        Self {
            order,
            bivariate: true,
        }
    }
}

impl From<&BasisSpec> for Target {
    fn from(spec: &BasisSpec) -> Self {
        Target::univariate(spec.order)
    }
}

impl From<&TensorBasisSpec> for Target {
    fn from(spec: &TensorBasisSpec) -> Self {
        Target::bivariate(spec.order)
    }
}

/// Rows `A_i beta >= b_i`, or `A_i beta = b_i` where `equality[i]` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub equality: Vec<bool>,
}

/// Outcome of checking a coefficient vector against a constraint system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub feasible: bool,
    pub worst_violation: f64,
    /// Zero-based indices of rows violated by more than the tolerance.
    pub violated_rows: Vec<usize>,
}

impl ConstraintSystem {
    /// A system with no rows over `coef_len` coefficients.
    pub fn empty(coef_len: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, coef_len),
            b: DVector::zeros(0),
            equality: Vec::new(),
        }
    }

    fn from_rows(coef_len: usize, rows: Vec<(Vec<f64>, f64, bool)>) -> Self {
        let r = rows.len();
        let mut a = DMatrix::zeros(r, coef_len);
        let mut b = DVector::zeros(r);
        let mut equality = Vec::with_capacity(r);
        for (i, (row, bi, eq)) in rows.into_iter().enumerate() {
            for (k, v) in row.into_iter().enumerate() {
                a[(i, k)] = v;
            }
            b[i] = bi;
            equality.push(eq);
        }
        Self { a, b, equality }
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn coef_len(&self) -> usize {
        self.a.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    /// Row-wise negation (`A -> -A`, `b -> -b`).
    pub fn negated(&self) -> Self {
        Self {
            a: -&self.a,
            b: -&self.b,
            equality: self.equality.clone(),
        }
    }

    /// Lifts the system onto a longer parameter vector whose block starts at `offset`.
    pub fn embed(&self, offset: usize, total: usize) -> Result<Self> {
        if offset + self.coef_len() > total {
            return Err(Error::Shape(format!(
                "cannot embed {} coefficients at offset {offset} in a vector of length {total}",
                self.coef_len()
            )));
        }
        let mut a = DMatrix::zeros(self.n_rows(), total);
        a.view_mut((0, offset), (self.n_rows(), self.coef_len()))
            .copy_from(&self.a);
        Ok(Self {
            a,
            b: self.b.clone(),
            equality: self.equality.clone(),
        })
    }

    /// Row-stacks two systems over the same coefficients, dropping exact duplicate rows.
    pub fn stack(&self, other: &ConstraintSystem) -> Result<Self> {
        if self.coef_len() != other.coef_len() {
            return Err(Error::Shape(format!(
                "cannot stack systems over {} and {} coefficients",
                self.coef_len(),
                other.coef_len()
            )));
        }
        let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
        for sys in [self, other] {
            for i in 0..sys.n_rows() {
                let row: Vec<f64> = sys.a.row(i).iter().copied().collect();
                let cand = (row, sys.b[i], sys.equality[i]);
                if !rows.contains(&cand) {
                    rows.push(cand);
                }
            }
        }
        Ok(Self::from_rows(self.coef_len(), rows))
    }

    /// Adds the sieve bound `sum_k |beta_k| <= bound` as `2^P` sign rows.
    pub fn with_sieve_bound(&self, bound: f64) -> Result<Self> {
        let p = self.coef_len();
        if p > 20 {
            return Err(Error::Config(format!(
                "sieve bound over {p} coefficients would need 2^{p} rows"
            )));
        }
        let rows = (0u32..1 << p)
            .map(|mask| {
                let row = (0..p)
                    .map(|k| if mask >> k & 1 == 1 { 1.0 } else { -1.0 })
                    .collect();
                (row, -bound, false)
            })
            .collect();
        self.stack(&Self::from_rows(p, rows))
    }

    /// `A beta - b`.
    pub fn slacks(&self, beta: &[f64]) -> Result<DVector<f64>> {
        if beta.len() != self.coef_len() {
            return Err(Error::Shape(format!(
                "coefficient vector has length {} but the system acts on {}",
                beta.len(),
                self.coef_len()
            )));
        }
        let x = DVector::from_column_slice(beta);
        Ok(&self.a * x - &self.b)
    }

    /// Per-row violation: `max(0, b_i - A_i beta)` for inequalities, `|A_i beta - b_i|` for equalities.
    pub fn violations(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let s = self.slacks(beta)?;
        Ok(s.iter()
            .zip(&self.equality)
            .map(|(&si, &eq)| if eq { si.abs() } else { (-si).max(0.0) })
            .collect())
    }

    pub fn check(&self, beta: &[f64], tol: f64) -> Result<ShapeReport> {
        let v = self.violations(beta)?;
        let worst_violation = v.iter().copied().fold(0.0, f64::max);
        let violated_rows = v
            .iter()
            .enumerate()
            .filter(|(_, &vi)| vi > tol)
            .map(|(i, _)| i)
            .collect();
        Ok(ShapeReport {
            feasible: worst_violation <= tol,
            worst_violation,
            violated_rows,
        })
    }
}

fn first_difference(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let mut row = vec![0.0; n + 1];
            row[k] = -1.0;
            row[k + 1] = 1.0;
            row
        })
        .collect()
}

fn second_difference(n: usize) -> Vec<Vec<f64>> {
    (0..n.saturating_sub(1))
        .map(|k| {
            let mut row = vec![0.0; n + 1];
            row[k] = 1.0;
            row[k + 1] = -2.0;
            row[k + 2] = 1.0;
            row
        })
        .collect()
}

/// Applies a univariate difference stencil along `s` (k1) or `t` (k2) of a tensor layout.
fn tensor_rows(n: usize, stencil: &[Vec<f64>], along_s: bool) -> Vec<Vec<f64>> {
    let p = n + 1;
    let mut rows = Vec::new();
    if along_s {
        // Row order follows the flattened index of the leading coefficient.
        for row in stencil {
            for k2 in 0..p {
                let mut full = vec![0.0; p * p];
                for (k1, &v) in row.iter().enumerate() {
                    full[k1 * p + k2] = v;
                }
                rows.push(full);
            }
        }
        // Sort so that row r has its leading entry at flat column r.
        rows.sort_by_key(|r| r.iter().position(|&v| v != 0.0));
    } else {
        for k1 in 0..p {
            for row in stencil {
                let mut full = vec![0.0; p * p];
                for (k2, &v) in row.iter().enumerate() {
                    full[k1 * p + k2] = v;
                }
                rows.push(full);
            }
        }
    }
    rows
}

fn inequalities(rows: Vec<Vec<f64>>) -> Vec<(Vec<f64>, f64, bool)> {
    rows.into_iter().map(|r| (r, 0.0, false)).collect()
}

fn negate_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(|v| -v).collect())
        .collect()
}

/// Assembles the constraint system for a shape on a univariate or tensor basis.
pub fn build_constraints(shape: &ShapeSpec, target: impl Into<Target>) -> Result<ConstraintSystem> {
    let target = target.into();
    shape.validate()?;
    if shape.is_bivariate() != target.bivariate {
        return Err(Error::Config(format!(
            "shape {} does not apply to a {} coefficient",
            shape_name(shape),
            if target.bivariate {
                "bivariate"
            } else {
                "univariate"
            }
        )));
    }
    let need = shape.min_order();
    if target.order < need {
        return Err(Error::Config(format!(
            "shape {} needs basis order at least {need}, got {}",
            shape_name(shape),
            target.order
        )));
    }
    let n = target.order;
    let p = shape.coef_len(target);
    let rows = match shape {
        ShapeSpec::FixedBoundaries { a0, a1 } => {
            let mut rows = Vec::new();
            if let Some(a0) = a0 {
                let mut r = vec![0.0; p];
                r[0] = 1.0;
                rows.push((r, *a0, true));
            }
            if let Some(a1) = a1 {
                let mut r = vec![0.0; p];
                r[n] = 1.0;
                rows.push((r, *a1, true));
            }
            rows
        }
        ShapeSpec::NonNegative | ShapeSpec::NonPositive => {
            let sign = if matches!(shape, ShapeSpec::NonNegative) {
                1.0
            } else {
                -1.0
            };
            inequalities(
                (0..p)
                    .map(|k| {
                        let mut r = vec![0.0; p];
                        r[k] = sign;
                        r
                    })
                    .collect(),
            )
        }
        ShapeSpec::NonDecreasing => inequalities(first_difference(n)),
        ShapeSpec::NonIncreasing => inequalities(negate_rows(first_difference(n))),
        ShapeSpec::Convex => inequalities(second_difference(n)),
        ShapeSpec::Concave => inequalities(negate_rows(second_difference(n))),
        ShapeSpec::BivariateMonotone { in_s, in_t } => {
            let d = first_difference(n);
            let mut rows = Vec::new();
            if *in_s {
                rows.extend(tensor_rows(n, &d, true));
            }
            if *in_t {
                rows.extend(tensor_rows(n, &d, false));
            }
            inequalities(rows)
        }
        ShapeSpec::PartialConvex { in_s, in_t } => {
            let d = second_difference(n);
            let mut rows = Vec::new();
            if *in_s {
                rows.extend(tensor_rows(n, &d, true));
            }
            if *in_t {
                rows.extend(tensor_rows(n, &d, false));
            }
            inequalities(rows)
        }
        ShapeSpec::QuantileMonotone { j } => {
            return build_quantile_monotone(*j, &BasisSpec::unit(n));
        }
        ShapeSpec::Combination { shapes } => {
            let mut sys = ConstraintSystem::empty(p);
            for s in shapes {
                sys = sys.stack(&build_constraints(s, target)?)?;
            }
            return Ok(sys);
        }
    };
    Ok(ConstraintSystem::from_rows(p, rows))
}

/// Vertex conditions making `beta_0(p) + sum_j x_j beta_j(p)` non-decreasing in `p`
/// for every `x` in `[0, 1]^J`.
///
/// Coefficients are stacked block-wise `[beta_0 | beta_1 | ... | beta_J]`. For each
/// difference index `k` and each vertex subset `S`, the row reads
/// `gamma_{0k} + sum_{j in S} gamma_{jk} >= 0` with `gamma_{jk} = N (beta_{j,k} - beta_{j,k-1})`.
/// Rows are ordered by `k`, then by the subset bitmask.
pub fn build_quantile_monotone(j: usize, spec: &BasisSpec) -> Result<ConstraintSystem> {
    ShapeSpec::QuantileMonotone { j }.validate()?;
    let n = spec.order;
    if n < 1 {
        return Err(Error::Config(
            "quantile-monotone constraints need basis order at least 1".into(),
        ));
    }
    let block = n + 1;
    let p = block * (j + 1);
    let scale = n as f64;
    let mut rows = Vec::with_capacity(n << j);
    for k in 1..=n {
        for mask in 0usize..1 << j {
            let mut r = vec![0.0; p];
            for blk in
                std::iter::once(0).chain((0..j).filter(|b| mask >> b & 1 == 1).map(|b| b + 1))
            {
                r[blk * block + k - 1] = -scale;
                r[blk * block + k] = scale;
            }
            rows.push((r, 0.0, false));
        }
    }
    Ok(ConstraintSystem::from_rows(p, rows))
}

/// Checks a coefficient vector against a shape, inferring the basis order from its length.
pub fn check_shape(beta: &[f64], shape: &ShapeSpec, tol: f64) -> Result<ShapeReport> {
    let len = beta.len();
    let target = match shape {
        ShapeSpec::QuantileMonotone { j } => {
            if !len.is_multiple_of(j + 1) || len / (j + 1) < 2 {
                return Err(Error::Shape(format!(
                    "length {len} is not a stack of {} Bernstein blocks",
                    j + 1
                )));
            }
            Target::univariate(len / (j + 1) - 1)
        }
        s if s.is_bivariate() => {
            let side = (len as f64).sqrt().round() as usize;
            if side * side != len || side < 2 {
                return Err(Error::Shape(format!(
                    "length {len} is not a square tensor coefficient layout"
                )));
            }
            Target::bivariate(side - 1)
        }
        _ => {
            if len == 0 {
                return Err(Error::Shape("empty coefficient vector".into()));
            }
            Target::univariate(len - 1)
        }
    };
    build_constraints(shape, target)?.check(beta, tol)
}

pub(crate) fn shape_name(shape: &ShapeSpec) -> &'static str {
    match shape {
        ShapeSpec::FixedBoundaries { .. } => "fixed_boundaries",
        ShapeSpec::NonNegative => "non_negative",
        ShapeSpec::NonPositive => "non_positive",
        ShapeSpec::NonDecreasing => "non_decreasing",
        ShapeSpec::NonIncreasing => "non_increasing",
        ShapeSpec::Convex => "convex",
        ShapeSpec::Concave => "concave",
        ShapeSpec::BivariateMonotone { .. } => "bivariate_monotone",
        ShapeSpec::PartialConvex { .. } => "partial_convex",
        ShapeSpec::QuantileMonotone { .. } => "quantile_monotone",
        ShapeSpec::Combination { .. } => "combination",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(sys: &ConstraintSystem) -> Vec<Vec<f64>> {
        sys.a
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    #[test]
    fn monotone_quadratic() {
        let sys = build_constraints(&ShapeSpec::NonDecreasing, Target::univariate(2)).unwrap();
        assert_eq!(
            dense(&sys),
            vec![vec![-1.0, 1.0, 0.0], vec![0.0, -1.0, 1.0]]
        );
        assert!(sys.b.iter().all(|&v| v == 0.0));
        assert!(sys.equality.iter().all(|&e| !e));
    }

    #[test]
    fn convex_cubic() {
        let sys = build_constraints(&ShapeSpec::Convex, Target::univariate(3)).unwrap();
        assert_eq!(
            dense(&sys),
            vec![vec![1.0, -2.0, 1.0, 0.0], vec![0.0, 1.0, -2.0, 1.0]]
        );
    }

    #[test]
    fn nonnegative_order_zero() {
        let sys = build_constraints(&ShapeSpec::NonNegative, Target::univariate(0)).unwrap();
        assert_eq!(dense(&sys), vec![vec![1.0]]);
        assert_eq!(sys.b.as_slice(), &[0.0]);
    }

    #[test]
    fn order_too_small_is_rejected() {
        let err = build_constraints(&ShapeSpec::Convex, Target::univariate(1)).unwrap_err();
        assert!(err.to_string().contains("at least 2"));
        assert!(build_constraints(&ShapeSpec::NonDecreasing, Target::univariate(0)).is_err());
    }

    #[test]
    fn fixed_boundaries_select_endpoints() {
        let sys = build_constraints(
            &ShapeSpec::FixedBoundaries {
                a0: Some(1.0),
                a1: Some(-2.0),
            },
            Target::univariate(3),
        )
        .unwrap();
        assert_eq!(
            dense(&sys),
            vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]
        );
        assert_eq!(sys.b.as_slice(), &[1.0, -2.0]);
        assert_eq!(sys.equality, vec![true, true]);

        let one = build_constraints(
            &ShapeSpec::FixedBoundaries {
                a0: None,
                a1: Some(0.5),
            },
            Target::univariate(3),
        )
        .unwrap();
        assert_eq!(one.n_rows(), 1);
    }

    #[test]
    fn negation_duality() {
        for n in 1..8 {
            let up = build_constraints(&ShapeSpec::NonDecreasing, Target::univariate(n)).unwrap();
            let down = build_constraints(&ShapeSpec::NonIncreasing, Target::univariate(n)).unwrap();
            assert_eq!(down.a, -&up.a);
        }
    }

    #[test]
    fn combination_deduplicates() {
        let shape = ShapeSpec::Combination {
            shapes: vec![
                ShapeSpec::NonDecreasing,
                ShapeSpec::Concave,
                ShapeSpec::NonDecreasing,
            ],
        };
        let sys = build_constraints(&shape, Target::univariate(4)).unwrap();
        assert_eq!(sys.n_rows(), 4 + 3);
    }

    #[test]
    fn combination_rejects_mixed_targets() {
        let shape = ShapeSpec::Combination {
            shapes: vec![
                ShapeSpec::NonDecreasing,
                ShapeSpec::BivariateMonotone {
                    in_s: true,
                    in_t: true,
                },
            ],
        };
        assert!(build_constraints(&shape, Target::univariate(3)).is_err());
        assert!(build_constraints(
            &ShapeSpec::Combination { shapes: vec![] },
            Target::univariate(3)
        )
        .is_err());
        assert!(build_constraints(&ShapeSpec::NonDecreasing, Target::bivariate(3)).is_err());
    }

    #[test]
    fn bivariate_monotone_layout() {
        let n = 2;
        let sys = build_constraints(
            &ShapeSpec::BivariateMonotone {
                in_s: true,
                in_t: false,
            },
            Target::bivariate(n),
        )
        .unwrap();
        assert_eq!(sys.n_rows(), n * (n + 1));
        // Row r: -1 at column r, +1 at column r + N + 1.
        for r in 0..sys.n_rows() {
            for c in 0..9 {
                let expected = if c == r {
                    -1.0
                } else if c == r + n + 1 {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(sys.a[(r, c)], expected);
            }
        }
        let t_only = build_constraints(
            &ShapeSpec::BivariateMonotone {
                in_s: false,
                in_t: true,
            },
            Target::bivariate(n),
        )
        .unwrap();
        // Block diagonal copies of the first-difference matrix.
        let b = first_difference(n);
        for k1 in 0..=n {
            for (i, row) in b.iter().enumerate() {
                for (k2, v) in row.iter().enumerate() {
                    assert_eq!(t_only.a[(k1 * n + i, k1 * (n + 1) + k2)], *v);
                }
            }
        }
    }

    #[test]
    fn quantile_monotone_rows() {
        let sys = build_quantile_monotone(1, &BasisSpec::unit(2)).unwrap();
        assert_eq!(sys.n_rows(), 2 * 2);
        // k = 1, S = {} : gamma_01 >= 0
        assert_eq!(dense(&sys)[0], vec![-2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        // k = 1, S = {1} : gamma_01 + gamma_11 >= 0
        assert_eq!(dense(&sys)[1], vec![-2.0, 2.0, 0.0, -2.0, 2.0, 0.0]);
        let sys2 = build_quantile_monotone(2, &BasisSpec::unit(3)).unwrap();
        assert_eq!(sys2.n_rows(), 3 * 4);
        assert_eq!(sys2.coef_len(), 4 * 3);

        let zero = build_quantile_monotone(1, &BasisSpec::unit(1)).unwrap();
        let report = zero.check(&[0.0; 4], 0.0).unwrap();
        assert!(report.feasible);

        assert!(build_quantile_monotone(0, &BasisSpec::unit(3)).is_err());
        assert!(build_quantile_monotone(21, &BasisSpec::unit(3)).is_err());
    }

    #[test]
    fn check_shape_reports() {
        let ok = check_shape(&[0.0, 1.0, 2.0], &ShapeSpec::NonDecreasing, 0.0).unwrap();
        assert!(ok.feasible);
        assert_eq!(ok.worst_violation, 0.0);
        let bad = check_shape(&[0.0, 2.0, 1.0], &ShapeSpec::NonDecreasing, 1e-8).unwrap();
        assert!(!bad.feasible);
        assert_eq!(bad.worst_violation, 1.0);
        assert_eq!(bad.violated_rows, vec![1]);

        let sys = build_constraints(&ShapeSpec::NonDecreasing, Target::univariate(2)).unwrap();
        assert!(matches!(sys.check(&[1.0, 2.0], 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn embed_and_sieve_bound() {
        let sys = build_constraints(&ShapeSpec::NonNegative, Target::univariate(1)).unwrap();
        let big = sys.embed(1, 4).unwrap();
        assert_eq!(
            dense(&big),
            vec![vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]
        );
        assert!(sys.embed(3, 4).is_err());

        let bounded = sys.with_sieve_bound(2.0).unwrap();
        assert_eq!(bounded.n_rows(), 2 + 4);
        assert!(bounded.check(&[1.0, 1.0], 1e-12).unwrap().feasible);
        assert!(!bounded.check(&[1.5, 1.0], 1e-12).unwrap().feasible);
    }

    #[test]
    fn json_encoding() {
        let shape = ShapeSpec::Combination {
            shapes: vec![ShapeSpec::NonDecreasing, ShapeSpec::Concave],
        };
        let text = serde_json::to_string(&shape).unwrap();
        assert_eq!(
            text,
            r#"{"kind":"combination","shapes":[{"kind":"non_decreasing"},{"kind":"concave"}]}"#
        );
        let back: ShapeSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, shape);
        let fixed: ShapeSpec =
            serde_json::from_str(r#"{"kind":"fixed_boundaries","a0":1.0}"#).unwrap();
        assert_eq!(
            fixed,
            ShapeSpec::FixedBoundaries {
                a0: Some(1.0),
                a1: None
            }
        );
    }
}
