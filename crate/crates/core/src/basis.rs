//! Bernstein polynomial bases and the regression design matrices built on them.
//!
//! Every computation happens on the unit interval. A [`BasisSpec`] carries the
//! user-facing domain `[a, b]` and maps times onto `[0, 1]` on the way in.
//!
//! Tensor-product coefficients are stored k1-major: the coefficient of
//! `b_{k1}(s) b_{k2}(t)` lives at index `k1 * (N + 1) + k2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when mapping a time onto the unit interval.
const UNIT_SLACK: f64 = 1e-12;

/// Order and domain of a univariate Bernstein sieve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub order: usize,
    pub domain: (f64, f64),
}

impl BasisSpec {
    pub fn new(order: usize, domain: (f64, f64)) -> Result<Self> {
        let (a, b) = domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Domain(format!(
                "basis domain must satisfy a < b, got [{a}, {b}]"
            )));
        }
        Ok(Self { order, domain })
    }

    /// Basis of the given order on `[0, 1]`.
    pub fn unit(order: usize) -> Self {
        Self {
            order,
            domain: (0.0, 1.0),
        }
    }

    pub fn n_coefs(&self) -> usize {
        self.order + 1
    }

    pub fn width(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    /// Affine map from the domain onto `[0, 1]`.
    pub fn to_unit(&self, t: f64) -> Result<f64> {
        let u = (t - self.domain.0) / self.width();
        check_unit(u).map_err(|_| {
            Error::Domain(format!(
                "t = {t} lies outside the basis domain [{}, {}]",
                self.domain.0, self.domain.1
            ))
        })
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.domain.0 + u * self.width()
    }

    /// Basis values at a domain time `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        eval_basis(self.to_unit(t)?, self.order)
    }

    /// `m` equispaced points spanning the domain.
    pub fn reporting_grid(&self, m: usize) -> Vec<f64> {
        equispaced(m, self.domain)
    }
}

fn check_unit(u: f64) -> Result<f64> {
    if u.is_nan() || !(-UNIT_SLACK..=1.0 + UNIT_SLACK).contains(&u) {
        return Err(Error::Domain(format!("{u} is outside [0, 1]")));
    }
    Ok(u.clamp(0.0, 1.0))
}

/// `m` equispaced points covering `[a, b]`, endpoints included.
pub fn equispaced(m: usize, domain: (f64, f64)) -> Vec<f64> {
    let (a, b) = domain;
    match m {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..m)
            .map(|j| {
                if j == m - 1 {
                    b
                } else {
                    a + (b - a) * j as f64 / (m - 1) as f64
                }
            })
            .collect(),
    }
}

/// Observation grid shared by a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    /// Per-subject observed index subsets for sparse designs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_subject: Option<Vec<Vec<usize>>>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Data("grid must contain at least one point".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Data("grid points must be finite".into()));
        }
        if let Some(w) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "grid must be strictly increasing (points {} and {})",
                w,
                w + 1
            )));
        }
        Ok(Self {
            points,
            per_subject: None,
        })
    }

    pub fn equispaced(m: usize, domain: (f64, f64)) -> Result<Self> {
        Self::new(equispaced(m, domain))
    }

    pub fn with_subsets(mut self, subsets: Vec<Vec<usize>>) -> Result<Self> {
        for (i, s) in subsets.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Data(format!("subject {i} has no observed points")));
            }
            if s.windows(2).any(|w| w[1] <= w[0]) || s.iter().any(|&j| j >= self.points.len()) {
                return Err(Error::Data(format!(
                    "subject {i} has an invalid observed index set"
                )));
            }
        }
        self.per_subject = Some(subsets);
        Ok(self)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn per_subject(&self) -> Option<&[Vec<usize>]> {
        self.per_subject.as_deref()
    }

    /// Fails unless every point lies in the closed domain.
    pub fn check_within(&self, domain: (f64, f64)) -> Result<()> {
        let tol = UNIT_SLACK * (domain.1 - domain.0).abs().max(1.0);
        match self
            .points
            .iter()
            .find(|&&p| p < domain.0 - tol || p > domain.1 + tol)
        {
            Some(p) => Err(Error::Domain(format!(
                "grid point {p} lies outside [{}, {}]",
                domain.0, domain.1
            ))),
            None => Ok(()),
        }
    }
}

/// Tensor-product Bernstein basis for a bivariate coefficient `beta(s, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorBasisSpec {
    pub order: usize,
    pub domain_s: (f64, f64),
    pub domain_t: (f64, f64),
}

impl TensorBasisSpec {
    /// Orders in `s` and `t` must agree.
    pub fn new(
        order_s: usize,
        order_t: usize,
        domain_s: (f64, f64),
        domain_t: (f64, f64),
    ) -> Result<Self> {
        if order_s != order_t {
            return Err(Error::Config(format!(
                "tensor basis requires equal orders in s and t (got {order_s} and {order_t})"
            )));
        }
        if order_s < 1 {
            return Err(Error::Config(
                "tensor basis order must be at least 1".into(),
            ));
        }
        BasisSpec::new(order_s, domain_s)?;
        BasisSpec::new(order_t, domain_t)?;
        Ok(Self {
            order: order_s,
            domain_s,
            domain_t,
        })
    }

    pub fn s_spec(&self) -> BasisSpec {
        BasisSpec {
            order: self.order,
            domain: self.domain_s,
        }
    }

    pub fn t_spec(&self) -> BasisSpec {
        BasisSpec {
            order: self.order,
            domain: self.domain_t,
        }
    }

    pub fn n_coefs(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }

    /// Flat index of coefficient `(k1, k2)`.
    pub fn index(&self, k1: usize, k2: usize) -> usize {
        k1 * (self.order + 1) + k2
    }
}

/// Values `b_k(u, N)` for `k = 0..=N` at a point of the unit interval.
///
/// Built by the de Casteljau triangle `b_k^{(j)} = (1-u) b_k^{(j-1)} + u b_{k-1}^{(j-1)}`,
/// which only ever adds non-negative terms.
pub fn eval_basis(u: f64, order: usize) -> Result<Vec<f64>> {
    let u = check_unit(u)?;
    let v = 1.0 - u;
    let mut b = vec![0.0; order + 1];
    b[0] = 1.0;
    for j in 1..=order {
        for k in (1..=j).rev() {
            b[k] = v * b[k] + u * b[k - 1];
        }
        b[0] *= v;
    }
    Ok(b)
}

/// Basis matrix with row `j` equal to the basis at `points[j]`.
pub fn eval_basis_matrix(points: &[f64], spec: &BasisSpec) -> Result<DMatrix<f64>> {
    let p = spec.n_coefs();
    let mut out = DMatrix::zeros(points.len(), p);
    for (j, &t) in points.iter().enumerate() {
        let row = spec.eval(t)?;
        for (k, v) in row.into_iter().enumerate() {
            out[(j, k)] = v;
        }
    }
    Ok(out)
}

/// Coefficients of the derivative in the order `N - 1` basis: `N (beta_{k+1} - beta_k)`.
pub fn derivative_coeffs(beta: &[f64]) -> Result<Vec<f64>> {
    if beta.len() < 2 {
        return Err(Error::Shape(format!(
            "derivative needs at least 2 coefficients, got {}",
            beta.len()
        )));
    }
    let n = (beta.len() - 1) as f64;
    Ok(beta.windows(2).map(|w| n * (w[1] - w[0])).collect())
}

/// Evaluates `sum_k beta_k b_k(u, N)` on the unit interval by de Casteljau.
pub fn eval_bernstein(beta: &[f64], u: f64) -> Result<f64> {
    if beta.is_empty() {
        return Err(Error::Shape("empty coefficient vector".into()));
    }
    let u = check_unit(u)?;
    let v = 1.0 - u;
    let mut work = beta.to_vec();
    for level in (1..work.len()).rev() {
        for k in 0..level {
            work[k] = v * work[k] + u * work[k + 1];
        }
    }
    Ok(work[0])
}

/// A univariate coefficient function in Bernstein form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinCurve {
    pub spec: BasisSpec,
    pub coefs: Vec<f64>,
}

impl BernsteinCurve {
    pub fn new(spec: BasisSpec, coefs: Vec<f64>) -> Result<Self> {
        if coefs.len() != spec.n_coefs() {
            return Err(Error::Shape(format!(
                "order {} needs {} coefficients, got {}",
                spec.order,
                spec.n_coefs(),
                coefs.len()
            )));
        }
        Ok(Self { spec, coefs })
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        eval_bernstein(&self.coefs, self.spec.to_unit(t)?)
    }

    pub fn eval_many(&self, ts: &[f64]) -> Result<Vec<f64>> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }

    /// Derivative with respect to the domain variable.
    pub fn derivative(&self) -> Result<BernsteinCurve> {
        let scale = 1.0 / self.spec.width();
        let coefs = derivative_coeffs(&self.coefs)?
            .into_iter()
            .map(|c| c * scale)
            .collect();
        Ok(BernsteinCurve {
            spec: BasisSpec {
                order: self.spec.order - 1,
                domain: self.spec.domain,
            },
            coefs,
        })
    }
}

/// A bivariate coefficient surface in tensor Bernstein form (k1-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinSurface {
    pub spec: TensorBasisSpec,
    pub coefs: Vec<f64>,
}

impl BernsteinSurface {
    pub fn new(spec: TensorBasisSpec, coefs: Vec<f64>) -> Result<Self> {
        if coefs.len() != spec.n_coefs() {
            return Err(Error::Shape(format!(
                "tensor order {} needs {} coefficients, got {}",
                spec.order,
                spec.n_coefs(),
                coefs.len()
            )));
        }
        Ok(Self { spec, coefs })
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        let bs = self.spec.s_spec().eval(s)?;
        let bt = self.spec.t_spec().eval(t)?;
        let p = self.spec.order + 1;
        let mut acc = 0.0;
        for (k1, b1) in bs.iter().enumerate() {
            for (k2, b2) in bt.iter().enumerate() {
                acc += self.coefs[k1 * p + k2] * b1 * b2;
            }
        }
        Ok(acc)
    }
}

/// Composite trapezoid weights for an increasing set of nodes.
pub fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let m = points.len();
    let mut w = vec![0.0; m];
    for j in 1..m {
        let h = 0.5 * (points[j] - points[j - 1]);
        w[j - 1] += h;
        w[j] += h;
    }
    w
}

/// Trapezoid integral of sampled values.
pub fn trapezoid(points: &[f64], values: &[f64]) -> f64 {
    trapezoid_weights(points)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// One row of the scalar-on-function design: `W_k = int X(t) b_k(t, N) dt`.
pub fn sofr_design_row(times: &[f64], values: &[f64], spec: &BasisSpec) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::Shape(format!(
            "curve has {} times but {} values",
            times.len(),
            values.len()
        )));
    }
    if times.len() < 2 {
        return Err(Error::Data(format!(
            "a curve needs at least 2 observed points for quadrature, got {}",
            times.len()
        )));
    }
    let weights = trapezoid_weights(times);
    let mut row = vec![0.0; spec.n_coefs()];
    for ((&t, &x), &w) in times.iter().zip(values).zip(&weights) {
        let b = spec.eval(t)?;
        for (acc, bk) in row.iter_mut().zip(b) {
            *acc += w * x * bk;
        }
    }
    Ok(row)
}

/// Scalar-on-function design matrix, one row per `(times, values)` curve.
pub fn sofr_design<'a, I>(curves: I, spec: &BasisSpec) -> Result<DMatrix<f64>>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let rows = curves
        .into_iter()
        .enumerate()
        .map(|(i, (t, x))| {
            sofr_design_row(t, x, spec).map_err(|e| match e {
                Error::Data(msg) => Error::Data(format!("subject {i}: {msg}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p = spec.n_coefs();
    Ok(DMatrix::from_fn(rows.len(), p, |i, k| rows[i][k]))
}

/// Concurrent-model block: row `j` is `X(t_j)` times row `j` of the basis matrix.
pub fn flcm_design(x: &[f64], basis_matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.len() != basis_matrix.nrows() {
        return Err(Error::Shape(format!(
            "covariate has {} values but the basis matrix has {} rows",
            x.len(),
            basis_matrix.nrows()
        )));
    }
    let mut out = basis_matrix.clone();
    for (j, &xj) in x.iter().enumerate() {
        out.row_mut(j).scale_mut(xj);
    }
    Ok(out)
}

/// Function-on-function block for one subject.
///
/// Column `(k1, k2)` at row `j` is `[int X(s) b_{k1}(s) ds] * b_{k2}(t_j)`.
pub fn fofr_design(
    s_times: &[f64],
    x: &[f64],
    tensor: &TensorBasisSpec,
    t_points: &[f64],
) -> Result<DMatrix<f64>> {
    let integrals = sofr_design_row(s_times, x, &tensor.s_spec())?;
    let bt = eval_basis_matrix(t_points, &tensor.t_spec())?;
    let p = tensor.order + 1;
    let mut out = DMatrix::zeros(t_points.len(), p * p);
    for j in 0..t_points.len() {
        for (k1, &w) in integrals.iter().enumerate() {
            for k2 in 0..p {
                out[(j, k1 * p + k2)] = w * bt[(j, k2)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binom(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn endpoint_values() {
        assert_eq!(eval_basis(0.0, 3).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(eval_basis(1.0, 3).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn midpoint_quadratic() {
        assert_eq!(eval_basis(0.5, 2).unwrap(), vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn recurrence_matches_closed_form() {
        let b = eval_basis(0.3, 7).unwrap();
        let direct = binom(7, 2) * 0.3f64.powi(2) * 0.7f64.powi(5);
        assert_abs_diff_eq!(b[2], direct, epsilon = 1e-15);
        assert_abs_diff_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn order_zero_is_constant() {
        assert_eq!(eval_basis(0.7, 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn rejects_points_outside_unit_interval() {
        assert!(matches!(eval_basis(1.5, 3), Err(Error::Domain(_))));
        assert!(matches!(eval_basis(f64::NAN, 3), Err(Error::Domain(_))));
        let spec = BasisSpec::new(3, (2.0, 4.0)).unwrap();
        assert!(spec.eval(1.0).is_err());
        assert_abs_diff_eq!(spec.to_unit(3.0).unwrap(), 0.5);
    }

    #[test]
    fn invalid_domain() {
        assert!(BasisSpec::new(2, (1.0, 1.0)).is_err());
    }

    #[test]
    fn basis_matrices() {
        let m = eval_basis_matrix(&[0.0, 1.0], &BasisSpec::unit(1)).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let m = eval_basis_matrix(&[0.0, 0.5, 1.0], &BasisSpec::unit(2)).unwrap();
        assert_eq!(
            m,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.25, 0.5, 0.25, 0.0, 0.0, 1.0])
        );
        let pts = equispaced(40, (0.0, 1.0));
        let m = eval_basis_matrix(&pts, &BasisSpec::unit(5)).unwrap();
        for row in m.row_iter() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_coefficients() {
        assert_eq!(derivative_coeffs(&[2.0; 5]).unwrap(), vec![0.0; 4]);
        assert_eq!(derivative_coeffs(&[0.0, 1.0]).unwrap(), vec![1.0]);
        assert!(matches!(derivative_coeffs(&[1.0]), Err(Error::Shape(_))));

        let beta = [0.0, 1.0, 4.0];
        let d = derivative_coeffs(&beta).unwrap();
        assert_eq!(d, vec![2.0, 6.0]);
        let via_derivative = eval_bernstein(&d, 0.5).unwrap();
        let h = 1e-5;
        let fd = (eval_bernstein(&beta, 0.5 + h).unwrap()
            - eval_bernstein(&beta, 0.5 - h).unwrap())
            / (2.0 * h);
        assert_abs_diff_eq!(via_derivative, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fd, 4.0, epsilon = 1e-6);
    }

    #[test]
    fn curve_derivative_respects_domain_scale() {
        let spec = BasisSpec::new(2, (0.0, 2.0)).unwrap();
        // beta(t) = (t/2)^2 has coefficients (0, 0, 1).
        let c = BernsteinCurve::new(spec, vec![0.0, 0.0, 1.0]).unwrap();
        let d = c.derivative().unwrap();
        assert_abs_diff_eq!(d.eval(1.0).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sofr_design_constant_curve() {
        let t = equispaced(50, (0.0, 1.0));
        let x = vec![1.0; 50];
        for n in 1..6 {
            let row = sofr_design_row(&t, &x, &BasisSpec::unit(n)).unwrap();
            for w in row {
                assert_abs_diff_eq!(w, 1.0 / (n + 1) as f64, epsilon = 1e-3);
            }
        }
        let zero = sofr_design_row(&t, &vec![0.0; 50], &BasisSpec::unit(3)).unwrap();
        assert!(zero.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn sofr_design_linear_curve_matches_beta_integral() {
        // int t b_k(t, N) dt = (k + 1) / ((N + 1)(N + 2))
        let t = equispaced(50, (0.0, 1.0));
        let row = sofr_design_row(&t, &t, &BasisSpec::unit(2)).unwrap();
        for (k, w) in row.iter().enumerate() {
            assert_abs_diff_eq!(*w, (k + 1) as f64 / 12.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn sofr_design_needs_two_points() {
        let err = sofr_design([(&[0.5][..], &[1.0][..])], &BasisSpec::unit(2)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn flcm_blocks() {
        let pts = [0.0, 0.5, 1.0];
        let b = eval_basis_matrix(&pts, &BasisSpec::unit(1)).unwrap();
        assert_eq!(flcm_design(&[1.0; 3], &b).unwrap(), b);
        assert_eq!(flcm_design(&[0.0; 3], &b).unwrap(), DMatrix::zeros(3, 2));
        let w = flcm_design(&pts, &b).unwrap();
        assert_eq!(
            w,
            DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.25, 0.25, 0.0, 1.0])
        );
        assert!(matches!(flcm_design(&[1.0; 2], &b), Err(Error::Shape(_))));
    }

    #[test]
    fn fofr_blocks() {
        let tensor = TensorBasisSpec::new(1, 1, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let s = equispaced(201, (0.0, 1.0));
        let zero = fofr_design(&s, &vec![0.0; 201], &tensor, &[0.2, 0.7]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let ones = fofr_design(&s, &vec![1.0; 201], &tensor, &[0.2, 0.7]).unwrap();
        for (j, &t) in [0.2, 0.7].iter().enumerate() {
            let bt = eval_basis(t, 1).unwrap();
            for k1 in 0..2 {
                for k2 in 0..2 {
                    assert_abs_diff_eq!(ones[(j, k1 * 2 + k2)], 0.5 * bt[k2], epsilon = 1e-12);
                }
            }
        }

        let lin = fofr_design(&s, &s, &tensor, &[0.5]).unwrap();
        let expected = [0.5 / 6.0, 0.5 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        for (k, e) in expected.iter().enumerate() {
            assert_abs_diff_eq!(lin[(0, k)], e, epsilon = 1e-5);
        }
    }

    #[test]
    fn tensor_orders_must_match() {
        assert!(TensorBasisSpec::new(2, 3, (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(TensorBasisSpec::new(0, 0, (0.0, 1.0), (0.0, 1.0)).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(Grid::new(vec![]).is_err());
        let g = Grid::equispaced(5, (0.0, 1.0)).unwrap();
        assert!(g.check_within((0.0, 1.0)).is_ok());
        assert!(g.check_within((0.1, 1.0)).is_err());
        assert!(g.clone().with_subsets(vec![vec![]]).is_err());
        assert!(g.with_subsets(vec![vec![0, 3], vec![1]]).is_ok());
    }

    #[test]
    fn surface_evaluation() {
        let tensor = TensorBasisSpec::new(1, 1, (0.0, 1.0), (0.0, 1.0)).unwrap();
        // beta(s, t) = s + t has coefficients beta_{k1,k2} = k1 + k2.
        let surf = BernsteinSurface::new(tensor, vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(surf.eval(0.3, 0.6).unwrap(), 0.9, epsilon = 1e-12);
    }
}
