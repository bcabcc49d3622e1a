//! Constrained least squares by the Goldfarb–Idnani dual active-set method.
//!
//! Solves `min ||Z beta - y||^2 + ridge ||beta||^2` subject to `A beta >= b`
//! (rows flagged as equalities hold with `=`). The Hessian factor comes from a
//! QR decomposition of `Z`, so the normal equations are never formed for the
//! solve itself. A [`ClsqFactor`] can be reused across many right-hand sides.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSystem;
use crate::error::{Error, Result};

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    /// Ridge added to `Z'Z`. `None` lets the solver add one only when needed.
    pub ridge: Option<f64>,
    /// Allow the automatic ridge when `Z'Z` is numerically singular.
    pub auto_ridge: bool,
    /// Relative feasibility tolerance used to pick violated rows.
    pub feas_tol: f64,
    /// Overrides the default iteration cap of `50 (P + R)`.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            ridge: None,
            auto_ridge: true,
            feas_tol: 1e-10,
            max_iter: None,
        }
    }
}

/// Residuals of the optimality conditions at the returned point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `max |2 Z'(Z beta - y) + 2 ridge beta - A' lambda|`.
    pub stationarity: f64,
    /// Largest violation of a row.
    pub primal: f64,
    /// Most negative inequality multiplier, as a non-negative number.
    pub dual: f64,
    /// `max |lambda_i (A_i beta - b_i)|` over inequality rows.
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub beta: Vec<f64>,
    /// One multiplier per constraint row; zero for inactive rows.
    pub multipliers: Vec<f64>,
    /// Sorted indices of active rows.
    pub active_set: Vec<usize>,
    /// `||Z beta - y||^2 + ridge ||beta||^2`.
    pub objective: f64,
    pub iterations: usize,
    pub ridge: f64,
    pub kkt: KktReport,
}

/// A factored least-squares problem `(Z, A, b)` waiting for a response vector.
#[derive(Debug, Clone)]
pub struct ClsqFactor {
    z: DMatrix<f64>,
    cons: ConstraintSystem,
    /// `L^{-T}` where `L L' = 2 (Z'Z + ridge I)`.
    j0: DMatrix<f64>,
    ridge: f64,
    opts: QpOptions,
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} contains non-finite values")))
    }
}

fn choose_ridge(z: &DMatrix<f64>, opts: &QpOptions) -> Result<f64> {
    if let Some(r) = opts.ridge {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Config(format!(
                "ridge must be non-negative, got {r}"
            )));
        }
        return Ok(r);
    }
    let ztz = z.transpose() * z;
    let trace = ztz.trace();
    let min_eig = SymmetricEigen::new(ztz).eigenvalues.min();
    if min_eig >= 1e-10 * trace && trace > 0.0 {
        return Ok(0.0);
    }
    if !opts.auto_ridge {
        return Err(Error::NotSpd(format!(
            "design cross-product is singular (smallest eigenvalue {min_eig:.3e}, trace {trace:.3e})"
        )));
    }
    let ridge = if trace > 0.0 { 1e-8 * trace } else { 1e-8 };
    log::warn!(
        "design is rank deficient; adding ridge {ridge:.3e} (1e-8 of the cross-product trace)"
    );
    Ok(ridge)
}

impl ClsqFactor {
    pub fn new(z: DMatrix<f64>, cons: ConstraintSystem, opts: QpOptions) -> Result<Self> {
        let p = z.ncols();
        if p == 0 {
            return Err(Error::Shape("design has no columns".into()));
        }
        if cons.coef_len() != p {
            return Err(Error::Shape(format!(
                "constraint system acts on {} coefficients but the design has {p} columns",
                cons.coef_len()
            )));
        }
        check_finite("design matrix", z.iter().copied())?;
        check_finite("constraint matrix", cons.a.iter().copied())?;
        check_finite("constraint bounds", cons.b.iter().copied())?;
        let ridge = choose_ridge(&z, &opts)?;

        let mut stacked = DMatrix::zeros(z.nrows() + p, p);
        stacked.view_mut((0, 0), (z.nrows(), p)).copy_from(&z);
        let sr = ridge.sqrt();
        for k in 0..p {
            stacked[(z.nrows() + k, k)] = sr;
        }
        let rz = stacked.qr().r();
        let scale = rz.diagonal().amax();
        if rz.diagonal().iter().any(|d| d.abs() <= 1e-14 * scale) || scale == 0.0 {
            return Err(Error::NotSpd(
                "triangular factor of the design is singular".into(),
            ));
        }
        let mut j0 = rz
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::NotSpd("triangular factor of the design is singular".into()))?;
        j0 /= std::f64::consts::SQRT_2;
        Ok(Self {
            z,
            cons,
            j0,
            ridge,
            opts,
        })
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn constraints(&self) -> &ConstraintSystem {
        &self.cons
    }

    pub fn solve(&self, y: &DVector<f64>) -> Result<QpSolution> {
        if y.len() != self.z.nrows() {
            return Err(Error::Shape(format!(
                "response has length {} but the design has {} rows",
                y.len(),
                self.z.nrows()
            )));
        }
        check_finite("response", y.iter().copied())?;
        let a = -2.0 * self.z.tr_mul(y);
        let mut gi = DualActiveSet::new(&self.j0, &self.cons, &a, self.opts);
        let iterations = gi.run()?;
        let beta = gi.x;
        let mut multipliers = vec![0.0; self.cons.n_rows()];
        for (k, &row) in gi.active.iter().enumerate() {
            multipliers[row] = gi.sign[row] * gi.u[k];
        }
        let mut active_set = gi.active.clone();
        active_set.sort_unstable();
        let resid = &self.z * &beta - y;
        let objective = resid.norm_squared() + self.ridge * beta.norm_squared();
        let kkt = kkt_report(&self.z, y, self.ridge, &self.cons, &beta, &multipliers);
        Ok(QpSolution {
            beta: beta.iter().copied().collect(),
            multipliers,
            active_set,
            objective,
            iterations,
            ridge: self.ridge,
            kkt,
        })
    }
}

fn kkt_report(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    ridge: f64,
    cons: &ConstraintSystem,
    beta: &DVector<f64>,
    lambda: &[f64],
) -> KktReport {
    let lam = DVector::from_column_slice(lambda);
    let grad = 2.0 * z.tr_mul(&(z * beta - y)) + 2.0 * ridge * beta - cons.a.tr_mul(&lam);
    let slack = &cons.a * beta - &cons.b;
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..cons.n_rows() {
        if cons.equality[i] {
            primal = primal.max(slack[i].abs());
        } else {
            primal = primal.max(-slack[i]);
            dual = dual.max(-lambda[i]);
            comp = comp.max((lambda[i] * slack[i]).abs());
        }
    }
    KktReport {
        stationarity: grad.amax(),
        primal,
        dual,
        complementarity: comp,
    }
}

/// Working state of the dual method in the transformed space `J = L^{-T} Q`.
struct DualActiveSet<'a> {
    cons: &'a ConstraintSystem,
    j: DMatrix<f64>,
    /// Leading `q x q` block is upper triangular.
    r: DMatrix<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
    /// Equality rows may be flipped so that the first step is feasible.
    sign: Vec<f64>,
    x: DVector<f64>,
    opts: QpOptions,
}

impl<'a> DualActiveSet<'a> {
    fn new(
        j0: &DMatrix<f64>,
        cons: &'a ConstraintSystem,
        a: &DVector<f64>,
        opts: QpOptions,
    ) -> Self {
        let n = j0.nrows();
        let x = -(j0 * j0.tr_mul(a));
        Self {
            cons,
            j: j0.clone(),
            r: DMatrix::zeros(n, n),
            active: Vec::new(),
            u: Vec::new(),
            sign: vec![1.0; cons.n_rows()],
            x,
            opts,
        }
    }

    fn normal(&self, row: usize) -> DVector<f64> {
        self.cons.a.row(row).transpose() * self.sign[row]
    }

    fn slack(&self, row: usize) -> f64 {
        let s = self.cons.a.row(row).dot(&self.x.transpose()) - self.cons.b[row];
        s * self.sign[row]
    }

    fn tolerance(&self, row: usize) -> f64 {
        let scale = 1.0 + self.cons.b[row].abs() + self.cons.a.row(row).amax() * self.x.amax();
        self.opts.feas_tol * scale
    }

    fn pick(&mut self, skipped: &[bool]) -> Option<usize> {
        let m = self.cons.n_rows();
        #[allow(clippy::needless_range_loop)]
        for row in 0..m {
            if self.cons.equality[row] && !skipped[row] && !self.active.contains(&row) {
                if self.slack(row) > 0.0 {
                    self.sign[row] = -1.0;
                }
                return Some(row);
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for row in 0..m {
            if self.cons.equality[row] || self.active.contains(&row) {
                continue;
            }
            let s = self.slack(row);
            if s < -self.tolerance(row) && best.is_none_or(|(_, bs)| s < bs) {
                best = Some((row, s));
            }
        }
        best.map(|(row, _)| row)
    }

    fn run(&mut self) -> Result<usize> {
        let n = self.j.nrows();
        let m = self.cons.n_rows();
        let cap = self.opts.max_iter.unwrap_or(50 * (n + m));
        let mut iterations = 0;
        let mut skipped = vec![false; m];
        while let Some(p) = self.pick(&skipped) {
            let np = self.normal(p);
            let mut u_new = 0.0;
            loop {
                iterations += 1;
                if iterations > cap {
                    return Err(Error::NonConvergence {
                        iterations: cap,
                        last: self.x.iter().copied().collect(),
                    });
                }
                let q = self.active.len();
                let s_p = self.slack(p);
                let d = self.j.tr_mul(&np);
                let z = self.j.columns(q, n - q) * d.rows(q, n - q);
                let r = if q > 0 {
                    self.r
                        .view((0, 0), (q, q))
                        .solve_upper_triangular(&d.rows(0, q).into_owned())
                        .ok_or_else(|| {
                            Error::NotSpd("active constraint factor is singular".into())
                        })?
                } else {
                    DVector::zeros(0)
                };

                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for k in 0..q {
                    if !self.cons.equality[self.active[k]] && r[k] > 0.0 {
                        let v = self.u[k] / r[k];
                        if v < t1 {
                            t1 = v;
                            drop_at = Some(k);
                        }
                    }
                }
                let d2 = d.rows(q, n - q).norm();
                let degenerate = d2 <= 1e-12 * d.norm().max(f64::MIN_POSITIVE);
                let t2 = if degenerate {
                    f64::INFINITY
                } else {
                    -s_p / z.dot(&np)
                };
                let t = t1.min(t2);

                if t.is_infinite() {
                    if self.cons.equality[p] && s_p.abs() <= self.tolerance(p) {
                        // Redundant equality already satisfied by the active rows.
                        skipped[p] = true;
                        break;
                    }
                    let mut rows = self.active.clone();
                    rows.push(p);
                    rows.sort_unstable();
                    return Err(Error::Infeasible {
                        rows,
                        reason: "no step restores feasibility of the most violated row".into(),
                    });
                }

                if !t2.is_infinite() {
                    self.x += t * &z;
                }
                for k in 0..q {
                    self.u[k] -= t * r[k];
                }
                u_new += t;

                if t2 <= t1 {
                    self.add(&d);
                    self.active.push(p);
                    self.u.push(u_new);
                    break;
                }
                let k = drop_at.expect("finite partial step has a blocking row");
                self.drop(k);
            }
        }
        Ok(iterations)
    }

    /// Appends a normal with transformed coordinates `d = J' n`.
    fn add(&mut self, d: &DVector<f64>) {
        let n = self.j.nrows();
        let q = self.active.len();
        let mut d = d.clone();
        for jj in (q + 1..n).rev() {
            let (a, b) = (d[jj - 1], d[jj]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[jj - 1] = h;
            d[jj] = 0.0;
            for i in 0..n {
                let (x0, x1) = (self.j[(i, jj - 1)], self.j[(i, jj)]);
                self.j[(i, jj - 1)] = c * x0 + s * x1;
                self.j[(i, jj)] = -s * x0 + c * x1;
            }
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
    }

    /// Removes the `k`-th active row and retriangularizes.
    fn drop(&mut self, k: usize) {
        let n = self.j.nrows();
        let q = self.active.len();
        for col in k..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for jj in k..q - 1 {
            let (a, b) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in jj..q - 1 {
                let (x0, x1) = (self.r[(jj, col)], self.r[(jj + 1, col)]);
                self.r[(jj, col)] = c * x0 + s * x1;
                self.r[(jj + 1, col)] = -s * x0 + c * x1;
            }
            self.r[(jj + 1, jj)] = 0.0;
            for i in 0..n {
                let (x0, x1) = (self.j[(i, jj)], self.j[(i, jj + 1)]);
                self.j[(i, jj)] = c * x0 + s * x1;
                self.j[(i, jj + 1)] = -s * x0 + c * x1;
            }
        }
        self.active.remove(k);
        self.u.remove(k);
    }
}

/// Solves `min ||Z beta - y||^2 + ridge ||beta||^2` s.t. `A beta >= b`.
pub fn solve_clsq(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    cons: &ConstraintSystem,
    opts: QpOptions,
) -> Result<QpSolution> {
    ClsqFactor::new(z.clone(), cons.clone(), opts)?.solve(y)
}

/// Projection onto a constraint set in the metric of a positive semi-definite `omega`.
#[derive(Debug, Clone)]
pub struct OmegaProjector {
    factor: ClsqFactor,
    lt: DMatrix<f64>,
}

impl OmegaProjector {
    pub fn new(omega: &DMatrix<f64>, cons: &ConstraintSystem) -> Result<Self> {
        let p = omega.nrows();
        if omega.ncols() != p {
            return Err(Error::Shape("projection metric must be square".into()));
        }
        check_finite("projection metric", omega.iter().copied())?;
        let sym = (omega + omega.transpose()) * 0.5;
        let trace = sym.trace();
        let eig = SymmetricEigen::new(sym.clone());
        let min_eig = eig.eigenvalues.min();
        if trace <= 0.0 || min_eig < -1e-10 * trace {
            return Err(Error::NotSpd(format!(
                "projection metric has eigenvalue {min_eig:.3e} (trace {trace:.3e})"
            )));
        }
        let floor = 1e-12 * trace;
        let metric = if min_eig < floor {
            log::warn!(
                "projection metric is near singular; clipping eigenvalues below {floor:.3e}"
            );
            let clipped = eig.eigenvalues.map(|v| v.max(floor));
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
        } else {
            sym
        };
        let chol = metric
            .cholesky()
            .ok_or_else(|| Error::NotSpd("Cholesky factorization of the metric failed".into()))?;
        let lt = chol.l().transpose();
        let opts = QpOptions {
            ridge: Some(0.0),
            ..QpOptions::default()
        };
        let factor = ClsqFactor::new(lt.clone(), cons.clone(), opts)?;
        Ok(Self { factor, lt })
    }

    pub fn project(&self, z: &DVector<f64>) -> Result<QpSolution> {
        if z.len() != self.lt.ncols() {
            return Err(Error::Shape(format!(
                "point has length {} but the metric is {}x{}",
                z.len(),
                self.lt.ncols(),
                self.lt.ncols()
            )));
        }
        check_finite("point", z.iter().copied())?;
        let cons = &self.factor.cons;
        if cons.check(z.as_slice(), 0.0)?.feasible {
            // Feasible points are their own projection; skip the rounding of a solve.
            let multipliers = vec![0.0; cons.n_rows()];
            let y = &self.lt * z;
            let kkt = kkt_report(&self.lt, &y, 0.0, cons, z, &multipliers);
            return Ok(QpSolution {
                beta: z.iter().copied().collect(),
                multipliers,
                active_set: Vec::new(),
                objective: 0.0,
                iterations: 0,
                ridge: 0.0,
                kkt,
            });
        }
        self.factor.solve(&(&self.lt * z))
    }
}

/// `argmin_{A beta >= b} (beta - z)' omega (beta - z)`.
pub fn project_omega(
    z: &DVector<f64>,
    omega: &DMatrix<f64>,
    cons: &ConstraintSystem,
) -> Result<QpSolution> {
    OmegaProjector::new(omega, cons)?.project(z)
}
