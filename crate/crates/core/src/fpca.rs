//! Functional principal components of residual curves, the implied error
//! covariance, and the whitening transform built from it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{eval_basis, eval_basis_matrix, trapezoid_weights, BasisSpec};
use crate::data::Samples;
use crate::error::{Error, Result};

/// Default share of variance kept by the eigen truncation.
pub const DEFAULT_PVE: f64 = 0.95;

/// Order of the tensor Bernstein surface that smooths raw covariances.
const SURFACE_ORDER: usize = 6;

/// Order of the Bernstein fit used for the mean of sparse curves.
const SPARSE_MEAN_ORDER: usize = 8;

/// Treatment of the off-diagonal part of a dense sample covariance before the
/// eigen decomposition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovSmoother {
    /// Use the sample covariance as is; sampling noise then shows up as small
    /// spurious eigencomponents that count towards the PVE.
    Raw,
    /// Least-squares symmetric tensor Bernstein surface over off-diagonal cells.
    #[default]
    Surface,
}

/// `Sigma = sum_k lambda_k phi_k phi_k' + floor I` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub grid: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// One vector per component, orthonormal under trapezoid weights.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub nugget: f64,
    pub pve: f64,
    /// Diagonal actually added to the low-rank part.
    pub floor: f64,
    /// Set when the model is exactly the identity; whitening is then skipped.
    pub identity: bool,
}

impl CovarianceModel {
    pub fn identity(grid: &[f64]) -> Self {
        Self {
            grid: grid.to_vec(),
            eigenvalues: Vec::new(),
            eigenfunctions: Vec::new(),
            nugget: 0.0,
            pve: 1.0,
            floor: 1.0,
            identity: true,
        }
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    fn entry(&self, j: usize, l: usize) -> f64 {
        let mut v = 0.0;
        for (lam, phi) in self.eigenvalues.iter().zip(&self.eigenfunctions) {
            v += lam * phi[j] * phi[l];
        }
        if j == l {
            v += self.floor;
        }
        v
    }

    /// `Sigma` restricted to the grid indices `idx`, exactly symmetric.
    pub fn sigma_sub(&self, idx: &[usize]) -> DMatrix<f64> {
        let k = idx.len();
        let mut s = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = self.entry(idx[a], idx[b]);
                s[(a, b)] = v;
                s[(b, a)] = v;
            }
        }
        s
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        let all: Vec<usize> = (0..self.m()).collect();
        self.sigma_sub(&all)
    }

    /// `Sigma[idx, idx]^{-1/2}`, or `None` for the identity model.
    pub fn inv_sqrt_sub(&self, idx: &[usize]) -> Option<DMatrix<f64>> {
        if self.identity {
            return None;
        }
        let eig = SymmetricEigen::new(self.sigma_sub(idx));
        let floor = self.floor.max(f64::MIN_POSITIVE);
        let d = eig.eigenvalues.map(|v| 1.0 / v.max(floor).sqrt());
        let v = &eig.eigenvectors;
        let out = v * DMatrix::from_diagonal(&d) * v.transpose();
        Some((&out + out.transpose()) * 0.5)
    }

    pub fn inv_sqrt(&self) -> Option<DMatrix<f64>> {
        let all: Vec<usize> = (0..self.m()).collect();
        self.inv_sqrt_sub(&all)
    }
}

/// Multiplies a block of rows observed at `idx` by `Sigma[idx, idx]^{-1/2}`.
pub fn whiten(block: &DMatrix<f64>, idx: &[usize], cov: &CovarianceModel) -> Result<DMatrix<f64>> {
    if block.nrows() != idx.len() {
        return Err(Error::Shape(format!(
            "block has {} rows but {} grid indices were given",
            block.nrows(),
            idx.len()
        )));
    }
    if idx.iter().any(|&j| j >= cov.m()) {
        return Err(Error::Shape(
            "grid index outside the covariance model".into(),
        ));
    }
    Ok(match cov.inv_sqrt_sub(idx) {
        Some(s) => s * block,
        None => block.clone(),
    })
}

/// Replaces the diagonal by the mean of its neighbours along each row.
fn smooth_diagonal(c: &DMatrix<f64>) -> DMatrix<f64> {
    let m = c.nrows();
    let mut s = c.clone();
    for j in 0..m {
        s[(j, j)] = if j == 0 {
            c[(0, 1)]
        } else if j == m - 1 {
            c[(m - 1, m - 2)]
        } else {
            0.5 * (c[(j, j - 1)] + c[(j, j + 1)])
        };
    }
    s
}

/// Eigen-truncates a smooth covariance surface `g` on `grid` and adds the nugget floor.
fn truncate(g: &DMatrix<f64>, grid: &[f64], nugget: f64, pve: f64) -> CovarianceModel {
    let m = grid.len();
    let w = trapezoid_weights(grid);
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut h = DMatrix::from_fn(m, m, |j, l| sw[j] * g[(j, l)] * sw[l]);
    h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let lams: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = lams.iter().sum();
    let mut k = 0;
    if total > 0.0 {
        let mut acc = 0.0;
        for &l in &lams {
            if l <= 0.0 {
                break;
            }
            acc += l;
            k += 1;
            if acc >= pve * total {
                break;
            }
        }
    }
    let mut eigenvalues = Vec::with_capacity(k);
    let mut eigenfunctions = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut phi: Vec<f64> = (0..m).map(|j| eig.eigenvectors[(j, i)] / sw[j]).collect();
        let lead = phi
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            phi.iter_mut().for_each(|v| *v = -*v);
        }
        eigenvalues.push(eig.eigenvalues[i]);
        eigenfunctions.push(phi);
    }
    let mut model = CovarianceModel {
        grid: grid.to_vec(),
        eigenvalues,
        eigenfunctions,
        nugget,
        pve,
        floor: 0.0,
        identity: false,
    };
    let trace_g: f64 = (0..m).map(|j| model.entry(j, j)).sum();
    if model.k() == 0 && nugget <= 0.0 {
        log::warn!("residual covariance is zero; whitening falls back to the identity");
        return CovarianceModel {
            pve,
            ..CovarianceModel::identity(grid)
        };
    }
    model.floor = nugget.max(1e-8 * trace_g / m as f64);
    model
}

fn check_pve(pve: f64) -> Result<()> {
    if pve > 0.0 && pve <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("pve must lie in (0, 1], got {pve}")))
    }
}

/// Covariance of dense residual curves (rows = subjects, columns = grid points)
/// with the default smoother.
pub fn estimate_covariance(
    residuals: &DMatrix<f64>,
    grid: &[f64],
    pve: f64,
) -> Result<CovarianceModel> {
    estimate_covariance_with(residuals, grid, pve, CovSmoother::default())
}

/// The nugget is the mean excess of the diagonal over the average of its
/// neighbours, whichever smoother handles the rest.
pub fn estimate_covariance_with(
    residuals: &DMatrix<f64>,
    grid: &[f64],
    pve: f64,
    smoother: CovSmoother,
) -> Result<CovarianceModel> {
    check_pve(pve)?;
    let (n, m) = residuals.shape();
    if m != grid.len() {
        return Err(Error::Shape(format!(
            "residual matrix has {m} columns but the grid has {} points",
            grid.len()
        )));
    }
    if n < 3 {
        return Err(Error::Data(format!(
            "covariance estimation needs at least 3 curves, got {n}"
        )));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "residual matrix contains non-finite values".into(),
        ));
    }
    let mean = residuals.row_mean();
    let centered = DMatrix::from_fn(n, m, |i, j| residuals[(i, j)] - mean[j]);
    let c = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let c = (&c + c.transpose()) * 0.5;
    let (g, nugget) = if m < 3 {
        log::warn!("grid has fewer than 3 points; nugget set to zero");
        (c, 0.0)
    } else {
        let s = smooth_diagonal(&c);
        let nugget = (0..m)
            .map(|j| (c[(j, j)] - s[(j, j)]).max(0.0))
            .sum::<f64>()
            / m as f64;
        match smoother {
            CovSmoother::Raw => (s, nugget),
            CovSmoother::Surface => (
                fit_symmetric_surface(&c, &DMatrix::from_element(m, m, 1.0), grid)?,
                nugget,
            ),
        }
    };
    Ok(truncate(&g, grid, nugget, pve))
}

/// Weighted least-squares fit of a symmetric tensor Bernstein surface to the
/// off-diagonal cells of `sum / cnt`, evaluated on the grid.
fn fit_symmetric_surface(
    sum: &DMatrix<f64>,
    cnt: &DMatrix<f64>,
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    let m = grid.len();
    let order = SURFACE_ORDER.min(m - 1);
    let spec = BasisSpec::new(order, (grid[0], grid[m - 1]))?;
    let b: Vec<Vec<f64>> = grid
        .iter()
        .map(|&t| eval_basis(spec.to_unit(t)?, order))
        .collect::<Result<_>>()?;
    let p = order + 1;
    // Symmetric coefficients c_{k1 k2} = c_{k2 k1} indexed by k1 <= k2.
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (a..p).map(move |c| (a, c))).collect();
    let np = pairs.len();
    let mut xtx = DMatrix::<f64>::zeros(np, np);
    let mut xty = DVector::<f64>::zeros(np);
    let mut feat = vec![0.0; np];
    for j in 0..m {
        for l in 0..m {
            if j == l || cnt[(j, l)] == 0.0 {
                continue;
            }
            let w = cnt[(j, l)];
            let raw = sum[(j, l)] / w;
            for (f, &(a, c)) in feat.iter_mut().zip(&pairs) {
                *f = if a == c {
                    b[j][a] * b[l][a]
                } else {
                    b[j][a] * b[l][c] + b[j][c] * b[l][a]
                };
            }
            for u in 0..np {
                xty[u] += w * feat[u] * raw;
                for v in 0..np {
                    xtx[(u, v)] += w * feat[u] * feat[v];
                }
            }
        }
    }
    let ridge = 1e-10 * xtx.trace().max(1e-300);
    for u in 0..np {
        xtx[(u, u)] += ridge;
    }
    let coef = xtx
        .cholesky()
        .ok_or_else(|| Error::NotSpd("covariance surface fit is singular".into()))?
        .solve(&xty);
    let mut cmat = DMatrix::<f64>::zeros(p, p);
    for (u, &(a, c)) in pairs.iter().enumerate() {
        cmat[(a, c)] = coef[u];
        cmat[(c, a)] = coef[u];
    }
    let bm = DMatrix::from_fn(m, p, |j, k| b[j][k]);
    let g = &bm * cmat * bm.transpose();
    Ok((&g + g.transpose()) * 0.5)
}

/// Pooled Bernstein fit of the mean of sparse curves, evaluated on the grid.
pub fn sparse_mean(curves: &[&Samples], grid: &[f64]) -> Result<Vec<f64>> {
    let m = grid.len();
    if m < 2 {
        return Err(Error::Data(
            "mean of sparse curves needs a pooled grid of at least 2 points".into(),
        ));
    }
    let spec = BasisSpec::new(SPARSE_MEAN_ORDER.min(m - 1), (grid[0], grid[m - 1]))?;
    let b = eval_basis_matrix(grid, &spec)?;
    let p = spec.n_coefs();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for c in curves {
        for (&j, &v) in c.idx.iter().zip(&c.values) {
            let row = b.row(j);
            xtx += row.transpose() * row;
            xty += row.transpose() * v;
        }
    }
    let ridge = 1e-10 * xtx.trace().max(1e-300);
    for k in 0..p {
        xtx[(k, k)] += ridge;
    }
    let coef = xtx
        .cholesky()
        .ok_or_else(|| Error::NotSpd("mean fit of sparse curves is singular".into()))?
        .solve(&xty);
    Ok((b * coef).iter().copied().collect())
}

/// Covariance of sparsely observed curves (already centred) on a pooled grid.
///
/// Raw off-diagonal products are smoothed by a weighted least-squares fit of a
/// symmetric tensor Bernstein surface; the nugget is the mean excess of the raw
/// diagonal over that surface, clipped at zero.
pub fn estimate_covariance_sparse(
    curves: &[&Samples],
    grid: &[f64],
    pve: f64,
) -> Result<CovarianceModel> {
    check_pve(pve)?;
    let m = grid.len();
    if curves.len() < 3 {
        return Err(Error::Data(format!(
            "covariance estimation needs at least 3 curves, got {}",
            curves.len()
        )));
    }
    if m < 3 {
        return Err(Error::Data(
            "sparse covariance needs a pooled grid of at least 3 points".into(),
        ));
    }
    let mut sum = DMatrix::<f64>::zeros(m, m);
    let mut cnt = DMatrix::<f64>::zeros(m, m);
    for c in curves {
        for (a, &ja) in c.idx.iter().enumerate() {
            for (b, &jb) in c.idx.iter().enumerate() {
                sum[(ja, jb)] += c.values[a] * c.values[b];
                cnt[(ja, jb)] += 1.0;
            }
        }
    }
    let g = fit_symmetric_surface(&sum, &cnt, grid)?;
    let mut excess = 0.0;
    let mut used = 0usize;
    for j in 0..m {
        if cnt[(j, j)] > 0.0 {
            excess += sum[(j, j)] / cnt[(j, j)] - g[(j, j)];
            used += 1;
        }
    }
    // Clipping per point would bias the nugget upwards given few diagonal products.
    let nugget = if used > 0 {
        (excess / used as f64).max(0.0)
    } else {
        0.0
    };
    Ok(truncate(&g, grid, nugget, pve))
}

/// Conditional-expectation principal component scores of one sparse curve.
pub fn pace_scores(curve: &Samples, mean: &[f64], cov: &CovarianceModel) -> Result<Vec<f64>> {
    if cov.k() == 0 {
        return Ok(Vec::new());
    }
    let s = cov.sigma_sub(&curve.idx);
    let centred = DVector::from_iterator(
        curve.len(),
        curve
            .idx
            .iter()
            .zip(&curve.values)
            .map(|(&j, &v)| v - mean[j]),
    );
    let sol = s
        .cholesky()
        .ok_or_else(|| Error::NotSpd("observed covariance block is not positive definite".into()))?
        .solve(&centred);
    Ok(cov
        .eigenvalues
        .iter()
        .zip(&cov.eigenfunctions)
        .map(|(lam, phi)| {
            lam * curve
                .idx
                .iter()
                .zip(sol.iter())
                .map(|(&j, v)| phi[j] * v)
                .sum::<f64>()
        })
        .collect())
}
