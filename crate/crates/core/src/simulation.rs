//! Synthetic scenarios, integrated squared error and the Monte Carlo benchmark.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{equispaced, trapezoid, trapezoid_weights, BasisSpec, BernsteinCurve, Grid};
use crate::constraints::ShapeSpec;
use crate::data::{FunctionalDataset, Samples, Subject};
use crate::error::{Error, Result};
use crate::functional::{fit_constrained_gls, FunctionalKind, GlsOptions};
use crate::inference::{
    bootstrap_shape_test_functional, bootstrap_shape_test_scalar, projection_ci_functional,
    projection_ci_scalar, CiOptions, TestOptions,
};
use crate::model::{functional_spec, sofr_basis, ModelKind};
use crate::rng::{derive_seed, role, stream};
use crate::selection::{cv_select_order, DEFAULT_FOLDS};
use crate::sofr::fit_sofr;
use crate::stats::{mean, paired_t_pvalue, sd, welch_t_pvalue};

/// Points of the grid on which integrated squared error is computed.
pub const IMSE_GRID: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Scalar-on-function, non-negative coefficient.
    A,
    /// Concurrent model, decreasing coefficient.
    B,
    /// Scenario B observed at 5 to 10 random points per subject.
    #[serde(rename = "B_sparse")]
    BSparse,
    /// Concurrent model, increasing and concave coefficient.
    C,
    /// Scenario B with a constant coefficient on the boundary of the decreasing cone.
    S1,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            "b_sparse" | "bsparse" | "b-sparse" => Ok(Self::BSparse),
            "c" => Ok(Self::C),
            "s1" => Ok(Self::S1),
            _ => Err(Error::Config(format!("unknown scenario '{s}'"))),
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::B => "B",
            Self::BSparse => "B_sparse",
            Self::C => "C",
            Self::S1 => "S1",
        };
        f.write_str(s)
    }
}

impl ScenarioKind {
    pub fn grid_size(self) -> usize {
        match self {
            Self::A => 50,
            _ => 40,
        }
    }

    pub fn model(self) -> ModelKind {
        match self {
            Self::A => ModelKind::Sofr,
            _ => ModelKind::Flcm,
        }
    }

    /// The shape the true coefficient satisfies.
    pub fn true_shape(self) -> ShapeSpec {
        match self {
            Self::A => ShapeSpec::NonNegative,
            Self::B | Self::BSparse | Self::S1 => ShapeSpec::NonIncreasing,
            Self::C => ShapeSpec::Combination {
                shapes: vec![ShapeSpec::NonDecreasing, ShapeSpec::Concave],
            },
        }
    }

    /// Factor applied to integrated squared errors when reported.
    pub fn scale(self) -> f64 {
        match self {
            Self::A | Self::C => 1000.0,
            _ => 100.0,
        }
    }

    /// Intercept: `alpha` for scenario A, `beta_0(t)` otherwise.
    pub fn intercept(self, t: f64) -> f64 {
        match self {
            Self::A => 0.15,
            Self::B | Self::BSparse | Self::S1 => 8.0 * (PI * t).sin(),
            Self::C => 3.0 * (PI * t).cos(),
        }
    }

    /// The shaped coefficient function.
    pub fn coefficient(self, t: f64) -> f64 {
        match self {
            Self::A => 0.1 * (PI * t).sin(),
            Self::B | Self::BSparse => 5.0 * (PI * t).cos(),
            Self::C => 5.0 * (PI * t / 2.0).sin(),
            Self::S1 => 2.5,
        }
    }

    fn n_components(self) -> usize {
        match self {
            Self::A => 20,
            _ => 5,
        }
    }
}

/// Inner product under which the covariate polynomials are orthonormal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyNorm {
    /// Plain sum over the grid points, so `Phi' Phi = I`.
    #[default]
    Grid,
    /// Trapezoid quadrature of the integral over `[0, 1]`.
    Integral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub poly_norm: PolyNorm,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            poly_norm: PolyNorm::default(),
        }
    }
}

fn norm_weights(grid: &[f64], norm: PolyNorm) -> Vec<f64> {
    match norm {
        PolyNorm::Grid => vec![1.0; grid.len()],
        PolyNorm::Integral => trapezoid_weights(grid),
    }
}

/// Shifted Legendre polynomials of degree `0..k` on `grid`, Gram-Schmidt
/// orthonormalised under `norm`.
pub fn orthonormal_polynomials(grid: &[f64], k: usize, norm: PolyNorm) -> Vec<Vec<f64>> {
    let w = norm_weights(grid, norm);
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(k);
    for d in 0..k {
        let col: Vec<f64> = grid
            .iter()
            .map(|&t| {
                let x = 2.0 * t - 1.0;
                let (mut p0, mut p1) = (1.0, x);
                if d == 0 {
                    return 1.0;
                }
                for j in 1..d {
                    let p2 = ((2 * j + 1) as f64 * x * p1 - j as f64 * p0) / (j + 1) as f64;
                    p0 = p1;
                    p1 = p2;
                }
                p1
            })
            .collect();
        raw.push(col);
    }
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(&w).map(|((x, y), w)| x * y * w).sum()
    };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    for mut v in raw {
        // Two passes of modified Gram-Schmidt keep the high degrees orthogonal.
        for _ in 0..2 {
            for q in &out {
                let c = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        out.push(v);
    }
    out
}

/// Draws replication `rep` of a scenario. The same `(seed, rep)` always gives the same data.
pub fn generate_scenario(spec: &ScenarioSpec, rep: u64) -> Result<FunctionalDataset> {
    let kind = spec.kind;
    if spec.n < 2 {
        return Err(Error::Config("a scenario needs at least 2 subjects".into()));
    }
    let m = kind.grid_size();
    let grid = equispaced(m, (0.0, 1.0));
    let k = kind.n_components();
    let phi = orthonormal_polynomials(&grid, k, spec.poly_norm);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let subjects = (0..spec.n)
        .map(|i| {
            let key = |r: u64| [rep, i as u64, r];
            let mut scores = stream(spec.seed, &key(role::SCORES));
            let psi: Vec<f64> = (0..k)
                .map(|j| ((k - j) as f64).sqrt() * std_normal.sample(&mut scores))
                .collect();
            let x: Vec<f64> = (0..m)
                .map(|t| psi.iter().zip(&phi).map(|(s, f)| s * f[t]).sum())
                .collect();
            let mut noise = stream(spec.seed, &key(role::NOISE));
            let id = format!("s{i}");
            if kind == ScenarioKind::A {
                let xb: Vec<f64> = grid
                    .iter()
                    .zip(&x)
                    .map(|(&t, v)| v * kind.coefficient(t))
                    .collect();
                let y = kind.intercept(0.0)
                    + trapezoid(&grid, &xb)
                    + 0.05 * std_normal.sample(&mut noise);
                return Subject {
                    y: Some(y),
                    x: Some(Samples::dense(x)),
                    ..Subject::new(id)
                };
            }
            let mut proc = stream(spec.seed, &key(role::ERROR_PROCESS));
            let xi1 = 0.5 * std_normal.sample(&mut proc);
            let xi2 = 0.75 * std_normal.sample(&mut proc);
            let y: Vec<f64> = grid
                .iter()
                .zip(&x)
                .map(|(&t, &xv)| {
                    kind.intercept(t)
                        + xv * kind.coefficient(t)
                        + xi1 * t.cos()
                        + xi2 * t.sin()
                        + 0.5 * std_normal.sample(&mut noise)
                })
                .collect();
            let (xs, ys) = if kind == ScenarioKind::BSparse {
                let mut pick = stream(spec.seed, &key(role::SPARSITY));
                let mi = pick.random_range(5..=10);
                let mut idx = sample(&mut pick, m, mi).into_vec();
                idx.sort_unstable();
                let xs = Samples {
                    values: idx.iter().map(|&j| x[j]).collect(),
                    idx: idx.clone(),
                };
                let ys = Samples {
                    values: idx.iter().map(|&j| y[j]).collect(),
                    idx,
                };
                (xs, ys)
            } else {
                (Samples::dense(x), Samples::dense(y))
            };
            Subject {
                x: Some(xs),
                y_curve: Some(ys),
                ..Subject::new(id)
            }
        })
        .collect();
    let g = Grid::new(grid)?;
    match kind {
        ScenarioKind::A => FunctionalDataset::new(subjects, Some(g), None),
        _ => FunctionalDataset::new(subjects, Some(g.clone()), Some(g)),
    }
}

/// `int (estimate - truth)^2` by the trapezoid rule on a 200-point grid over `domain`.
pub fn imse(estimate: impl Fn(f64) -> f64, truth: impl Fn(f64) -> f64, domain: (f64, f64)) -> f64 {
    let grid = equispaced(IMSE_GRID, domain);
    let sq: Vec<f64> = grid
        .iter()
        .map(|&t| (estimate(t) - truth(t)).powi(2))
        .collect();
    trapezoid(&grid, &sq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrderChoice {
    Fixed {
        order: usize,
    },
    /// Cross-validated separately for the constrained and the unconstrained fit.
    Cv {
        candidates: Vec<usize>,
        folds: usize,
    },
}

impl Default for OrderChoice {
    fn default() -> Self {
        OrderChoice::Cv {
            candidates: (2..=10).collect(),
            folds: DEFAULT_FOLDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetup {
    pub null: ShapeSpec,
    pub draws: usize,
    pub alpha: f64,
    /// Order used by the test fits.
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSetup {
    pub level: f64,
    pub draws: usize,
    /// Order used for the bands.
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub reps: usize,
    /// Fit both variants and record integrated squared errors.
    pub estimate: bool,
    pub order: OrderChoice,
    pub gls: GlsOptions,
    /// Shape imposed on the constrained variant; the scenario's true shape when `None`.
    pub shape: Option<ShapeSpec>,
    pub coverage: Option<CoverageSetup>,
    pub test: Option<TestSetup>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            reps: 200,
            estimate: true,
            order: OrderChoice::default(),
            gls: GlsOptions::default(),
            shape: None,
            coverage: None,
            test: None,
        }
    }
}

/// One table row: a scenario at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: ScenarioKind,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub scale: f64,
    /// Scaled means and standard deviations of integrated squared error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconstrained_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconstrained_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_paired: Option<f64>,
    /// Welch two-sample comparison of the two variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_welch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_rate: Option<f64>,
    /// Unscaled per-replication values for successful replications.
    pub imse_constrained: Vec<f64>,
    pub imse_unconstrained: Vec<f64>,
    pub orders_constrained: Vec<usize>,
    pub orders_unconstrained: Vec<usize>,
    pub coverages: Vec<f64>,
    pub p_values: Vec<f64>,
}

impl MetricRow {
    pub fn modal_order(orders: &[usize]) -> Option<usize> {
        let mut counts = std::collections::BTreeMap::new();
        for &o in orders {
            *counts.entry(o).or_insert(0usize) += 1;
        }
        // Ties go to the smaller order since BTreeMap iterates in order.
        counts
            .into_iter()
            .fold(None, |best: Option<(usize, usize)>, (o, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((o, c)),
            })
            .map(|(o, _)| o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    pub seed: u64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "scenario",
            "n",
            "reps",
            "failures",
            "scale",
            "constrained_mean",
            "constrained_sd",
            "unconstrained_mean",
            "unconstrained_sd",
            "p_welch",
            "p_paired",
            "modal_order_constrained",
            "modal_order_unconstrained",
            "coverage",
            "mean_width",
            "rejection_rate",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            let modal = |o: &[usize]| {
                MetricRow::modal_order(o)
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            };
            w.write_record([
                r.scenario.to_string(),
                r.n.to_string(),
                r.reps.to_string(),
                r.failures.to_string(),
                r.scale.to_string(),
                fmt_opt(r.constrained_mean),
                fmt_opt(r.constrained_sd),
                fmt_opt(r.unconstrained_mean),
                fmt_opt(r.unconstrained_sd),
                fmt_opt(r.p_welch),
                fmt_opt(r.p_paired),
                modal(&r.orders_constrained),
                modal(&r.orders_unconstrained),
                fmt_opt(r.coverage),
                fmt_opt(r.mean_width),
                fmt_opt(r.rejection_rate),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[derive(Debug, Clone, Default)]
struct RepOutcome {
    imse: Option<(f64, f64)>,
    orders: Option<(usize, usize)>,
    coverage: Option<(f64, f64)>,
    p_value: Option<f64>,
}

fn choose_order(
    data: &FunctionalDataset,
    kind: ScenarioKind,
    shape: Option<&ShapeSpec>,
    choice: &OrderChoice,
    seed: u64,
) -> Result<usize> {
    match choice {
        OrderChoice::Fixed { order } => Ok(*order),
        OrderChoice::Cv { candidates, folds } => {
            Ok(cv_select_order(data, kind.model(), shape, candidates, *folds, seed)?.chosen)
        }
    }
}

/// Integrated squared error of the shaped coefficient for one fit.
fn fit_imse(
    data: &FunctionalDataset,
    kind: ScenarioKind,
    shape: Option<&ShapeSpec>,
    order: usize,
    gls: &GlsOptions,
) -> Result<f64> {
    let truth = |t: f64| kind.coefficient(t);
    let curve: BernsteinCurve = match kind.model() {
        ModelKind::Sofr => fit_sofr(data, &sofr_basis(data, order)?, shape)?.beta(),
        _ => fit_constrained_gls(
            data,
            &functional_spec(data, FunctionalKind::Flcm, order)?,
            shape,
            gls,
        )?
        .beta_curve(1)?,
    };
    let dom = curve.spec.domain;
    let est = |t: f64| curve.eval(t).expect("point inside the domain");
    Ok(imse(est, truth, dom))
}

fn run_rep(spec: &ScenarioSpec, rep: u64, opts: &BenchOptions) -> Result<RepOutcome> {
    let kind = spec.kind;
    let data = generate_scenario(spec, rep)?;
    let shape = opts.shape.clone().unwrap_or_else(|| kind.true_shape());
    let mut out = RepOutcome::default();
    if opts.estimate {
        let cv_seed = derive_seed(spec.seed, &[rep, role::FOLDS]);
        let nc = choose_order(&data, kind, Some(&shape), &opts.order, cv_seed)?;
        let nu = choose_order(&data, kind, None, &opts.order, cv_seed)?;
        let ic = fit_imse(&data, kind, Some(&shape), nc, &opts.gls)?;
        let iu = fit_imse(&data, kind, None, nu, &opts.gls)?;
        out.imse = Some((ic, iu));
        out.orders = Some((nc, nu));
    }
    if let Some(cov) = &opts.coverage {
        let ci = CiOptions {
            level: cov.level,
            draws: cov.draws,
            seed: derive_seed(spec.seed, &[rep, role::CI_DRAWS]),
        };
        let band = match kind.model() {
            ModelKind::Sofr => {
                projection_ci_scalar(&data, &sofr_basis(&data, cov.order)?, Some(&shape), &ci)?
            }
            _ => projection_ci_functional(
                &data,
                &functional_spec(&data, FunctionalKind::Flcm, cov.order)?,
                Some(&shape),
                &opts.gls,
                &ci,
            )?,
        };
        let truth: Vec<f64> = band.grid.iter().map(|&t| kind.coefficient(t)).collect();
        out.coverage = Some((band.coverage(&truth), band.mean_width()));
    }
    if let Some(test) = &opts.test {
        let topts = TestOptions {
            draws: test.draws,
            seed: derive_seed(spec.seed, &[rep, role::BOOTSTRAP]),
            whiten: false,
        };
        let rep = match kind.model() {
            ModelKind::Sofr => bootstrap_shape_test_scalar(
                &data,
                &sofr_basis(&data, test.order)?,
                &test.null,
                &topts,
            )?,
            _ => bootstrap_shape_test_functional(
                &data,
                &functional_spec(&data, FunctionalKind::Flcm, test.order)?,
                &test.null,
                &topts,
            )?,
        };
        out.p_value = Some(rep.p_value);
    }
    Ok(out)
}

/// Runs `opts.reps` replications of a scenario. Failed replications are logged,
/// counted and left out of the summaries.
pub fn run_benchmark(spec: &ScenarioSpec, opts: &BenchOptions) -> Result<MetricRow> {
    if opts.reps == 0 {
        return Err(Error::Config(
            "benchmark needs at least one replication".into(),
        ));
    }
    let outcomes: Vec<Result<RepOutcome>> = (0..opts.reps as u64)
        .into_par_iter()
        .map(|rep| run_rep(spec, rep, opts))
        .collect();
    let mut ok = Vec::new();
    let mut failures = 0;
    let mut first_error = None;
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::warn!("scenario {} replication {rep} failed: {e}", spec.kind);
                failures += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(first_error.expect("at least one replication ran"));
    }
    let scale = spec.kind.scale();
    let ic: Vec<f64> = ok.iter().filter_map(|o| o.imse.map(|v| v.0)).collect();
    let iu: Vec<f64> = ok.iter().filter_map(|o| o.imse.map(|v| v.1)).collect();
    let scaled = |v: &[f64]| v.iter().map(|x| x * scale).collect::<Vec<_>>();
    let (sc, su) = (scaled(&ic), scaled(&iu));
    let has_imse = !ic.is_empty();
    let coverages: Vec<f64> = ok.iter().filter_map(|o| o.coverage.map(|v| v.0)).collect();
    let widths: Vec<f64> = ok.iter().filter_map(|o| o.coverage.map(|v| v.1)).collect();
    let p_values: Vec<f64> = ok.iter().filter_map(|o| o.p_value).collect();
    let alpha = opts.test.as_ref().map(|t| t.alpha).unwrap_or(0.05);
    Ok(MetricRow {
        scenario: spec.kind,
        n: spec.n,
        reps: ok.len(),
        failures,
        scale,
        constrained_mean: has_imse.then(|| mean(&sc)),
        constrained_sd: has_imse.then(|| sd(&sc)),
        unconstrained_mean: has_imse.then(|| mean(&su)),
        unconstrained_sd: has_imse.then(|| sd(&su)),
        p_paired: (ic.len() >= 2).then(|| paired_t_pvalue(&ic, &iu)),
        p_welch: (ic.len() >= 2).then(|| welch_t_pvalue(&ic, &iu)),
        coverage: (!coverages.is_empty()).then(|| mean(&coverages)),
        mean_width: (!widths.is_empty()).then(|| mean(&widths)),
        rejection_rate: (!p_values.is_empty()).then(|| {
            p_values.iter().filter(|&&p| p <= alpha).count() as f64 / p_values.len() as f64
        }),
        imse_constrained: ic,
        imse_unconstrained: iu,
        orders_constrained: ok.iter().filter_map(|o| o.orders.map(|v| v.0)).collect(),
        orders_unconstrained: ok.iter().filter_map(|o| o.orders.map(|v| v.1)).collect(),
        coverages,
        p_values,
    })
}

/// Gram matrix of the scenario polynomials under `norm`.
pub fn polynomial_gram(kind: ScenarioKind, norm: PolyNorm) -> DMatrix<f64> {
    let grid = equispaced(kind.grid_size(), (0.0, 1.0));
    let phi = orthonormal_polynomials(&grid, kind.n_components(), norm);
    let w = norm_weights(&grid, norm);
    DMatrix::from_fn(phi.len(), phi.len(), |a, b| {
        phi[a]
            .iter()
            .zip(&phi[b])
            .zip(&w)
            .map(|((x, y), w)| x * y * w)
            .sum()
    })
}

/// `BasisSpec` on `[0, 1]` used by the scenarios.
pub fn scenario_basis(order: usize) -> BasisSpec {
    BasisSpec::unit(order)
}
