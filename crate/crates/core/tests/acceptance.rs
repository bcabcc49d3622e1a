//! Acceptance criteria 1 to 11. Every criterion prints one PASS/FAIL line; the
//! test fails at the end if any criterion did.

use std::io::Write;
use std::time::{Duration, Instant};

use bernfit::basis::{equispaced, eval_basis};
use bernfit::constraints::{build_constraints, ConstraintSystem, ShapeSpec, Target};
use bernfit::fpca::{CovSmoother, CovarianceModel};
use bernfit::functional::{FunctionalDesign, FunctionalKind};
use bernfit::model::{functional_spec, sofr_basis};
use bernfit::qp::{solve_clsq, OmegaProjector, QpOptions};
use bernfit::simulation::{
    generate_scenario, run_benchmark, BenchOptions, CoverageSetup, MetricRow, OrderChoice,
    ScenarioKind, ScenarioSpec, TestSetup,
};
use bernfit::sofr::SofrDesign;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = run();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    let line = format!(
        "criterion {id:>2}: {} {} [{:.1}s, limit {}s{}]\n",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", over time" },
    );
    // Written to stderr directly so the line survives libtest output capture.
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    pass
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn bench(kind: ScenarioKind, n: usize, opts: BenchOptions) -> MetricRow {
    run_benchmark(&ScenarioSpec::new(kind, n, SEED), &opts).unwrap()
}

fn estimate_only(reps: usize, order: usize) -> BenchOptions {
    BenchOptions {
        reps,
        order: OrderChoice::Fixed { order },
        ..BenchOptions::default()
    }
}

fn coverage_only(reps: usize, order: usize, draws: usize) -> BenchOptions {
    BenchOptions {
        reps,
        estimate: false,
        coverage: Some(CoverageSetup {
            level: 0.95,
            draws,
            order,
        }),
        ..BenchOptions::default()
    }
}

fn test_only(reps: usize, order: usize, null: ShapeSpec, draws: usize) -> BenchOptions {
    BenchOptions {
        reps,
        estimate: false,
        test: Some(TestSetup {
            null,
            draws,
            alpha: 0.05,
            order,
        }),
        ..BenchOptions::default()
    }
}

fn imse_detail(row: &MetricRow) -> String {
    format!(
        "constrained {:.3} ({:.3}) | unconstrained {:.3} ({:.3}) x{}, reps {}, failed {}",
        row.constrained_mean.unwrap(),
        row.constrained_sd.unwrap(),
        row.unconstrained_mean.unwrap(),
        row.unconstrained_sd.unwrap(),
        row.scale,
        row.reps,
        row.failures
    )
}

fn rank(a: &DMatrix<f64>) -> usize {
    a.clone().svd(false, false).rank(1e-9)
}

fn ineq(rows: Vec<Vec<f64>>, p: usize) -> ConstraintSystem {
    let m = rows.len();
    ConstraintSystem {
        a: DMatrix::from_fn(m, p, |i, j| rows[i][j]),
        b: DVector::zeros(m),
        equality: vec![false; m],
    }
}

fn stencil_rows(n: usize, stencil: &[f64]) -> Vec<Vec<f64>> {
    (0..=n + 1 - stencil.len())
        .map(|i| {
            let mut r = vec![0.0; n + 1];
            r[i..i + stencil.len()].copy_from_slice(stencil);
            r
        })
        .collect()
}

/// Rows acting along `s` (leading index) or `t` of the flattened `(N+1)^2` layout,
/// ordered by the flat index of the stencil's first entry.
fn tensor_stencil(n: usize, stencil: &[f64], along_s: bool) -> Vec<Vec<f64>> {
    let p = n + 1;
    let reach = stencil.len() - 1;
    let mut rows = Vec::new();
    for k1 in 0..p {
        for k2 in 0..p {
            let (end1, end2) = if along_s {
                (k1 + reach, k2)
            } else {
                (k1, k2 + reach)
            };
            if end1 >= p || end2 >= p {
                continue;
            }
            let mut r = vec![0.0; p * p];
            for (step, &v) in stencil.iter().enumerate() {
                let idx = if along_s {
                    (k1 + step) * p + k2
                } else {
                    k1 * p + k2 + step
                };
                r[idx] = v;
            }
            rows.push(r);
        }
    }
    rows
}

fn criterion_1() -> Outcome {
    let mut bad = Vec::new();
    for n in 2..=6 {
        let p = n + 1;
        let uni = |s: ShapeSpec| build_constraints(&s, Target::univariate(n)).unwrap();
        let biv = |s: ShapeSpec| build_constraints(&s, Target::bivariate(n)).unwrap();
        let identity: Vec<Vec<f64>> = (0..p)
            .map(|k| (0..p).map(|j| f64::from(u8::from(j == k))).collect())
            .collect();
        let first = stencil_rows(n, &[-1.0, 1.0]);
        let second = stencil_rows(n, &[1.0, -2.0, 1.0]);
        let mut fixed_rows = DMatrix::zeros(2, p);
        fixed_rows[(0, 0)] = 1.0;
        fixed_rows[(1, n)] = 1.0;
        let fixed = ConstraintSystem {
            a: fixed_rows,
            b: DVector::from_column_slice(&[0.5, -1.5]),
            equality: vec![true, true],
        };
        let ms = tensor_stencil(n, &[-1.0, 1.0], true);
        let mt = tensor_stencil(n, &[-1.0, 1.0], false);
        let cs = tensor_stencil(n, &[1.0, -2.0, 1.0], true);
        let ct = tensor_stencil(n, &[1.0, -2.0, 1.0], false);
        let both_m = ineq([ms.clone(), mt.clone()].concat(), p * p);
        let both_c = ineq([cs.clone(), ct.clone()].concat(), p * p);

        let cases: Vec<(&str, ConstraintSystem, ConstraintSystem, usize, usize)> = vec![
            (
                "non_negative",
                uni(ShapeSpec::NonNegative),
                ineq(identity.clone(), p),
                p,
                p,
            ),
            (
                "non_decreasing",
                uni(ShapeSpec::NonDecreasing),
                ineq(first.clone(), p),
                n,
                n,
            ),
            (
                "convex",
                uni(ShapeSpec::Convex),
                ineq(second.clone(), p),
                n - 1,
                n - 1,
            ),
            (
                "fixed_boundaries",
                uni(ShapeSpec::FixedBoundaries {
                    a0: Some(0.5),
                    a1: Some(-1.5),
                }),
                fixed,
                2,
                2,
            ),
            (
                "non_positive",
                uni(ShapeSpec::NonPositive),
                ineq(identity, p).negated(),
                p,
                p,
            ),
            (
                "non_increasing",
                uni(ShapeSpec::NonIncreasing),
                ineq(first, p).negated(),
                n,
                n,
            ),
            (
                "concave",
                uni(ShapeSpec::Concave),
                ineq(second, p).negated(),
                n - 1,
                n - 1,
            ),
            (
                "monotone_s",
                biv(ShapeSpec::BivariateMonotone {
                    in_s: true,
                    in_t: false,
                }),
                ineq(ms, p * p),
                n * p,
                n * p,
            ),
            (
                "monotone_t",
                biv(ShapeSpec::BivariateMonotone {
                    in_s: false,
                    in_t: true,
                }),
                ineq(mt, p * p),
                n * p,
                n * p,
            ),
            (
                "monotone_st",
                biv(ShapeSpec::BivariateMonotone {
                    in_s: true,
                    in_t: true,
                }),
                both_m,
                2 * n * p,
                p * p - 1,
            ),
            (
                "convex_s",
                biv(ShapeSpec::PartialConvex {
                    in_s: true,
                    in_t: false,
                }),
                ineq(cs, p * p),
                n * n - 1,
                n * n - 1,
            ),
            (
                "convex_t",
                biv(ShapeSpec::PartialConvex {
                    in_s: false,
                    in_t: true,
                }),
                ineq(ct, p * p),
                n * n - 1,
                n * n - 1,
            ),
            (
                "convex_st",
                biv(ShapeSpec::PartialConvex {
                    in_s: true,
                    in_t: true,
                }),
                both_c,
                2 * (n * n - 1),
                p * p - 4,
            ),
        ];
        for (name, got, want, rows, r) in cases {
            let same = got.a == want.a && got.b == want.b && got.equality == want.equality;
            if !same || got.a.nrows() != rows || rank(&got.a) != r {
                bad.push(format!("{name} N={n}"));
            }
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            "13 constraint kinds x N=2..6 match the golden matrices, row counts and ranks".into()
        } else {
            format!("mismatch: {}", bad.join(", "))
        },
    }
}

/// Best objective over every active set that yields a feasible point.
fn enumerate(z: &DMatrix<f64>, y: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let (p, m) = (z.ncols(), a.nrows());
    let h = z.transpose() * z;
    let g = z.transpose() * y;
    let mut best = f64::INFINITY;
    for mask in 0usize..1 << m {
        let act: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        if act.len() > p {
            continue;
        }
        let k = act.len();
        let mut kkt = DMatrix::zeros(p + k, p + k);
        let mut rhs = DVector::zeros(p + k);
        kkt.view_mut((0, 0), (p, p)).copy_from(&h);
        rhs.rows_mut(0, p).copy_from(&g);
        for (r, &i) in act.iter().enumerate() {
            for j in 0..p {
                kkt[(p + r, j)] = a[(i, j)];
                kkt[(j, p + r)] = a[(i, j)];
            }
            rhs[p + r] = b[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let beta = sol.rows(0, p).into_owned();
        if (a * &beta - b).min() < -1e-10 {
            continue;
        }
        best = best.min((y - z * &beta).norm_squared());
    }
    best
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_gap, mut worst_kkt) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let p = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let rows = p + rng.random_range(2..10);
        let z = DMatrix::from_fn(rows, p, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(rows, |_, _| rng.random_range(-2.0..2.0));
        let x0 = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
        let b = &a * &x0 - DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
        let cons = ConstraintSystem {
            a: a.clone(),
            b: b.clone(),
            equality: vec![false; m],
        };
        let sol = solve_clsq(&z, &y, &cons, QpOptions::default()).unwrap();
        let best = enumerate(&z, &y, &a, &b);
        worst_gap = worst_gap.max((sol.objective - best).abs() / (1.0 + best));
        worst_kkt = worst_kkt.max(sol.kkt.max());
    }
    Outcome {
        pass: worst_gap <= 1e-8 && worst_kkt <= 1e-8,
        detail: format!("200 instances, worst objective gap {worst_gap:.1e}, worst KKT residual {worst_kkt:.1e}"),
    }
}

fn criterion_3() -> Outcome {
    let row = bench(ScenarioKind::A, 50, estimate_only(200, 4));
    let (c, u, p) = (
        row.constrained_mean.unwrap(),
        row.unconstrained_mean.unwrap(),
        row.p_paired.unwrap(),
    );
    Outcome {
        pass: within(c, 0.25, 0.60) && within(u, 0.40, 0.90) && c < u && p < 0.01,
        detail: format!("{}, paired p {p:.2e}", imse_detail(&row)),
    }
}

fn criterion_4() -> Outcome {
    let row = bench(ScenarioKind::B, 50, estimate_only(200, 5));
    let (c, u) = (
        row.constrained_mean.unwrap(),
        row.unconstrained_mean.unwrap(),
    );
    Outcome {
        pass: within(c, 0.30, 0.70) && u / c >= 2.5,
        detail: format!("{}, ratio {:.2} (need >= 2.5)", imse_detail(&row), u / c),
    }
}

fn criterion_5() -> Outcome {
    let row = bench(ScenarioKind::C, 25, estimate_only(100, 5));
    let (c, u) = (
        row.constrained_mean.unwrap(),
        row.unconstrained_mean.unwrap(),
    );
    Outcome {
        pass: u / c >= 3.0,
        detail: format!("{}, ratio {:.2} (need >= 3)", imse_detail(&row), u / c),
    }
}

fn criterion_6() -> Outcome {
    let row = bench(ScenarioKind::A, 100, coverage_only(100, 4, 300));
    let cov = row.coverage.unwrap();
    Outcome {
        pass: within(cov, 0.90, 0.99),
        detail: format!(
            "coverage {cov:.3}, mean width {:.4}, reps {}",
            row.mean_width.unwrap(),
            row.reps
        ),
    }
}

fn criterion_7() -> Outcome {
    let size = bench(
        ScenarioKind::A,
        50,
        test_only(100, 4, ShapeSpec::NonNegative, 200),
    );
    let power = bench(
        ScenarioKind::A,
        100,
        test_only(100, 4, ShapeSpec::NonDecreasing, 200),
    );
    let (s, w) = (size.rejection_rate.unwrap(), power.rejection_rate.unwrap());
    Outcome {
        pass: within(s, 0.0, 0.11) && w >= 0.70,
        detail: format!(
            "size {s:.3} (reps {}), power {w:.3} (reps {})",
            size.reps, power.reps
        ),
    }
}

fn criterion_8() -> Outcome {
    let row = bench(
        ScenarioKind::B,
        25,
        test_only(50, 5, ShapeSpec::Convex, 200),
    );
    let r = row.rejection_rate.unwrap();
    Outcome {
        pass: r == 1.0 && row.reps == 50,
        detail: format!("rejection rate {r:.3}, reps {}", row.reps),
    }
}

fn criterion_9() -> Outcome {
    let row = bench(ScenarioKind::BSparse, 100, estimate_only(100, 5));
    let (c, u) = (
        row.constrained_mean.unwrap(),
        row.unconstrained_mean.unwrap(),
    );
    Outcome {
        pass: within(c, 0.6, 1.4) && c < u,
        detail: imse_detail(&row),
    }
}

fn criterion_10() -> Outcome {
    let mut failed = Vec::new();

    let grid = equispaced(200, (0.0, 1.0));
    let unity = (1..=30).all(|n| {
        grid.iter().all(|&u| {
            let b = eval_basis(u, n).unwrap();
            b.iter().all(|&v| v >= 0.0) && (b.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        })
    });
    if !unity {
        failed.push("partition of unity");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut projection_ok = true;
    for _ in 0..500 {
        let p = rng.random_range(3..=7);
        let m = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let omega = m.transpose() * &m + DMatrix::identity(p, p) * 0.1;
        let cons = build_constraints(&ShapeSpec::NonDecreasing, Target::univariate(p - 1)).unwrap();
        let proj = OmegaProjector::new(&omega, &cons).unwrap();
        let z = DVector::from_fn(p, |_, _| rng.random_range(-5.0..5.0));
        let anchor = DVector::from_element(p, rng.random_range(-1.0..1.0));
        let norm = |v: &DVector<f64>| (v.transpose() * &omega * v)[(0, 0)].max(0.0).sqrt();
        let pz = DVector::from_vec(proj.project(&z).unwrap().beta);
        let ppz = DVector::from_vec(proj.project(&pz).unwrap().beta);
        projection_ok &= norm(&(&pz - &anchor)) <= norm(&(&z - &anchor)) + 1e-9;
        projection_ok &= (&ppz - &pz).amax() <= 1e-10 * (1.0 + pz.amax());
    }
    if !projection_ok {
        failed.push("projection");
    }

    let mut fits_ok = true;
    for (rep, kind) in [
        ScenarioKind::A,
        ScenarioKind::B,
        ScenarioKind::C,
        ScenarioKind::BSparse,
        ScenarioKind::S1,
    ]
    .into_iter()
    .enumerate()
    {
        let data = generate_scenario(&ScenarioSpec::new(kind, 40, SEED), rep as u64).unwrap();
        let shape = kind.true_shape();
        if kind == ScenarioKind::A {
            let design = SofrDesign::new(&data, &sofr_basis(&data, 4).unwrap()).unwrap();
            let (free, shaped) = (design.fit(None).unwrap(), design.fit(Some(&shape)).unwrap());
            fits_ok &= shaped.rss >= free.rss * (1.0 - 1e-12);
            fits_ok &= shaped.certificate.as_ref().is_some_and(|c| c.feasible);
            continue;
        }
        let spec = functional_spec(&data, FunctionalKind::Flcm, 5).unwrap();
        let design = FunctionalDesign::new(&data, &spec).unwrap();
        let cov = design.step_one(0.95, CovSmoother::Surface).unwrap();
        let free = design.fit(None, Some(&cov)).unwrap();
        let shaped = design.fit(Some(&shape), Some(&cov)).unwrap();
        fits_ok &= shaped.rss_whitened >= free.rss_whitened * (1.0 - 1e-12);
        fits_ok &= shaped.certificate.as_ref().is_some_and(|c| c.feasible);
        if kind == ScenarioKind::B {
            let identity = CovarianceModel::identity(&design.grid);
            let plain = design.fit(Some(&shape), None).unwrap();
            let whitened = design.fit(Some(&shape), Some(&identity)).unwrap();
            if plain.coefs != whitened.coefs {
                failed.push("identity whitening");
            }
        }
    }
    if !fits_ok {
        failed.push("rss ordering or certificates");
    }

    let spec = ScenarioSpec::new(ScenarioKind::B, 25, SEED);
    let opts = BenchOptions {
        coverage: Some(CoverageSetup {
            level: 0.95,
            draws: 100,
            order: 4,
        }),
        ..estimate_only(4, 4)
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_benchmark(&spec, &opts).unwrap())
    };
    if run(1) != run(4) {
        failed.push("thread determinism");
    }

    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            "basis, projection (500 cases), rss ordering, certificates, identity whitening, thread determinism".into()
        } else {
            format!("failed: {}", failed.join(", "))
        },
    }
}

fn criterion_11() -> Outcome {
    let row = bench(ScenarioKind::S1, 100, coverage_only(100, 5, 300));
    let cov = row.coverage.unwrap();
    Outcome {
        pass: within(cov, 0.88, 0.99),
        detail: format!(
            "coverage {cov:.3}, mean width {:.3}, reps {}",
            row.mean_width.unwrap(),
            row.reps
        ),
    }
}

#[test]
fn acceptance() {
    std::io::stderr().write_all(b"\n").unwrap();
    let secs = Duration::from_secs;
    let results = [
        report(1, secs(1), criterion_1),
        report(2, secs(10), criterion_2),
        report(3, secs(300), criterion_3),
        report(4, secs(900), criterion_4),
        report(5, secs(600), criterion_5),
        report(6, secs(900), criterion_6),
        report(7, secs(1800), criterion_7),
        report(8, secs(600), criterion_8),
        report(9, secs(900), criterion_9),
        report(10, secs(60), criterion_10),
        report(11, secs(600), criterion_11),
    ];
    let failed: Vec<usize> = (1..=11).filter(|i| !results[i - 1]).collect();
    assert!(failed.is_empty(), "criteria not met: {failed:?}");
}
