use bernfit::basis::BernsteinCurve;
use bernfit::config::RunConfig;
use bernfit::constraints::ShapeSpec;
use bernfit::data::FunctionalDataset;
use bernfit::functional::{fit_constrained_gls, FunctionalFit};
use bernfit::inference::{
    bootstrap_shape_test_functional, bootstrap_shape_test_scalar, projection_ci_functional,
    projection_ci_scalar, DEFAULT_CI_DRAWS, DEFAULT_TEST_DRAWS,
};
use bernfit::io::{companion_path, read_dataset, write_long_csv, write_wide_csv, DataFormat};
use bernfit::model::{functional_spec, sofr_basis, ModelKind};
use bernfit::qfosr::{fit_qfosr, QfosrFit, QfosrOptions};
use bernfit::selection::{cv_select_order, default_candidates, CvResult};
use bernfit::simulation::{
    generate_scenario, run_benchmark, BenchOptions, CoverageSetup, MetricTable, OrderChoice,
    ScenarioSpec, TestSetup,
};
use bernfit::sofr::SofrDesign;
use bernfit::{Error, Result};

use crate::report::{Curves, CvReport, Named, Report, Rss, Sink, Surface};
use crate::{BenchArgs, Cli, Command, FitArgs, ModelArgs, SimulateArgs};

fn parse_shape(s: &str) -> Result<ShapeSpec> {
    let parsed = if s.trim_start().starts_with('{') {
        serde_json::from_str(s)
    } else {
        serde_json::from_value(serde_json::json!({ "kind": s }))
    };
    parsed.map_err(|e| Error::Config(format!("invalid shape {s:?}: {e}")))
}

fn parse_model(s: &str) -> Result<ModelKind> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown model {s:?}")))
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    sink: Sink,
    data: Option<std::path::PathBuf>,
    format: DataFormat,
}

impl Ctx {
    fn model(&self) -> ModelKind {
        self.cfg.model.expect("model resolved before use")
    }

    fn dataset(&self) -> Result<FunctionalDataset> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs --data".into()))?;
        read_dataset(path, self.format)
    }

    /// Applies command-line overrides and checks the result.
    fn resolve(
        &mut self,
        model: Option<ModelKind>,
        order: Option<usize>,
        shape: Option<&str>,
    ) -> Result<()> {
        match (model, self.cfg.model) {
            (Some(m), Some(c)) if m != c => {
                return Err(Error::Config(format!(
                    "command is for {m:?} but the configuration names {c:?}"
                )))
            }
            (Some(m), _) => self.cfg.model = Some(m),
            (None, None) => {
                return Err(Error::Config(
                    "no model kind given (--model or config)".into(),
                ))
            }
            (None, Some(_)) => {}
        }
        if let Some(o) = order {
            self.cfg.order = Some(o);
            self.cfg.candidates = None;
        }
        if let Some(s) = shape {
            self.cfg.shape = Some(parse_shape(s)?);
        }
        self.cfg.validate()
    }

    fn order(
        &self,
        data: &FunctionalDataset,
        shape: Option<&ShapeSpec>,
    ) -> Result<(usize, Option<CvResult>)> {
        if let Some(o) = self.cfg.order {
            return Ok((o, None));
        }
        let kind = self.model();
        let candidates = self
            .cfg
            .candidates
            .clone()
            .unwrap_or_else(|| default_candidates(kind));
        let cv = cv_select_order(data, kind, shape, &candidates, self.cfg.folds, self.seed)?;
        log::info!("cross-validation chose order {}", cv.chosen);
        Ok((cv.chosen, Some(cv)))
    }

    fn report(&self, command: &str, data: &FunctionalDataset) -> Report {
        Report {
            command: command.into(),
            model: self.cfg.model,
            seed: self.seed,
            n_subjects: Some(data.n()),
            ..Report::default()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.common.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.common.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    let mut ctx = Ctx {
        seed: cli.common.seed.or(cfg.seed).unwrap_or(0),
        sink: Sink {
            results: cli
                .common
                .out
                .clone()
                .or_else(|| cfg.outputs.results.clone()),
            bands: cfg.outputs.bands.clone(),
        },
        data: cli.common.data.clone(),
        format: cli.common.format,
        cfg,
    };
    match &cli.command {
        Command::FitSofr(a) => fit(&mut ctx, ModelKind::Sofr, a),
        Command::FitFosr(a) => fit(&mut ctx, ModelKind::Fosr, a),
        Command::FitFlcm(a) => fit(&mut ctx, ModelKind::Flcm, a),
        Command::FitFofr(a) => fit(&mut ctx, ModelKind::Fofr, a),
        Command::FitQfosr(a) => fit(&mut ctx, ModelKind::Qfosr, a),
        Command::TestShape(a) => test_shape(&mut ctx, a),
        Command::Ci(a) => ci(&mut ctx, a),
        Command::CvOrder(a) => cv_order(&mut ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Bench(a) => bench(&mut ctx, a),
    }
}

fn command_name(kind: ModelKind) -> String {
    format!(
        "fit-{}",
        serde_json::to_value(kind)
            .expect("enum serializes")
            .as_str()
            .unwrap_or("?")
    )
}

fn functional_parts(report: &mut Report, fit: &FunctionalFit) -> Result<()> {
    report.coefficients = fit
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| Named {
            name: b.name.clone(),
            values: fit.block(k).to_vec(),
        })
        .collect();
    let mut curves: Vec<(String, BernsteinCurve)> = Vec::new();
    for (k, b) in fit.blocks.iter().enumerate() {
        if fit.tensor.is_some() && k == 1 {
            report.surface = Some(Surface::from_bernstein(&b.name, &fit.beta1_surface()?)?);
        } else {
            curves.push((b.name.clone(), fit.beta_curve(k)?));
        }
    }
    report.curves = Some(Curves::from_bernstein(&curves)?);
    report.rss = Some(Rss {
        raw: fit.rss_raw,
        whitened: Some(fit.rss_whitened),
    });
    report.certificate = fit.certificate.clone();
    Ok(())
}

fn qfosr_options(ctx: &Ctx, order: usize, band: bool) -> QfosrOptions {
    QfosrOptions {
        order,
        gls: ctx.cfg.gls(),
        block_shape: ctx.cfg.block_shape.clone(),
        ci: band.then(|| ctx.cfg.ci_options(ctx.seed)),
        ..QfosrOptions::default()
    }
}

fn qfosr_parts(report: &mut Report, q: QfosrFit) -> Result<()> {
    functional_parts(report, &q.fit)?;
    report.certificate = Some(q.certificate);
    report.rescale = Some(q.rescale);
    report.band = q.band;
    Ok(())
}

/// Quantile models choose their order on covariates rescaled as in the fit.
fn qfosr_data(data: &FunctionalDataset) -> Result<FunctionalDataset> {
    let mut d = data.clone();
    d.rescale_covariates()?;
    Ok(d)
}

fn fit(ctx: &mut Ctx, kind: ModelKind, a: &FitArgs) -> Result<()> {
    ctx.resolve(Some(kind), a.order, a.shape.as_deref())?;
    let data = ctx.dataset()?;
    let shape = ctx.cfg.shape.clone();
    let mut report = ctx.report(&command_name(kind), &data);
    report.shape = shape.clone();
    match kind {
        ModelKind::Sofr => {
            let (order, cv) = ctx.order(&data, shape.as_ref())?;
            let spec = sofr_basis(&data, order)?;
            let fit = SofrDesign::new(&data, &spec)?.fit(shape.as_ref())?;
            report.order = Some(order);
            report.cv = cv.as_ref().map(CvReport::from);
            report.coefficients = vec![
                Named {
                    name: "alpha".into(),
                    values: vec![fit.alpha],
                },
                Named {
                    name: "gamma".into(),
                    values: fit.gamma.clone(),
                },
                Named {
                    name: "beta".into(),
                    values: fit.beta_coefs.clone(),
                },
            ];
            report.curves = Some(Curves::from_bernstein(&[("beta".into(), fit.beta())])?);
            report.rss = Some(Rss {
                raw: fit.rss,
                whitened: None,
            });
            report.certificate = fit.certificate.clone();
            if a.ci {
                let opts = ctx.cfg.ci_options(ctx.seed);
                report.band = Some(projection_ci_scalar(&data, &spec, shape.as_ref(), &opts)?);
            }
        }
        ModelKind::Qfosr => {
            let (order, cv) = ctx.order(&qfosr_data(&data)?, None)?;
            report.order = Some(order);
            report.cv = cv.as_ref().map(CvReport::from);
            qfosr_parts(
                &mut report,
                fit_qfosr(&data, &qfosr_options(ctx, order, a.ci))?,
            )?;
        }
        _ => {
            let fk = kind.functional().expect("functional model");
            let (order, cv) = ctx.order(&data, shape.as_ref())?;
            let spec = functional_spec(&data, fk, order)?;
            let fit = fit_constrained_gls(&data, &spec, shape.as_ref(), &ctx.cfg.gls())?;
            report.order = Some(order);
            report.cv = cv.as_ref().map(CvReport::from);
            functional_parts(&mut report, &fit)?;
            if a.ci {
                let opts = ctx.cfg.ci_options(ctx.seed);
                report.band = Some(projection_ci_functional(
                    &data,
                    &spec,
                    shape.as_ref(),
                    &ctx.cfg.gls(),
                    &opts,
                )?);
            }
        }
    }
    ctx.sink.write(&report)
}

fn resolve_model_args(ctx: &mut Ctx, a: &ModelArgs) -> Result<()> {
    let model = a.model.as_deref().map(parse_model).transpose()?;
    ctx.resolve(model, a.order, a.shape.as_deref())
}

fn test_shape(ctx: &mut Ctx, a: &ModelArgs) -> Result<()> {
    resolve_model_args(ctx, a)?;
    let kind = ctx.model();
    if kind == ModelKind::Qfosr {
        return Err(Error::Config(
            "shape tests are not available for qfosr models".into(),
        ));
    }
    let null = ctx
        .cfg
        .null_shape
        .clone()
        .or_else(|| ctx.cfg.shape.clone())
        .ok_or_else(|| {
            Error::Config("test-shape needs a null shape (--shape or null_shape)".into())
        })?;
    let data = ctx.dataset()?;
    let (order, cv) = ctx.order(&data, Some(&null))?;
    let opts = ctx.cfg.test_options(ctx.seed);
    let test = match kind.functional() {
        None => bootstrap_shape_test_scalar(&data, &sofr_basis(&data, order)?, &null, &opts)?,
        Some(fk) => bootstrap_shape_test_functional(
            &data,
            &functional_spec(&data, fk, order)?,
            &null,
            &opts,
        )?,
    };
    let mut report = ctx.report("test-shape", &data);
    report.order = Some(order);
    report.cv = cv.as_ref().map(CvReport::from);
    report.shape = Some(null);
    report.test = Some(test);
    ctx.sink.write(&report)
}

fn ci(ctx: &mut Ctx, a: &ModelArgs) -> Result<()> {
    resolve_model_args(ctx, a)?;
    let kind = ctx.model();
    let data = ctx.dataset()?;
    let shape = ctx.cfg.shape.clone();
    let mut report = ctx.report("ci", &data);
    report.shape = shape.clone();
    let opts = ctx.cfg.ci_options(ctx.seed);
    match kind.functional() {
        _ if kind == ModelKind::Qfosr => {
            let (order, cv) = ctx.order(&qfosr_data(&data)?, None)?;
            report.order = Some(order);
            report.cv = cv.as_ref().map(CvReport::from);
            let q = fit_qfosr(&data, &qfosr_options(ctx, order, true))?;
            report.certificate = Some(q.certificate);
            report.band = q.band;
        }
        None => {
            let (order, cv) = ctx.order(&data, shape.as_ref())?;
            report.order = Some(order);
            report.cv = cv.as_ref().map(CvReport::from);
            report.band = Some(projection_ci_scalar(
                &data,
                &sofr_basis(&data, order)?,
                shape.as_ref(),
                &opts,
            )?);
        }
        Some(fk) => {
            let (order, cv) = ctx.order(&data, shape.as_ref())?;
            report.order = Some(order);
            report.cv = cv.as_ref().map(CvReport::from);
            let spec = functional_spec(&data, fk, order)?;
            report.band = Some(projection_ci_functional(
                &data,
                &spec,
                shape.as_ref(),
                &ctx.cfg.gls(),
                &opts,
            )?);
        }
    }
    ctx.sink.write(&report)
}

fn cv_order(ctx: &mut Ctx, a: &ModelArgs) -> Result<()> {
    resolve_model_args(ctx, a)?;
    if ctx.cfg.order.is_some() {
        return Err(Error::Config(
            "cv-order chooses the order; do not fix one".into(),
        ));
    }
    let data = ctx.dataset()?;
    let shape = ctx.cfg.shape.clone();
    let (order, cv) = if ctx.model() == ModelKind::Qfosr {
        ctx.order(&qfosr_data(&data)?, None)?
    } else {
        ctx.order(&data, shape.as_ref())?
    };
    let mut report = ctx.report("cv-order", &data);
    report.shape = shape;
    report.order = Some(order);
    report.cv = cv.as_ref().map(CvReport::from);
    ctx.sink.write(&report)
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let out = ctx
        .sink
        .results
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs --out for the dataset file".into()))?;
    let data = generate_scenario(&ScenarioSpec::new(a.scenario, a.n, ctx.seed), a.rep)?;
    match ctx.format {
        DataFormat::WideCsv => write_wide_csv(&data, out),
        DataFormat::LongCsv => write_long_csv(&data, out, &companion_path(out)),
    }
}

fn bench(ctx: &mut Ctx, a: &BenchArgs) -> Result<()> {
    let model = a.scenario.model();
    ctx.resolve(Some(model), a.order, None)?;
    let cfg = &ctx.cfg;
    let order = match cfg.order {
        Some(order) => OrderChoice::Fixed { order },
        None => OrderChoice::Cv {
            candidates: cfg
                .candidates
                .clone()
                .unwrap_or_else(|| default_candidates(model)),
            folds: cfg.folds,
        },
    };
    let fixed = || {
        cfg.order
            .ok_or_else(|| Error::Config("coverage and tests in bench need a fixed --order".into()))
    };
    let coverage = if a.coverage {
        Some(CoverageSetup {
            level: cfg.level,
            draws: cfg.draws.unwrap_or(DEFAULT_CI_DRAWS),
            order: fixed()?,
        })
    } else {
        None
    };
    let test = match &a.test_null {
        Some(s) => Some(TestSetup {
            null: parse_shape(s)?,
            draws: cfg.draws.unwrap_or(DEFAULT_TEST_DRAWS),
            alpha: a.alpha,
            order: fixed()?,
        }),
        None => None,
    };
    let opts = BenchOptions {
        reps: a.reps,
        estimate: true,
        order,
        gls: cfg.gls(),
        shape: cfg.shape.clone(),
        coverage,
        test,
    };
    let row = run_benchmark(&ScenarioSpec::new(a.scenario, a.n, ctx.seed), &opts)?;
    let report = Report {
        command: "bench".into(),
        model: Some(model),
        seed: ctx.seed,
        order: cfg.order,
        shape: cfg.shape.clone(),
        table: Some(MetricTable {
            rows: vec![row],
            seed: ctx.seed,
        }),
        ..Report::default()
    };
    ctx.sink.write(&report)
}
