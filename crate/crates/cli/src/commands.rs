use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hte_core::analysis::{explore_validate, CurveTable, SubgroupDef, Workflow, WorkflowConfig, LONG_CSV_HEADER};
use hte_core::ate::{ate_aipw, ate_ipw, ate_matching, ate_regression, match_pairs, AteEstimate, AteTag, MatchedPairs};
use hte_core::base_learners::CrossFitPlan;
use hte_core::data::{encode, format_number, load_csv, write_encoded_csv, ColumnData, Dataset, Schema};
use hte_core::dgp::generate;
use hte_core::nuisance::{fit_nuisance, overlap_report, NuisanceModels, OverlapReport};
use hte_core::sensitivity::{gamma_grid, gamma_star_for_pairs, SensitivityResult};
use hte_core::stability::{
    envelope_policy, fit_suite, run_suite, stability_report, Decision, EnvelopeMode, EstimatorFailure, StabilitySummary,
};
use serde::Serialize;

use crate::config::Loaded;
use crate::CliError;

pub struct Ctx {
    pub cfg: Loaded,
    pub out: PathBuf,
}

impl Ctx {
    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        Ok(BufWriter::new(f))
    }

    fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
        let mut w = self.create(name)?;
        writeln!(w, "# {}", self.cfg.provenance())?;
        Ok(csv::Writer::from_writer(w))
    }

    fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, body).map_err(|e| CliError::Internal(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn load(&self) -> Result<Dataset, CliError> {
        let path = self.cfg.input()?;
        if !path.is_file() {
            return Err(CliError::User(format!("input file {} not found", path.display())));
        }
        Ok(load_csv(&path, self.cfg.schema()?)?)
    }
}

#[derive(Serialize)]
struct Header<'a> {
    config_sha256: &'a str,
    seed: u64,
}

impl Ctx {
    fn header(&self) -> Header<'_> {
        Header { config_sha256: &self.cfg.sha256, seed: self.cfg.seed }
    }
}

fn n_clusters(ds: &Dataset) -> usize {
    ds.table().cluster_groups().len()
}

#[derive(Serialize)]
struct FitSummary<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    n_units: usize,
    n_treated: usize,
    n_clusters: usize,
    estimators: Vec<String>,
    failures: Vec<EstimatorFailure>,
    overlap: OverlapReport,
}

pub fn fit(ctx: &Ctx, export_encoded: bool) -> Result<String, CliError> {
    let ds = ctx.load()?;
    let suite = ctx.cfg.suite()?;
    let fitted = fit_suite(&ds, &suite)?;
    let nm = fit_nuisance(&ds, &ctx.cfg.nuisance(), false, None)?;
    let summary = FitSummary {
        header: ctx.header(),
        n_units: ds.n_rows(),
        n_treated: ds.treated_rows().len(),
        n_clusters: n_clusters(&ds),
        estimators: fitted.models.iter().map(|m| m.name()).collect(),
        failures: fitted.failures,
        overlap: overlap_report(&nm, &ds)?,
    };
    ctx.json("fit_summary.json", &summary)?;
    if export_encoded {
        let (x, plan) = encode(&ds, true)?;
        let mut w = ctx.create("encoded.csv")?;
        writeln!(w, "# {}", ctx.cfg.provenance())?;
        write_encoded_csv(w, &plan, &x)?;
    }
    Ok(format!(
        "fit: {} estimators fitted, {} failed, {} units",
        summary.estimators.len(),
        summary.failures.len(),
        summary.n_units
    ))
}

fn matching_features(ctx: &Ctx, ds: &Dataset) -> Vec<String> {
    match &ctx.cfg.config.ate.matching_features {
        Some(f) => f.clone(),
        None => ds
            .table()
            .columns()
            .iter()
            .filter(|c| matches!(c.data, ColumnData::Continuous(_)))
            .map(|c| c.name.clone())
            .collect(),
    }
}

#[derive(Serialize)]
struct SensitivitySummary {
    gamma_star: Option<f64>,
    lower_odds: Option<f64>,
    alpha: f64,
    exact: bool,
    n_pairs: usize,
    n_nonzero: usize,
    t_plus: f64,
}

impl From<&SensitivityResult> for SensitivitySummary {
    fn from(r: &SensitivityResult) -> Self {
        SensitivitySummary {
            gamma_star: r.gamma_star,
            lower_odds: r.lower_odds,
            alpha: r.alpha,
            exact: r.exact,
            n_pairs: r.n_pairs,
            n_nonzero: r.n_nonzero,
            t_plus: r.t_plus,
        }
    }
}

#[derive(Serialize)]
struct AteSummary<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    n_units: usize,
    crossfit: bool,
    overlap: Option<OverlapReport>,
    estimates: Vec<AteEstimate>,
    sensitivity: Option<SensitivitySummary>,
}

pub fn ate(ctx: &Ctx, sensitivity: bool) -> Result<String, CliError> {
    let ds = ctx.load()?;
    let sec = &ctx.cfg.config.ate;
    if sec.estimators.is_empty() {
        return Err(CliError::User("ate.estimators is empty".into()));
    }
    let needs_nuisance = sec.estimators.iter().any(|t| *t != AteTag::MATCH);
    let nm: Option<NuisanceModels> = if needs_nuisance {
        let plan = match sec.crossfit {
            true => Some(CrossFitPlan::new(ds.table(), ctx.cfg.config.suite.crossfit_folds, ctx.cfg.stream("ate_folds"))?),
            false => None,
        };
        Some(fit_nuisance(&ds, &ctx.cfg.nuisance(), false, plan.as_ref())?)
    } else {
        None
    };
    let needs_pairs = sensitivity || sec.estimators.contains(&AteTag::MATCH);
    let pairs: Option<MatchedPairs> = if needs_pairs { Some(match_pairs(&ds, &matching_features(ctx, &ds))?) } else { None };

    let mut estimates = Vec::new();
    for &tag in &sec.estimators {
        let boot = ctx.cfg.boot(&format!("bootstrap_{tag}"));
        let est = match (tag, &nm, &pairs) {
            (AteTag::MATCH, _, Some(p)) => ate_matching(p, &boot)?,
            (AteTag::IPW, Some(nm), _) => ate_ipw(&ds, nm, &boot)?,
            (AteTag::REG, Some(nm), _) => ate_regression(&ds, nm, &boot)?,
            (AteTag::AIPW, Some(nm), _) => ate_aipw(&ds, nm, &boot)?,
            _ => unreachable!("inputs are prepared for every requested estimator"),
        };
        estimates.push(est);
    }

    let mut sens_summary = None;
    if sensitivity {
        let s = &ctx.cfg.config.sensitivity;
        let grid = gamma_grid(s.gamma_max, s.gamma_step)?;
        let res = gamma_star_for_pairs(pairs.as_ref().expect("pairs computed"), s.alpha, &grid, s.mode)?;
        let mut w = ctx.csv("sensitivity.csv")?;
        w.write_record(["gamma", "p_upper"])?;
        for p in &res.grid {
            w.write_record([format_number(p.gamma), format_number(p.p_upper)])?;
        }
        w.flush()?;
        sens_summary = Some(SensitivitySummary::from(&res));
    }

    let line = estimates.iter().map(|e| format!("{} {:.4}", e.tag, e.point)).collect::<Vec<_>>().join(", ");
    let summary = AteSummary {
        header: ctx.header(),
        n_units: ds.n_rows(),
        crossfit: sec.crossfit,
        overlap: nm.as_ref().map(|nm| overlap_report(nm, &ds)).transpose()?,
        estimates,
        sensitivity: sens_summary,
    };
    ctx.json("ate.json", &summary)?;
    Ok(format!("ate: {line}"))
}

#[derive(Serialize)]
struct Envelope {
    mode: EnvelopeMode,
    threshold: f64,
    counts: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct StabilityOutput<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    estimators: Vec<String>,
    failures: Vec<EstimatorFailure>,
    summary: StabilitySummary,
    envelope: Envelope,
}

pub fn stability(ctx: &Ctx) -> Result<String, CliError> {
    let ds = ctx.load()?;
    let sec = &ctx.cfg.config.stability;
    let run = run_suite(&ds, &ctx.cfg.suite()?, ds.table())?;
    let m = &run.matrix;
    let report = stability_report(m, sec.spread_threshold)?;
    let decisions = envelope_policy(m, sec.envelope, sec.decision_threshold);

    let mut w = ctx.csv("cate_matrix.csv")?;
    w.write_record(std::iter::once("unit_id").chain(m.names().iter().map(String::as_str)))?;
    for (id, row) in m.unit_ids().iter().zip(m.rows()) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(|v| format_number(*v))))?;
    }
    w.flush()?;

    let mut w = ctx.csv("stability_report.csv")?;
    w.write_record(["unit_id", "min", "median", "max", "spread", "sd", "sign_agreement", "stable"])?;
    for u in &report.units {
        let nums = [u.min, u.median, u.max, u.spread, u.sd, u.sign_agreement].map(format_number);
        w.write_record(std::iter::once(u.unit_id.clone()).chain(nums).chain([u.stable.to_string()]))?;
    }
    w.flush()?;

    let mut w = ctx.csv("decisions.csv")?;
    w.write_record(["unit_id", "min", "max", "decision"])?;
    let mut counts: BTreeMap<String, usize> =
        [Decision::Treat, Decision::Withhold, Decision::Abstain].iter().map(|d| (d.to_string(), 0)).collect();
    for (u, d) in report.units.iter().zip(&decisions) {
        w.write_record([u.unit_id.clone(), format_number(u.min), format_number(u.max), d.to_string()])?;
        *counts.entry(d.to_string()).or_default() += 1;
    }
    w.flush()?;

    let out = StabilityOutput {
        header: ctx.header(),
        estimators: m.names().to_vec(),
        failures: run.failures.clone(),
        summary: report.summary.clone(),
        envelope: Envelope { mode: sec.envelope, threshold: sec.decision_threshold, counts },
    };
    ctx.json("summary.json", &out)?;
    Ok(format!(
        "stability: {} units x {} estimators, {} stable, {} failed",
        m.n_units(),
        m.n_estimators(),
        report.summary.n_stable,
        run.failures.len()
    ))
}

fn write_curves(ctx: &Ctx, name: &str, curves: &[CurveTable]) -> Result<(), CliError> {
    let mut w = ctx.csv(name)?;
    w.write_record(LONG_CSV_HEADER)?;
    for c in curves {
        c.write_long_csv(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn workflow_config(ctx: &Ctx, ds: &Dataset) -> WorkflowConfig {
    let c = &ctx.cfg.config;
    WorkflowConfig {
        curve_features: c.curves.features.clone(),
        marginal_bins: c.curves.marginal_bins,
        pdp_points: c.curves.pdp_points,
        tag: c.subgroup.estimator,
        nuisance: ctx.cfg.nuisance(),
        crossfit_folds: c.suite.crossfit_folds,
        matching_features: matching_features(ctx, ds),
        boot: ctx.cfg.boot("bootstrap_subgroup"),
        alpha: c.subgroup.alpha,
    }
}

#[derive(Serialize)]
struct SubgroupOutput<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    exploration_units: usize,
    validation_units: usize,
    exploration_clusters: usize,
    validation_clusters: usize,
    estimators: Vec<String>,
    failures: Vec<EstimatorFailure>,
    hypotheses: Vec<hte_core::analysis::HypothesisResult>,
}

pub fn subgroup(ctx: &Ctx) -> Result<String, CliError> {
    let ds = ctx.load()?;
    let hyps = ctx.cfg.config.subgroup.hypotheses.iter().map(|h| SubgroupDef::parse(h)).collect::<Result<Vec<_>, _>>()?;
    let report = explore_validate(&ds, ctx.cfg.seed, &ctx.cfg.suite()?, &hyps, &workflow_config(ctx, &ds))?;
    if !report.curves.is_empty() {
        write_curves(ctx, "curves.csv", &report.curves)?;
    }
    let validated = report.hypotheses.iter().filter(|h| h.validated).count();
    let n_hyp = report.hypotheses.len();
    ctx.json(
        "subgroup.json",
        &SubgroupOutput {
            header: ctx.header(),
            exploration_units: report.exploration_units,
            validation_units: report.validation_units,
            exploration_clusters: report.exploration_clusters,
            validation_clusters: report.validation_clusters,
            estimators: report.estimators,
            failures: report.failures,
            hypotheses: report.hypotheses,
        },
    )?;
    Ok(format!("subgroup: {validated} of {n_hyp} hypotheses validated"))
}

pub fn pdp(ctx: &Ctx) -> Result<String, CliError> {
    let ds = ctx.load()?;
    let sec = &ctx.cfg.config.curves;
    if sec.features.is_empty() {
        return Err(CliError::User("curves.features is empty".into()));
    }
    let mut wf = Workflow::new(&ds, ctx.cfg.seed)?;
    wf.fit_suite(&ctx.cfg.suite()?)?;
    let mut curves = Vec::new();
    for f in &sec.features {
        curves.extend(wf.curves(f, sec.marginal_bins, sec.pdp_points)?);
    }
    write_curves(ctx, "pdp.csv", &curves)?;
    Ok(format!(
        "pdp: {} features x {} estimators on {} exploration units",
        sec.features.len(),
        wf.models().len(),
        wf.exploration().n_rows()
    ))
}

fn simulate_schema(ctx: &Ctx) -> Schema {
    ctx.cfg.config.schema.clone().unwrap_or_else(|| Schema {
        cluster: Some("school".into()),
        id: Some("unit_id".into()),
        ..Schema::new("y", "z")
    })
}

pub fn simulate(ctx: &Ctx) -> Result<String, CliError> {
    let mut spec = ctx.cfg.config.simulate.clone().ok_or_else(|| CliError::User("config has no [simulate] table".into()))?;
    spec.seed = ctx.cfg.seed;
    let s = generate(&spec)?;
    let w = ctx.create("data.csv")?;
    s.dataset.write_csv(w, &simulate_schema(ctx), Some(&ctx.cfg.provenance()))?;
    let mut w = ctx.csv("truth.csv")?;
    w.write_record(["unit_id", "true_tau", "true_e"])?;
    for (i, id) in s.dataset.unit_ids().iter().enumerate() {
        w.write_record([id.clone(), format_number(s.tau[i]), format_number(s.e[i])])?;
    }
    w.flush()?;
    Ok(format!("simulate: {} units of {}, mean tau {:.4}", spec.n, spec.kind, s.mean_tau()))
}

pub fn output_dir(cfg: &Loaded, flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => cfg.resolve(&cfg.config.output_dir),
    }
}
