//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported call returns a JSON string; the page parses it and draws.

use hte_core::base_learners::LearnerSpec;
use hte_core::dgp::{generate, score, DgpKind, DgpSpec, Metric};
use hte_core::nuisance::NuisanceConfig;
use hte_core::sensitivity::{gamma_grid, gamma_star, PValueMode};
use hte_core::stability::{envelope_policy, run_suite, stability_report, Decision, EnvelopeMode, EstimateMatrix, SuiteSpec};
use hte_core::stats;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Units shown in the scatter plot.
const PLOT_UNITS: usize = 300;

#[derive(Serialize)]
pub struct EstimatorScore {
    pub name: String,
    pub rmse: f64,
}

#[derive(Serialize)]
pub struct SimulationView {
    pub kind: String,
    pub n: usize,
    pub true_ate: f64,
    pub scores: Vec<EstimatorScore>,
    pub failures: Vec<String>,
    pub x1: Vec<f64>,
    pub truth: Vec<f64>,
    pub lo: Vec<f64>,
    pub median: Vec<f64>,
    pub hi: Vec<f64>,
    pub mean_spread: f64,
    pub mean_sign_agreement: f64,
}

#[derive(Serialize)]
pub struct DecisionView {
    pub treat: usize,
    pub withhold: usize,
    pub abstain: usize,
    /// Among units the policy decides on, the share whose true effect lies
    /// on the same side of the threshold.
    pub accuracy: Option<f64>,
}

/// Suite sized for an interactive page: small ensembles, ridge nuisances.
pub fn demo_suite(seed: u64) -> SuiteSpec {
    let nuisance = NuisanceConfig::new(LearnerSpec::ridge(1.0), LearnerSpec::ridge(1.0));
    let mut suite = SuiteSpec::default_suite(LearnerSpec::forest_with(40, 5), LearnerSpec::gbt_with(40, 0.1, 3), nuisance);
    suite.causal_forest.n_trees = 100;
    suite.with_seed(seed)
}

/// Fitted suite on one simulated sample, kept for repeated policy queries.
pub struct Simulation {
    pub matrix: EstimateMatrix,
    pub tau: Vec<f64>,
    pub view: SimulationView,
}

pub fn simulate(kind: &str, n: usize, seed: u64) -> Result<Simulation, String> {
    let kind: DgpKind = kind.parse().map_err(|e| format!("{e}"))?;
    let sample = generate(&DgpSpec::new(kind, n).with_seed(seed)).map_err(|e| e.to_string())?;
    let table = sample.dataset.table().clone();
    let run = run_suite(&sample.dataset, &demo_suite(seed), &table).map_err(|e| e.to_string())?;
    let m = run.matrix;
    let report = stability_report(&m, None).map_err(|e| e.to_string())?;
    let scores = m
        .names()
        .iter()
        .map(|name| {
            let col = m.column(name).map_err(|e| e.to_string())?;
            let rmse = score(&col, &sample.tau, Metric::Rmse).map_err(|e| e.to_string())?;
            Ok(EstimatorScore { name: name.clone(), rmse })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let x1 = table.column("x1").map_err(|e| e.to_string())?;
    let shown = n.min(PLOT_UNITS);
    let rows = &m.rows()[..shown];
    let view = SimulationView {
        kind: kind.to_string(),
        n,
        true_ate: sample.mean_tau(),
        scores,
        failures: run.failures.iter().map(|f| format!("{}: {}", f.name, f.message)).collect(),
        x1: (0..shown).map(|i| x1.numeric_value(i).unwrap_or(f64::NAN)).collect(),
        truth: sample.tau[..shown].to_vec(),
        lo: rows.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect(),
        median: rows.iter().map(|r| stats::median(r)).collect(),
        hi: rows.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect(),
        mean_spread: report.summary.mean_spread,
        mean_sign_agreement: report.summary.mean_sign_agreement,
    };
    Ok(Simulation { matrix: m, tau: sample.tau, view })
}

pub fn decide(sim: &Simulation, mode: EnvelopeMode, threshold: f64) -> DecisionView {
    let decisions = envelope_policy(&sim.matrix, mode, threshold);
    let count = |d: Decision| decisions.iter().filter(|&&x| x == d).count();
    let (mut decided, mut right) = (0usize, 0usize);
    for (d, &t) in decisions.iter().zip(&sim.tau) {
        match d {
            Decision::Treat => right += usize::from(t > threshold),
            Decision::Withhold => right += usize::from(t <= threshold),
            Decision::Abstain => continue,
        }
        decided += 1;
    }
    DecisionView {
        treat: count(Decision::Treat),
        withhold: count(Decision::Withhold),
        abstain: count(Decision::Abstain),
        accuracy: (decided > 0).then(|| right as f64 / decided as f64),
    }
}

/// Parse whitespace- or comma-separated numbers.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

fn parse_mode(mode: &str) -> Result<EnvelopeMode, String> {
    match mode {
        "pessimistic" => Ok(EnvelopeMode::Pessimistic),
        "optimistic" => Ok(EnvelopeMode::Optimistic),
        other => Err(format!("unknown envelope mode {other:?}")),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub struct Demo {
    sim: Option<Simulation>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo { sim: None }
    }

    /// Simulate `n` units, fit the estimator suite and return the view.
    pub fn simulate(&mut self, kind: &str, n: usize, seed: u32) -> Result<String, JsValue> {
        let sim = simulate(kind, n, u64::from(seed)).map_err(|e| JsValue::from_str(&e))?;
        let out = to_json(&sim.view)?;
        self.sim = Some(sim);
        Ok(out)
    }

    /// Envelope decisions on the last simulation.
    pub fn decide(&self, mode: &str, threshold: f64) -> Result<String, JsValue> {
        let sim = self.sim.as_ref().ok_or_else(|| JsValue::from_str("run a simulation first"))?;
        let mode = parse_mode(mode).map_err(|e| JsValue::from_str(&e))?;
        to_json(&decide(sim, mode, threshold))
    }
}

impl Default for Demo {
    fn default() -> Self {
        Demo::new()
    }
}

/// Signed-rank sensitivity curve for matched-pair differences.
#[wasm_bindgen]
pub fn sensitivity(differences: &str, gamma_max: f64, step: f64, alpha: f64) -> Result<String, JsValue> {
    let err = |e: String| JsValue::from_str(&e);
    let d = parse_numbers(differences).map_err(err)?;
    let grid = gamma_grid(gamma_max, step).map_err(|e| err(e.to_string()))?;
    let r = gamma_star(&d, alpha, &grid, PValueMode::Auto).map_err(|e| err(e.to_string()))?;
    to_json(&r)
}
