//! The outer counterexample-guided loop: synthesize against the surrogate,
//! falsify on the simulator, refine the error model, repeat.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::falsifier::{falsify, FalsifyConfig, Problem, Sample};
use crate::learner::{build_error_model, model_equal, ComponentFit, LearnConfig};
use crate::sim::{Emulator, Scenario};
use crate::spec::SafetyFormula;
use crate::surrogate::SurrogateModel;
use crate::synth::{synthesize, RestartLog, SynthConfig};
use crate::types::{IntervalBox, ScenarioId, Trace};

/// Deterministic sub-seed from a hash of the little-endian serialized inputs.
pub fn derive_seed(master_seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub max_outer_iterations: usize,
    pub master_seed: u64,
    pub p_init: Vec<f64>,
    pub param_bounds: IntervalBox,
    pub falsify: FalsifyConfig,
    pub learn: LearnConfig,
    pub synth: SynthConfig,
    /// Tolerance for the model-stagnation check.
    pub stagnation_tol: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self::default_for(ScenarioId::LaneKeeping)
    }
}

impl LoopConfig {
    pub fn default_for(id: ScenarioId) -> Self {
        let (p_init, param_bounds, max_outer_iterations) = match id {
            ScenarioId::LaneKeeping => (
                vec![-1.0, -1.0],
                IntervalBox { lo: vec![-6.0, -3.0], hi: vec![0.0, 0.0] },
                5,
            ),
            ScenarioId::Braking => (
                vec![25.0, 7.0],
                IntervalBox { lo: vec![5.0, 3.0], hi: vec![30.0, 12.0] },
                6,
            ),
        };
        // Braking residuals span meters, so the width target is never met
        // and the cluster cap decides how tight the far-range bounds get.
        let learn = match id {
            ScenarioId::LaneKeeping => LearnConfig::default(),
            ScenarioId::Braking => LearnConfig { k_max: 12, ..LearnConfig::default() },
        };
        LoopConfig {
            max_outer_iterations,
            master_seed: 0,
            p_init,
            param_bounds,
            falsify: FalsifyConfig::default(),
            learn,
            synth: SynthConfig::default(),
            stagnation_tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations < 1 {
            return Err(Error::Validation("max_outer_iterations must be >= 1".into()));
        }
        self.param_bounds.validate()?;
        if self.p_init.len() != self.param_bounds.dim() {
            return Err(Error::Validation(format!(
                "p_init has {} entries but param_bounds has {} dimensions",
                self.p_init.len(),
                self.param_bounds.dim()
            )));
        }
        if !self.param_bounds.contains(&self.p_init) {
            return Err(Error::Validation("p_init must lie inside param_bounds".into()));
        }
        self.learn.validate()?;
        self.synth.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    SynthFailure,
    ModelStagnation,
    BudgetExhausted,
    /// A stage returned an error; partial records are kept.
    Fault,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::SynthFailure => "synth_failure",
            Outcome::ModelStagnation => "model_stagnation",
            Outcome::BudgetExhausted => "budget_exhausted",
            Outcome::Fault => "fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub synth_success: bool,
    pub synthesized_p: Vec<f64>,
    pub synth_objective: f64,
    pub synth_evaluations: usize,
    pub bank_size: usize,
    pub falsify_evaluations: usize,
    pub counterexamples: usize,
    pub xi_total: usize,
    pub min_robustness: f64,
    pub clusters_per_component: Vec<usize>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiSummary {
    pub traces: usize,
    pub steps: usize,
    pub min_robustness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: ScenarioId,
    pub master_seed: u64,
    pub outcome: Outcome,
    pub final_p: Vec<f64>,
    pub final_model: SurrogateModel,
    pub iterations: Vec<IterationRecord>,
    pub xi: XiSummary,
    pub total_simulations: usize,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl RunReport {
    /// JSON with every wall-time field zeroed, for reproducibility checks.
    pub fn to_json_without_timing(&self) -> Result<String> {
        let mut r = self.clone();
        r.wall_time_s = 0.0;
        for it in &mut r.iterations {
            it.wall_time_s = 0.0;
        }
        Ok(serde_json::to_string_pretty(&r)?)
    }
}

/// A counterexample trace with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub iteration: usize,
    pub point: Vec<f64>,
    pub robustness: f64,
    pub trace: Trace,
}

/// Everything a run produced, for export.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub counterexamples: Vec<Counterexample>,
    /// Learner fits of the final model, with datapoint cluster labels.
    pub fits: Vec<ComponentFit>,
    pub synth_logs: Vec<Vec<RestartLog>>,
    pub falsify_histories: Vec<Vec<Sample>>,
}

pub struct LoopInputs<'a> {
    pub scenario: &'a Scenario,
    pub emulator: &'a Emulator,
    pub phi_s: &'a SafetyFormula,
    pub phi_m: &'a SafetyFormula,
}

/// Run the loop to one of its outcomes. Deterministic given the config,
/// apart from wall-time fields.
pub fn run_loop(inputs: &LoopInputs<'_>, cfg: &LoopConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    inputs.scenario.validate()?;
    let start = Instant::now();
    let scenario = inputs.scenario;
    let mut model = SurrogateModel::zero_error(scenario);
    let mut warnings = Vec::new();
    if cfg.falsify.budget == 0 {
        let w = "falsify budget is 0: success will be declared without any simulation".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    let mut art = RunArtifacts {
        report: RunReport {
            scenario: scenario.id,
            master_seed: cfg.master_seed,
            outcome: Outcome::BudgetExhausted,
            final_p: cfg.p_init.clone(),
            final_model: model.clone(),
            iterations: Vec::new(),
            xi: XiSummary { traces: 0, steps: 0, min_robustness: f64::INFINITY },
            total_simulations: 0,
            warnings,
            error: None,
            wall_time_s: 0.0,
        },
        counterexamples: Vec::new(),
        fits: Vec::new(),
        synth_logs: Vec::new(),
        falsify_histories: Vec::new(),
    };
    let mut p = cfg.p_init.clone();
    for iteration in 1..=cfg.max_outer_iterations {
        match iterate(inputs, cfg, iteration, &mut p, &mut model, &mut art) {
            Ok(Some(outcome)) => {
                art.report.outcome = outcome;
                break;
            }
            Ok(None) => {}
            Err(e) => {
                log::error!("iteration {iteration} failed: {e}");
                art.report.outcome = Outcome::Fault;
                art.report.error = Some(e.to_string());
                break;
            }
        }
    }
    art.report.final_p = p;
    art.report.final_model = model;
    art.report.wall_time_s = start.elapsed().as_secs_f64();
    log::info!("outcome {} after {} iterations", art.report.outcome.as_str(), art.report.iterations.len());
    Ok(art)
}

fn iterate(
    inputs: &LoopInputs<'_>,
    cfg: &LoopConfig,
    iteration: usize,
    p: &mut Vec<f64>,
    model: &mut SurrogateModel,
    art: &mut RunArtifacts,
) -> Result<Option<Outcome>> {
    let t0 = Instant::now();
    let idx = iteration as u64;
    let synth_cfg = SynthConfig { seed: derive_seed(cfg.master_seed, "synth", idx), ..cfg.synth.clone() };
    let syn = synthesize(model, inputs.scenario, inputs.phi_m, p, &cfg.param_bounds, &synth_cfg)?;
    art.synth_logs.push(syn.log.clone());
    let mut rec = IterationRecord {
        iteration,
        synth_success: syn.success,
        synthesized_p: syn.params.clone(),
        synth_objective: syn.objective,
        synth_evaluations: syn.objective_evaluations,
        bank_size: syn.bank.entries.len(),
        falsify_evaluations: 0,
        counterexamples: 0,
        xi_total: art.counterexamples.len(),
        min_robustness: f64::INFINITY,
        clusters_per_component: model.error.iter().map(|c| c.clusters.len()).collect(),
        wall_time_s: 0.0,
    };
    log::info!("iteration {iteration}: synthesis {} p={:?} J={:.4}", if syn.success { "ok" } else { "failed" }, syn.params, syn.objective);
    if !syn.success {
        rec.wall_time_s = t0.elapsed().as_secs_f64();
        art.report.iterations.push(rec);
        return Ok(Some(Outcome::SynthFailure));
    }
    *p = syn.params;

    let problem = Problem { scenario: inputs.scenario, emulator: inputs.emulator, params: p, spec: inputs.phi_s };
    let fres = falsify(&problem, &cfg.falsify, derive_seed(cfg.master_seed, "falsify", idx))?;
    art.report.total_simulations += fres.evaluations;
    rec.falsify_evaluations = fres.evaluations;
    rec.counterexamples = fres.counterexamples.len();
    rec.min_robustness = fres.min_robustness;
    log::info!(
        "iteration {iteration}: {} counterexamples in {} simulations (min robustness {:.4})",
        fres.counterexamples.len(),
        fres.evaluations,
        fres.min_robustness
    );
    let found = !fres.counterexamples.is_empty();
    for (trace, point) in fres.counterexamples.iter().zip(&fres.counterexample_points) {
        let robustness = inputs.phi_s.robustness(trace, 0)?;
        art.report.xi.steps += trace.horizon();
        art.report.xi.min_robustness = art.report.xi.min_robustness.min(robustness);
        art.counterexamples.push(Counterexample { iteration, point: point.clone(), robustness, trace: trace.clone() });
    }
    art.report.xi.traces = art.counterexamples.len();
    rec.xi_total = art.counterexamples.len();
    art.falsify_histories.push(fres.history);
    if !found {
        rec.wall_time_s = t0.elapsed().as_secs_f64();
        art.report.iterations.push(rec);
        return Ok(Some(Outcome::Success));
    }

    let traces: Vec<Trace> = art.counterexamples.iter().map(|c| c.trace.clone()).collect();
    let learn_cfg = LearnConfig { seed: derive_seed(cfg.master_seed, "learn", idx), ..cfg.learn.clone() };
    // Always rebuild from the expert model so the fit depends on the full set only.
    let expert = SurrogateModel::zero_error(inputs.scenario);
    let (new_model, fits) = build_error_model(&traces, &expert, &learn_cfg)?;
    art.fits = fits;
    rec.clusters_per_component = new_model.error.iter().map(|c| c.clusters.len()).collect();
    rec.wall_time_s = t0.elapsed().as_secs_f64();
    art.report.iterations.push(rec);
    let stagnant = model_equal(&new_model, model, cfg.stagnation_tol);
    *model = new_model;
    if stagnant {
        return Ok(Some(Outcome::ModelStagnation));
    }
    Ok(None)
}
