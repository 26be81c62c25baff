//! Simulation-based falsification: search initial conditions and
//! environment parameters for closed-loop traces that violate the
//! simulator specification.

pub mod bayesopt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{simulate, Emulator, Scenario};
use crate::spec::SafetyFormula;
use crate::types::{IntervalBox, Trace};

pub use bayesopt::{bayesopt_propose, BoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BayesOpt,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FalsifyConfig {
    pub method: Method,
    pub budget: usize,
    /// Stop once this many counterexamples have been collected.
    pub early_stop_count: usize,
    pub bo: BoConfig,
}

impl Default for FalsifyConfig {
    fn default() -> Self {
        FalsifyConfig {
            method: Method::BayesOpt,
            budget: 300,
            early_stop_count: 20,
            bo: BoConfig::default(),
        }
    }
}

/// The falsifier's search domain: initial conditions then environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub bbox: IntervalBox,
    pub names: Vec<String>,
}

impl SearchSpace {
    pub fn of(scenario: &Scenario) -> Self {
        SearchSpace {
            bbox: scenario.search_box(),
            names: scenario.search_names().into_iter().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub point: Vec<f64>,
    /// `+inf` when the simulation faulted.
    pub robustness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifyResult {
    pub counterexamples: Vec<Trace>,
    /// Search points of the counterexamples, aligned with `counterexamples`.
    pub counterexample_points: Vec<Vec<f64>>,
    pub min_robustness: f64,
    pub evaluations: usize,
    pub history: Vec<Sample>,
    pub faults: usize,
}

impl FalsifyResult {
    fn empty() -> Self {
        FalsifyResult {
            counterexamples: Vec::new(),
            counterexample_points: Vec::new(),
            min_robustness: f64::INFINITY,
            evaluations: 0,
            history: Vec::new(),
            faults: 0,
        }
    }

    /// 1-based index of the first violating evaluation.
    pub fn first_counterexample(&self) -> Option<usize> {
        self.history.iter().position(|s| s.robustness < 0.0).map(|i| i + 1)
    }
}

/// Everything a falsification run needs besides its strategy.
pub struct Problem<'a> {
    pub scenario: &'a Scenario,
    pub emulator: &'a Emulator,
    pub params: &'a [f64],
    pub spec: &'a SafetyFormula,
}

impl Problem<'_> {
    /// Simulate one search point. Faults score `+inf`.
    pub fn evaluate(&self, point: &[f64]) -> Result<(f64, Option<Trace>)> {
        let x0 = self.scenario.initial_state(point);
        match simulate(self.scenario, self.emulator, self.params, x0) {
            Ok(tr) => {
                let r = self.spec.robustness(&tr, 0)?;
                Ok((r, Some(tr)))
            }
            Err(Error::SimulationFault { step, reason, .. }) => {
                log::warn!("simulation fault at step {step}: {reason}");
                Ok((f64::INFINITY, None))
            }
            Err(e) => Err(e),
        }
    }
}

fn run(
    problem: &Problem<'_>,
    cfg: &FalsifyConfig,
    seed: u64,
    mut propose: impl FnMut(&[(Vec<f64>, f64)], &mut ChaCha8Rng) -> Vec<f64>,
) -> Result<FalsifyResult> {
    let space = SearchSpace::of(problem.scenario);
    let mut out = FalsifyResult::empty();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.budget);
    while out.evaluations < cfg.budget && out.counterexamples.len() < cfg.early_stop_count.max(1) {
        let mut point = propose(&hist, &mut rng);
        space.bbox.clamp(&mut point);
        let (r, trace) = problem.evaluate(&point)?;
        out.evaluations += 1;
        if trace.is_none() {
            out.faults += 1;
        }
        out.min_robustness = out.min_robustness.min(r);
        if r < 0.0 {
            out.counterexamples.push(trace.expect("finite robustness implies a trace"));
            out.counterexample_points.push(point.clone());
        }
        out.history.push(Sample { point: point.clone(), robustness: r });
        hist.push((point, r));
    }
    Ok(out)
}

/// Falsify with the configured strategy. Deterministic given `seed`.
pub fn falsify(problem: &Problem<'_>, cfg: &FalsifyConfig, seed: u64) -> Result<FalsifyResult> {
    match cfg.method {
        Method::Random => random_search(problem, cfg, seed),
        Method::BayesOpt => {
            let bbox = problem.scenario.search_box();
            run(problem, cfg, seed, |hist, _| bayesopt_propose(hist, &bbox, seed, &cfg.bo))
        }
    }
}

/// Uniform i.i.d. sampling over the search box.
pub fn random_search(problem: &Problem<'_>, cfg: &FalsifyConfig, seed: u64) -> Result<FalsifyResult> {
    let bbox = problem.scenario.search_box();
    run(problem, cfg, seed, |_, rng| bbox.sample_uniform(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{builtin_specs, Formula, Predicate, SpecParams, Target};
    use crate::types::ScenarioId;

    fn lane_specs() -> (SafetyFormula, SafetyFormula) {
        let sc = Scenario::lane_keeping();
        builtin_specs(
            ScenarioId::LaneKeeping,
            &SpecParams {
                dt: sc.dt,
                horizon: sc.horizon,
                lane_deviation_max: 1.0,
                lane_target_deviation: 0.3,
                lane_target_heading: 0.1,
                lane_reach_seconds: 4.0,
                lane_reach_and_stay: true,
                eps1: 0.5,
                eps2: 0.5,
                brake_reach: None,
            },
        )
    }

    #[test]
    fn uncontrolled_lane_is_falsified() {
        let sc = Scenario::lane_keeping();
        let em = Emulator::default_for(sc.id);
        let (phi_s, _) = lane_specs();
        let prob = Problem { scenario: &sc, emulator: &em, params: &[0.0, 0.0], spec: &phi_s };
        let cfg = FalsifyConfig { budget: 100, ..Default::default() };
        let res = falsify(&prob, &cfg, 1).unwrap();
        assert!(!res.counterexamples.is_empty());
        for tr in &res.counterexamples {
            assert!(!phi_s.evaluate_bool(tr).unwrap());
        }
        assert!(res.evaluations <= 100);
    }

    #[test]
    fn constant_true_spec_has_no_counterexamples() {
        let sc = Scenario::lane_keeping();
        let em = Emulator::default_for(sc.id);
        let spec = SafetyFormula::new(
            Target::Sim,
            Formula::Pred(Predicate { a: vec![0.0; 6], b: 1.0 }),
        );
        let prob = Problem { scenario: &sc, emulator: &em, params: &[0.0, 0.0], spec: &spec };
        let cfg = FalsifyConfig { budget: 30, ..Default::default() };
        let res = falsify(&prob, &cfg, 4).unwrap();
        assert!(res.counterexamples.is_empty());
        assert_eq!(res.min_robustness, 1.0);
        assert_eq!(res.evaluations, 30);
    }

    #[test]
    fn constant_false_spec_every_sample_fails() {
        let sc = Scenario::braking();
        let em = Emulator::default_for(sc.id);
        let spec = SafetyFormula::new(
            Target::Sim,
            Formula::Pred(Predicate { a: vec![0.0; 4], b: -1.0 }),
        );
        let prob = Problem { scenario: &sc, emulator: &em, params: &[20.0, 7.0], spec: &spec };
        let cfg = FalsifyConfig { budget: 15, early_stop_count: 100, ..Default::default() };
        let res = random_search(&prob, &cfg, 2).unwrap();
        assert_eq!(res.counterexamples.len(), 15);
        assert_eq!(res.first_counterexample(), Some(1));
    }

    #[test]
    fn zero_budget_is_empty() {
        let sc = Scenario::braking();
        let em = Emulator::default_for(sc.id);
        let spec = SafetyFormula::new(Target::Sim, Formula::And(vec![]));
        let prob = Problem { scenario: &sc, emulator: &em, params: &[20.0, 7.0], spec: &spec };
        let cfg = FalsifyConfig { budget: 0, ..Default::default() };
        let res = random_search(&prob, &cfg, 2).unwrap();
        assert_eq!(res.evaluations, 0);
        assert!(res.history.is_empty());
    }

    #[test]
    fn deterministic_and_in_box() {
        let sc = Scenario::lane_keeping();
        let em = Emulator::default_for(sc.id);
        let (phi_s, _) = lane_specs();
        let prob = Problem { scenario: &sc, emulator: &em, params: &[-0.5, -0.8], spec: &phi_s };
        let cfg = FalsifyConfig { budget: 25, ..Default::default() };
        let a = falsify(&prob, &cfg, 9).unwrap();
        let b = falsify(&prob, &cfg, 9).unwrap();
        assert_eq!(a, b);
        let bbox = sc.search_box();
        assert!(a.history.iter().all(|s| bbox.contains(&s.point)));
        let r1 = random_search(&prob, &cfg, 3).unwrap();
        let r2 = random_search(&prob, &cfg, 3).unwrap();
        assert_eq!(r1, r2);
    }
}
