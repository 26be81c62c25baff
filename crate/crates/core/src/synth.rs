//! Controller synthesis against the surrogate model.
//!
//! The objective `J(p)` is the worst robustness over a grid of initial
//! states crossed with a fixed set of adversarial output selectors, plus
//! every sequence in the adversary bank. Ascent uses central finite
//! differences with projection and backtracking. At each local optimum a
//! verification pass draws fresh adversaries; violators join the bank and
//! ascent resumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Scenario;
use crate::spec::SafetyFormula;
use crate::surrogate::{rollout_adversarial, ChoiceSequence, Selector, SurrogateModel};
use crate::types::IntervalBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub restarts: usize,
    /// Uniform draws screened by objective value to seed each random restart.
    pub restart_candidates: usize,
    pub max_gradient_steps: usize,
    /// Finite-difference step as a fraction of each bounds width.
    pub fd_epsilon: f64,
    /// Initial ascent step in the unit-normalized parameter box.
    pub initial_step: f64,
    /// Ascent stops once the step shrinks below this.
    pub min_step: f64,
    pub n_adversarial: usize,
    pub n_verify: usize,
    /// Verification passes per restart.
    pub max_verify_rounds: usize,
    /// Required objective margin.
    pub margin: f64,
    pub x0_grid: usize,
    pub greedy_lookahead: usize,
    /// Probability that a random endpoint selector switches choice per step.
    pub switch_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            restarts: 6,
            restart_candidates: 12,
            max_gradient_steps: 25,
            fd_epsilon: 1e-3,
            initial_step: 0.1,
            min_step: 2e-3,
            n_adversarial: 6,
            n_verify: 200,
            max_verify_rounds: 4,
            margin: 0.02,
            x0_grid: 9,
            greedy_lookahead: 20,
            switch_prob: 0.08,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts < 1 {
            return Err(Error::Validation("synth: restarts must be >= 1".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Validation("synth: margin must be >= 0".into()));
        }
        if !(self.fd_epsilon > 0.0) || !(self.initial_step > 0.0) || !(self.min_step > 0.0) {
            return Err(Error::Validation(
                "synth: fd_epsilon, initial_step and min_step must be positive".into(),
            ));
        }
        if self.x0_grid < 1 {
            return Err(Error::Validation("synth: x0_grid must be >= 1".into()));
        }
        Ok(())
    }
}

/// A selection sequence that violated the surrogate spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub x0: Vec<f64>,
    pub choices: ChoiceSequence,
    /// Robustness when found, under `found_with`.
    pub robustness: f64,
    pub found_with: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversaryBank {
    pub entries: Vec<BankEntry>,
}

/// Per-restart trace of the search, for the synthesis log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartLog {
    pub restart: usize,
    pub path: Vec<(Vec<f64>, f64)>,
    pub bank_growth: Vec<usize>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOutcome {
    pub success: bool,
    /// Best parameters found (the successful ones on success).
    pub params: Vec<f64>,
    pub objective: f64,
    pub bank: AdversaryBank,
    pub log: Vec<RestartLog>,
    pub objective_evaluations: usize,
}

pub struct Synthesizer<'a> {
    pub model: &'a SurrogateModel,
    pub scenario: &'a Scenario,
    pub spec: &'a SafetyFormula,
    pub cfg: &'a SynthConfig,
    x0s: Vec<Vec<f64>>,
    selectors: Vec<Selector>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^ (z >> 31)
}

/// Center, then corners, then seeded uniform points.
pub fn x0_grid(bbox: &IntervalBox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut pts = vec![bbox.center()];
    pts.extend(bbox.corners());
    pts.truncate(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while pts.len() < n {
        pts.push(bbox.sample_uniform(&mut rng));
    }
    pts
}

impl<'a> Synthesizer<'a> {
    pub fn new(
        model: &'a SurrogateModel,
        scenario: &'a Scenario,
        spec: &'a SafetyFormula,
        cfg: &'a SynthConfig,
    ) -> Self {
        let x0s = x0_grid(&model.x0_box, cfg.x0_grid, mix(cfg.seed, 1, 0));
        let has_error = model.error.iter().any(|c| !c.clusters.is_empty() || c.miss_region.is_some());
        let mut selectors = vec![Selector::Nominal];
        if has_error {
            selectors.extend([Selector::Low, Selector::High, Selector::Greedy {
                lookahead: cfg.greedy_lookahead,
            }]);
            if model.error.iter().any(|c| c.miss_region.is_some()) {
                selectors.push(Selector::PreferMiss);
            }
            for k in 0..cfg.n_adversarial {
                selectors.push(Selector::RandomEndpoints {
                    seed: mix(cfg.seed, 2, k as u64),
                    switch_prob: cfg.switch_prob,
                });
            }
        }
        Synthesizer { model, scenario, spec, cfg, x0s, selectors }
    }

    /// `J(p)`: worst robustness over grid x fixed selectors and the bank.
    pub fn objective(&self, p: &[f64], bank: &AdversaryBank) -> Result<f64> {
        let jobs: Vec<(&[f64], &Selector)> = self
            .x0s
            .iter()
            .flat_map(|x| self.selectors.iter().map(move |s| (x.as_slice(), s)))
            .collect();
        let fixed = jobs
            .par_iter()
            .map(|(x0, sel)| self.rollout(p, x0, sel))
            .collect::<Result<Vec<f64>>>()?;
        let banked = bank
            .entries
            .par_iter()
            .map(|e| self.rollout(p, &e.x0, &Selector::Replay(e.choices.clone())))
            .collect::<Result<Vec<f64>>>()?;
        Ok(fixed.into_iter().chain(banked).fold(f64::INFINITY, f64::min))
    }

    fn rollout(&self, p: &[f64], x0: &[f64], sel: &Selector) -> Result<f64> {
        Ok(rollout_adversarial(self.model, self.scenario, p, self.spec, x0, sel)?.robustness)
    }

    /// Fresh adversaries at random initial states; returns violators.
    pub fn verify(&self, p: &[f64], n: usize, seed: u64) -> Result<Vec<BankEntry>> {
        let has_error = self.selectors.len() > 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jobs: Vec<(Vec<f64>, Selector)> = (0..n)
            .map(|i| {
                let x0 = self.model.x0_box.sample_uniform(&mut rng);
                let s = rng.random::<u64>();
                let sel = if !has_error {
                    Selector::Nominal
                } else {
                    match i % 10 {
                        0 => Selector::Greedy { lookahead: self.cfg.greedy_lookahead },
                        1 => Selector::Low,
                        2 => Selector::High,
                        3 | 4 => Selector::RandomInterior { seed: s },
                        _ => Selector::RandomEndpoints {
                            seed: s,
                            switch_prob: self.cfg.switch_prob * (1 + i % 3) as f64,
                        },
                    }
                };
                (x0, sel)
            })
            .collect();
        let found = jobs
            .par_iter()
            .map(|(x0, sel)| {
                let r = rollout_adversarial(self.model, self.scenario, p, self.spec, x0, sel)?;
                Ok((r.robustness < 0.0).then(|| BankEntry {
                    x0: x0.clone(),
                    choices: r.choices,
                    robustness: r.robustness,
                    found_with: p.to_vec(),
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(found.into_iter().flatten().collect())
    }
}

/// Central finite-difference gradient, with steps shrunk near the bounds.
pub fn fd_gradient(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    p: &[f64],
    bounds: &IntervalBox,
    eps_frac: f64,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; p.len()];
    for i in 0..p.len() {
        let h = eps_frac * bounds.width(i).max(1e-12);
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[i] = (p[i] + h).min(bounds.hi[i]);
        lo[i] = (p[i] - h).max(bounds.lo[i]);
        let span = hi[i] - lo[i];
        if span <= 0.0 {
            continue;
        }
        g[i] = (f(&hi)? - f(&lo)?) / span;
    }
    Ok(g)
}

/// Search for `p` in `bounds` with `J(p) >= margin` that survives
/// verification. Restart 0 starts at `p_init`; later restarts at seeded
/// uniform points.
pub fn synthesize(
    model: &SurrogateModel,
    scenario: &Scenario,
    spec: &SafetyFormula,
    p_init: &[f64],
    bounds: &IntervalBox,
    cfg: &SynthConfig,
) -> Result<SynthOutcome> {
    cfg.validate()?;
    bounds.validate()?;
    let syn = Synthesizer::new(model, scenario, spec, cfg);
    let mut bank = AdversaryBank::default();
    let mut logs = Vec::new();
    let mut evals = 0usize;
    let mut best: (Vec<f64>, f64) = (p_init.to_vec(), f64::NEG_INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 3, 0));

    for restart in 0..cfg.restarts {
        let mut p = if restart == 0 {
            let mut p = p_init.to_vec();
            bounds.clamp(&mut p);
            p
        } else {
            let mut best_start = (bounds.sample_uniform(&mut rng), f64::NEG_INFINITY);
            for c in 0..cfg.restart_candidates.max(1) {
                let q = if c == 0 { best_start.0.clone() } else { bounds.sample_uniform(&mut rng) };
                let jq = if cfg.restart_candidates > 1 { syn.objective(&q, &bank)? } else { 0.0 };
                evals += 1;
                if jq > best_start.1 {
                    best_start = (q, jq);
                }
            }
            best_start.0
        };
        let mut log = RestartLog { restart, path: Vec::new(), bank_growth: Vec::new(), outcome: String::new() };
        let mut j = syn.objective(&p, &bank)?;
        evals += 1;
        log.path.push((p.clone(), j));
        let mut rounds = 0;
        let mut success = false;
        'ascent: loop {
            if !j.is_finite() {
                log::warn!("restart {restart}: non-finite objective, abandoning");
                log.outcome = "non_finite".into();
                break;
            }
            let mut step = cfg.initial_step;
            for _ in 0..cfg.max_gradient_steps {
                let mut f = |q: &[f64]| {
                    evals += 1;
                    syn.objective(q, &bank)
                };
                let g = fd_gradient(&mut f, &p, bounds, cfg.fd_epsilon)?;
                let gu: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * bounds.width(i)).collect();
                let norm = gu.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm > 0.0) {
                    break;
                }
                let mut moved = false;
                while step >= cfg.min_step {
                    let mut q: Vec<f64> = p
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v + step * bounds.width(i) * gu[i] / norm)
                        .collect();
                    bounds.clamp(&mut q);
                    let jq = syn.objective(&q, &bank)?;
                    evals += 1;
                    if jq > j {
                        p = q;
                        j = jq;
                        moved = true;
                        step = (step * 1.5).min(0.3);
                        break;
                    }
                    step *= 0.5;
                }
                log.path.push((p.clone(), j));
                if !moved {
                    break;
                }
            }
            if j > best.1 {
                best = (p.clone(), j);
            }
            if j < cfg.margin {
                log.outcome = "below_margin".into();
                break;
            }
            if rounds >= cfg.max_verify_rounds {
                log.outcome = "verification_rounds_exhausted".into();
                break;
            }
            let violators = syn.verify(&p, cfg.n_verify, mix(cfg.seed, 4 + restart as u64, rounds as u64))?;
            rounds += 1;
            if violators.is_empty() {
                success = true;
                log.outcome = "success".into();
                break 'ascent;
            }
            log.bank_growth.push(violators.len());
            // Keep the bank bounded: the worst few violators carry the signal.
            let mut v = violators;
            v.sort_by(|a, b| a.robustness.total_cmp(&b.robustness));
            v.truncate(8);
            bank.entries.extend(v);
            j = syn.objective(&p, &bank)?;
            evals += 1;
            log.path.push((p.clone(), j));
        }
        logs.push(log);
        if success {
            return Ok(SynthOutcome {
                success: true,
                params: p,
                objective: j,
                bank,
                log: logs,
                objective_evaluations: evals,
            });
        }
    }
    Ok(SynthOutcome {
        success: false,
        params: best.0,
        objective: best.1,
        bank,
        log: logs,
        objective_evaluations: evals,
    })
}
