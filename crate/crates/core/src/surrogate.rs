//! Surrogate model: expert dynamics plus an interval-valued perception
//! relation `y_i in {h*_i(x)} + E_i(x)`.
//!
//! `E_i(x)` is `{0}` outside every cluster domain and the union of the
//! matching clusters' `[low_j(x), up_j(x)]` otherwise. A component can also
//! carry a miss region inside which `+inf` (no detection) is a legal output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Scenario;
use crate::spec::SafetyFormula;
use crate::types::{ControlInput, IntervalBox, Measurement, ModelState, ModelTrace, ScenarioId};

pub const CONTAINS_TOL: f64 = 1e-9;

/// Box domain with affine residual bounds over the component's selected
/// state dims: `low(x) = a_l.x + b_l`, `up(x) = a_u.x + b_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub domain: IntervalBox,
    pub a_l: Vec<f64>,
    pub b_l: f64,
    pub a_u: Vec<f64>,
    pub b_u: f64,
}

fn affine(a: &[f64], b: f64, x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b
}

impl Cluster {
    pub fn constant(domain: IntervalBox, low: f64, up: f64) -> Self {
        let n = domain.dim();
        Cluster { domain, a_l: vec![0.0; n], b_l: low, a_u: vec![0.0; n], b_u: up }
    }

    pub fn low(&self, z: &[f64]) -> f64 {
        affine(&self.a_l, self.b_l, z)
    }

    pub fn up(&self, z: &[f64]) -> f64 {
        affine(&self.a_u, self.b_u, z)
    }
}

/// Error model of one output component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentErrorModel {
    /// Index of the output component.
    pub output: usize,
    /// Model-state dims the clusters range over.
    pub dims: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub miss_region: Option<IntervalBox>,
}

impl ComponentErrorModel {
    pub fn empty(output: usize, dims: Vec<usize>) -> Self {
        ComponentErrorModel { output, dims, clusters: Vec::new(), miss_region: None }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.dims.iter().map(|&d| x[d]).collect()
    }

    /// Residual intervals at `x`, sorted, plus whether `+inf` is allowed.
    /// No matching cluster yields the single interval `[0, 0]`.
    pub fn residual_set(&self, x: &[f64]) -> ResidualSet {
        let z = self.project(x);
        let mut intervals: Vec<(f64, f64)> = self
            .clusters
            .iter()
            .filter(|c| c.domain.contains(&z))
            .map(|c| (c.low(&z), c.up(&z)))
            .collect();
        if intervals.is_empty() {
            intervals.push((0.0, 0.0));
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let may_miss = self.miss_region.as_ref().is_some_and(|m| m.contains(&z));
        ResidualSet { intervals, may_miss }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub intervals: Vec<(f64, f64)>,
    pub may_miss: bool,
}

/// Set of possible values of one output component.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSet {
    pub intervals: Vec<(f64, f64)>,
    pub may_miss: bool,
}

impl OutputSet {
    pub fn is_singleton(&self) -> bool {
        !self.may_miss && self.intervals.len() == 1 && self.intervals[0].0 == self.intervals[0].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub scenario: ScenarioId,
    /// Nominal output map: output component `i` is model-state component
    /// `h_star[i]`.
    pub h_star: Vec<usize>,
    pub error: Vec<ComponentErrorModel>,
    pub x0_box: IntervalBox,
}

impl SurrogateModel {
    /// The expert initial guess: nominal outputs with zero error.
    pub fn zero_error(scenario: &Scenario) -> Self {
        let (h_star, output, dims) = match scenario.id {
            ScenarioId::LaneKeeping => (vec![2, 1, 0], 2, vec![0, 1]),
            ScenarioId::Braking => (vec![1, 0], 1, vec![0]),
        };
        SurrogateModel {
            scenario: scenario.id,
            h_star,
            error: vec![ComponentErrorModel::empty(output, dims)],
            x0_box: scenario.model_x0_box(),
        }
    }

    pub fn nominal(&self, x: &[f64]) -> Vec<f64> {
        self.h_star.iter().map(|&i| x[i]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let nm = self.scenario.model_state_names().len();
        let ny = self.scenario.measurement_names().len();
        if self.h_star.len() != ny || self.h_star.iter().any(|&i| i >= nm) {
            return Err(Error::Validation("h_star does not match the scenario".into()));
        }
        if self.x0_box.dim() != nm {
            return Err(Error::Validation("x0_box dimension mismatch".into()));
        }
        self.x0_box.validate()?;
        for c in &self.error {
            if c.output >= ny || c.dims.iter().any(|&d| d >= nm) {
                return Err(Error::Validation(format!(
                    "error model for output {} references unknown dims",
                    c.output
                )));
            }
            let k = c.dims.len();
            for cl in &c.clusters {
                cl.domain.validate()?;
                let finite = cl.b_l.is_finite()
                    && cl.b_u.is_finite()
                    && cl.a_l.iter().chain(&cl.a_u).all(|v| v.is_finite());
                if cl.domain.dim() != k || cl.a_l.len() != k || cl.a_u.len() != k || !finite {
                    return Err(Error::Validation(format!(
                        "malformed cluster for output {}",
                        c.output
                    )));
                }
            }
            if let Some(m) = &c.miss_region {
                m.validate()?;
                if m.dim() != k {
                    return Err(Error::Validation("miss region dimension mismatch".into()));
                }
            }
        }
        Ok(())
    }

    pub fn component(&self, output: usize) -> Option<&ComponentErrorModel> {
        self.error.iter().find(|c| c.output == output)
    }

    pub fn output_set(&self, x: &[f64]) -> Vec<OutputSet> {
        let nominal = self.nominal(x);
        nominal
            .iter()
            .enumerate()
            .map(|(i, &h)| match self.component(i) {
                None => OutputSet { intervals: vec![(h, h)], may_miss: false },
                Some(c) => {
                    let r = c.residual_set(x);
                    OutputSet {
                        intervals: r.intervals.iter().map(|(l, u)| (h + l, h + u)).collect(),
                        may_miss: r.may_miss,
                    }
                }
            })
            .collect()
    }

    /// Membership of `y` in the output relation at `x`, with tolerance
    /// [`CONTAINS_TOL`]. Residuals are compared in residual space.
    pub fn contains(&self, x: &[f64], y: &[f64]) -> bool {
        let nominal = self.nominal(x);
        if y.len() != nominal.len() {
            return false;
        }
        nominal.iter().zip(y).enumerate().all(|(i, (&h, &yi))| {
            let set = match self.component(i) {
                None => ResidualSet { intervals: vec![(0.0, 0.0)], may_miss: false },
                Some(c) => c.residual_set(x),
            };
            if yi == f64::INFINITY {
                return set.may_miss;
            }
            if !yi.is_finite() {
                return false;
            }
            let e = yi - h;
            set.intervals
                .iter()
                .any(|&(l, u)| e >= l - CONTAINS_TOL && e <= u + CONTAINS_TOL)
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: SurrogateModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// How one error component is resolved at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    /// Point `lo + frac * (hi - lo)` of the `rank`-th interval (clamped to
    /// the last one).
    Interval { rank: usize, frac: f64 },
    /// `+inf`, falling back to the midpoint of the first interval where a
    /// miss is not allowed.
    Miss,
}

impl Choice {
    pub fn resolve(&self, set: &ResidualSet) -> f64 {
        let interval = |rank: usize, frac: f64| {
            let (l, u) = set.intervals[rank.min(set.intervals.len() - 1)];
            if frac <= 0.0 {
                l
            } else if frac >= 1.0 {
                u
            } else {
                l + frac * (u - l)
            }
        };
        match *self {
            Choice::Interval { rank, frac } => interval(rank, frac),
            Choice::Miss if set.may_miss => f64::INFINITY,
            Choice::Miss => interval(0, 0.5),
        }
    }

    /// Endpoint choices of a set, plus `Miss` where allowed.
    pub fn endpoints(set: &ResidualSet) -> Vec<Choice> {
        let mut out = Vec::with_capacity(2 * set.intervals.len() + 1);
        for (r, (l, u)) in set.intervals.iter().enumerate() {
            out.push(Choice::Interval { rank: r, frac: 0.0 });
            if u > l {
                out.push(Choice::Interval { rank: r, frac: 1.0 });
            }
        }
        if set.may_miss {
            out.push(Choice::Miss);
        }
        out
    }
}

/// Per-step, per-error-component choices.
pub type ChoiceSequence = Vec<Vec<Choice>>;

#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    /// Zero residual (the nominal output).
    Nominal,
    /// Lowest endpoint at every step.
    Low,
    /// Highest endpoint at every step.
    High,
    /// `+inf` wherever allowed, nominal elsewhere.
    PreferMiss,
    /// Endpoints (or a miss) held for random durations.
    RandomEndpoints { seed: u64, switch_prob: f64 },
    /// Independent uniform interior points.
    RandomInterior { seed: u64 },
    /// At each step, the endpoint whose held continuation over `lookahead`
    /// steps gives the lowest robustness.
    Greedy { lookahead: usize },
    /// Replays a recorded sequence; shorter sequences continue nominally.
    Replay(ChoiceSequence),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trace: ModelTrace,
    pub robustness: f64,
    pub choices: ChoiceSequence,
}

const NOMINAL: Choice = Choice::Interval { rank: 0, frac: 0.5 };

struct Resolver<'a> {
    model: &'a SurrogateModel,
    scenario: &'a Scenario,
    p: &'a [f64],
}

impl Resolver<'_> {
    fn sets(&self, x: &[f64]) -> Vec<ResidualSet> {
        self.model.error.iter().map(|c| c.residual_set(x)).collect()
    }

    fn output(&self, x: &[f64], sets: &[ResidualSet], choice: &[Choice]) -> Vec<f64> {
        let mut y = self.model.nominal(x);
        for ((c, set), ch) in self.model.error.iter().zip(sets).zip(choice) {
            let e = ch.resolve(set);
            y[c.output] = if e == f64::INFINITY { e } else { y[c.output] + e };
        }
        y
    }

    fn step(&self, x: &[f64], choice: &[Choice]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let sets = self.sets(x);
        let y = self.output(x, &sets, choice);
        let u = self.scenario.control(self.p, &y);
        let next = self.scenario.model_step(x, &u);
        (y, u, next)
    }
}

fn nominal_choice(set: &ResidualSet) -> Choice {
    // The interval containing zero if any, else the closest endpoint.
    for (r, (l, u)) in set.intervals.iter().enumerate() {
        if *l <= 0.0 && 0.0 <= *u {
            let frac = if u > l { -l / (u - l) } else { 0.0 };
            return Choice::Interval { rank: r, frac };
        }
    }
    let (mut best, mut dist) = (Choice::Interval { rank: 0, frac: 0.0 }, f64::INFINITY);
    for (r, (l, u)) in set.intervals.iter().enumerate() {
        for (frac, v) in [(0.0, *l), (1.0, *u)] {
            if v.abs() < dist {
                dist = v.abs();
                best = Choice::Interval { rank: r, frac };
            }
        }
    }
    best
}

fn extreme_choice(set: &ResidualSet, high: bool) -> Choice {
    let (mut best, mut val) = (Choice::Interval { rank: 0, frac: 0.0 }, 0.0);
    for (r, (l, u)) in set.intervals.iter().enumerate() {
        let (frac, v) = if high { (1.0, *u) } else { (0.0, *l) };
        if r == 0 || (high && v > val) || (!high && v < val) {
            best = Choice::Interval { rank: r, frac };
            val = v;
        }
    }
    best
}

/// Resolve one closed-loop surrogate trace from `x0` and score it.
pub fn rollout_adversarial(
    model: &SurrogateModel,
    scenario: &Scenario,
    p: &[f64],
    formula: &SafetyFormula,
    x0: &[f64],
    selector: &Selector,
) -> Result<Rollout> {
    let h = scenario.horizon;
    let r = Resolver { model, scenario, p };
    let nc = model.error.len();
    let mut rng = match selector {
        Selector::RandomEndpoints { seed, .. } | Selector::RandomInterior { seed } => {
            Some(ChaCha8Rng::seed_from_u64(*seed))
        }
        _ => None,
    };
    let mut held: Vec<Option<Choice>> = vec![None; nc];
    let mut states = Vec::with_capacity(h + 1);
    let mut outputs = Vec::with_capacity(h);
    let mut inputs = Vec::with_capacity(h);
    let mut choices: ChoiceSequence = Vec::with_capacity(h);
    let mut x = x0.to_vec();
    for i in 0..h {
        let sets = r.sets(&x);
        let choice: Vec<Choice> = match selector {
            Selector::Nominal => sets.iter().map(nominal_choice).collect(),
            Selector::Low => sets.iter().map(|s| extreme_choice(s, false)).collect(),
            Selector::High => sets.iter().map(|s| extreme_choice(s, true)).collect(),
            Selector::PreferMiss => sets
                .iter()
                .map(|s| if s.may_miss { Choice::Miss } else { nominal_choice(s) })
                .collect(),
            Selector::RandomEndpoints { switch_prob, .. } => {
                let rng = rng.as_mut().expect("seeded");
                sets.iter()
                    .zip(held.iter_mut())
                    .map(|(s, hold)| {
                        let eps = Choice::endpoints(s);
                        let switch = rng.random::<f64>() < *switch_prob;
                        let pick = rng.random_range(0..eps.len());
                        match hold {
                            Some(c) if !switch => *c,
                            _ => {
                                *hold = Some(eps[pick]);
                                eps[pick]
                            }
                        }
                    })
                    .collect()
            }
            Selector::RandomInterior { .. } => {
                let rng = rng.as_mut().expect("seeded");
                sets.iter()
                    .map(|s| {
                        let rank = rng.random_range(0..s.intervals.len());
                        Choice::Interval { rank, frac: rng.random::<f64>() }
                    })
                    .collect()
            }
            Selector::Greedy { lookahead } => greedy_choice(&r, formula, &states, &x, &sets, i, *lookahead)?,
            Selector::Replay(seq) => match seq.get(i) {
                Some(c) => (0..nc).map(|k| c.get(k).copied().unwrap_or(NOMINAL)).collect(),
                None => sets.iter().map(nominal_choice).collect(),
            },
        };
        let y = r.output(&x, &sets, &choice);
        let u = scenario.control(p, &y);
        let next = scenario.model_step(&x, &u);
        states.push(ModelState { values: std::mem::replace(&mut x, next) });
        outputs.push(Measurement { values: y });
        inputs.push(ControlInput { values: u });
        choices.push(choice);
    }
    states.push(ModelState { values: x });
    let trace = ModelTrace { dt: scenario.dt, states, outputs, inputs };
    let robustness = formula.robustness(&trace, 0)?;
    Ok(Rollout { trace, robustness, choices })
}

fn greedy_choice(
    r: &Resolver<'_>,
    formula: &SafetyFormula,
    prefix: &[ModelState],
    x: &[f64],
    sets: &[ResidualSet],
    step: usize,
    lookahead: usize,
) -> Result<Vec<Choice>> {
    let h = r.scenario.horizon;
    // Candidate joint choices: vary one component at a time over its
    // endpoints, holding the others at their first endpoint.
    let per: Vec<Vec<Choice>> = sets.iter().map(Choice::endpoints).collect();
    let base: Vec<Choice> = per.iter().map(|c| c[0]).collect();
    let mut candidates = vec![base.clone()];
    for (k, cs) in per.iter().enumerate() {
        for c in cs.iter().skip(1) {
            let mut cand = base.clone();
            cand[k] = *c;
            candidates.push(cand);
        }
    }
    if candidates.len() == 1 {
        return Ok(base);
    }
    let mut best = (f64::INFINITY, 0usize);
    let mut buf: Vec<Vec<f64>> = prefix.iter().map(|s| s.values.clone()).collect();
    let keep = buf.len();
    for (ci, cand) in candidates.iter().enumerate() {
        buf.truncate(keep);
        let mut xs = x.to_vec();
        buf.push(xs.clone());
        let end = (step + lookahead.max(1)).min(h);
        for _ in step..end {
            let (_, _, next) = r.step(&xs, cand);
            xs = next;
            buf.push(xs.clone());
        }
        while buf.len() < h + 1 {
            buf.push(xs.clone());
        }
        let rob = formula.robustness(&buf, 0)?;
        if rob < best.0 {
            best = (rob, ci);
        }
    }
    Ok(candidates.swap_remove(best.1))
}
