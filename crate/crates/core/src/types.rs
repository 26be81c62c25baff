//! Shared domain types and the abstraction map from simulator states to
//! surrogate-model states.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Scenario;

/// The two built-in case studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    LaneKeeping,
    Braking,
}

impl ScenarioId {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::LaneKeeping => "lane_keeping",
            ScenarioId::Braking => "braking",
        }
    }

    /// Component names of the simulator state.
    pub fn sim_state_names(self) -> &'static [&'static str] {
        match self {
            ScenarioId::LaneKeeping => &["x", "y", "theta_av", "theta_r", "v", "d"],
            ScenarioId::Braking => &["d", "v", "d_car", "v_rear"],
        }
    }

    pub fn env_names(self) -> &'static [&'static str] {
        match self {
            ScenarioId::LaneKeeping => &[],
            ScenarioId::Braking => &["car_color_similarity"],
        }
    }

    pub fn model_state_names(self) -> &'static [&'static str] {
        match self {
            ScenarioId::LaneKeeping => &["d", "theta_delta", "v"],
            ScenarioId::Braking => &["d", "v"],
        }
    }

    pub fn measurement_names(self) -> &'static [&'static str] {
        match self {
            ScenarioId::LaneKeeping => &["v_hat", "theta_delta_hat", "d_hat"],
            ScenarioId::Braking => &["v_hat", "d_hat"],
        }
    }

    pub fn control_names(self) -> &'static [&'static str] {
        match self {
            ScenarioId::LaneKeeping => &["steer"],
            ScenarioId::Braking => &["brake"],
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ScenarioId::LaneKeeping => &["p1_theta_gain", "p2_deviation_gain"],
            ScenarioId::Braking => &["p1_trust_distance", "p2_target_speed"],
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lane_keeping" => Ok(ScenarioId::LaneKeeping),
            "braking" => Ok(ScenarioId::Braking),
            other => Err(Error::Config(format!("unknown scenario id `{other}`"))),
        }
    }
}

/// Axis-aligned box `lo <= x <= hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl IntervalBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = IntervalBox { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::Validation(format!(
                "box bounds have different dimensions ({} vs {})",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (i, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite()) || l > h {
                return Err(Error::Validation(format!(
                    "box dimension {i} is invalid: [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }

    /// Smallest box containing every point. Panics on an empty iterator.
    pub fn bounding<'a>(points: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut it = points.into_iter();
        let first = it.next().expect("bounding box of no points");
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in it {
            for (j, &v) in p.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        IntervalBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.width(i)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_tol(x, 0.0)
    }

    pub fn contains_tol(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Map a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, t)| self.lo[i] + t * self.width(i))
            .collect()
    }

    /// Map a point of the box into the unit cube (degenerate axes map to 0.5).
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let w = self.width(i);
                if w > 0.0 {
                    (v - self.lo[i]) / w
                } else {
                    0.5
                }
            })
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.lo[i] + rng.random::<f64>() * self.width(i))
            .collect()
    }

    /// All `2^dim` vertices, in binary-counting order.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..(1usize << n))
            .map(|mask| {
                (0..n)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            self.hi[i]
                        } else {
                            self.lo[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Restriction of the box to the listed dimensions.
    pub fn select(&self, dims: &[usize]) -> IntervalBox {
        IntervalBox {
            lo: dims.iter().map(|&d| self.lo[d]).collect(),
            hi: dims.iter().map(|&d| self.hi[d]).collect(),
        }
    }
}

/// Per-episode environment parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvParams {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub values: Vec<f64>,
    pub env: EnvParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub values: Vec<f64>,
}

/// Perception output. `+inf` encodes "nothing detected" in components that
/// allow it; consumers must branch on it explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub values: Vec<f64>,
    pub bounds: IntervalBox,
}

impl ControllerParams {
    pub fn new(values: Vec<f64>, bounds: IntervalBox) -> Result<Self> {
        if !bounds.contains_tol(&values, 1e-12) {
            return Err(Error::Validation(format!(
                "controller parameters {values:?} outside bounds {:?}..{:?}",
                bounds.lo, bounds.hi
            )));
        }
        Ok(ControllerParams { values, bounds })
    }
}

/// Closed-loop simulator trace: `H + 1` states, and one measurement and one
/// control input for each of the first `H` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub dt: f64,
    pub states: Vec<SimState>,
    pub measurements: Vec<Measurement>,
    pub inputs: Vec<ControlInput>,
}

impl Trace {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

/// Closed-loop trace of the surrogate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrace {
    pub dt: f64,
    pub states: Vec<ModelState>,
    pub outputs: Vec<Measurement>,
    pub inputs: Vec<ControlInput>,
}

/// Read access to the state sequence of a trace, used by formula evaluation.
pub trait StateSequence {
    fn num_states(&self) -> usize;
    fn state(&self, i: usize) -> &[f64];
}

impl StateSequence for Trace {
    fn num_states(&self) -> usize {
        self.states.len()
    }
    fn state(&self, i: usize) -> &[f64] {
        &self.states[i].values
    }
}

impl StateSequence for ModelTrace {
    fn num_states(&self) -> usize {
        self.states.len()
    }
    fn state(&self, i: usize) -> &[f64] {
        &self.states[i].values
    }
}

impl StateSequence for [Vec<f64>] {
    fn num_states(&self) -> usize {
        self.len()
    }
    fn state(&self, i: usize) -> &[f64] {
        &self[i]
    }
}

impl StateSequence for Vec<Vec<f64>> {
    fn num_states(&self) -> usize {
        self.len()
    }
    fn state(&self, i: usize) -> &[f64] {
        &self[i]
    }
}

/// Project a simulator state onto the surrogate-model state space.
///
/// Lane keeping keeps `(d, theta_av - theta_r, v)`; braking keeps `(d, v)`
/// and drops the rear-car components.
pub fn alpha(x: &SimState, scenario: ScenarioId) -> Result<ModelState> {
    let expected = scenario.sim_state_names().len();
    if x.values.len() != expected {
        return Err(Error::Validation(format!(
            "{scenario} state has {} components, expected {expected}",
            x.values.len()
        )));
    }
    let v = &x.values;
    let values = match scenario {
        ScenarioId::LaneKeeping => vec![v[5], v[2] - v[3], v[4]],
        ScenarioId::Braking => vec![v[0], v[1]],
    };
    Ok(ModelState { values })
}

/// Re-simulate a trace from its initial state with its recorded inputs and
/// check every recorded state is reproduced to within `1e-9` per component.
pub fn replay_check(trace: &Trace, scenario: &Scenario) -> Result<bool> {
    let first = trace
        .states
        .first()
        .ok_or_else(|| Error::Validation("empty trace".into()))?;
    let n = scenario.id.sim_state_names().len();
    if trace.states.len() != trace.inputs.len() + 1 {
        return Err(Error::Validation(format!(
            "trace has {} states for {} inputs",
            trace.states.len(),
            trace.inputs.len()
        )));
    }
    if trace.states.iter().any(|s| s.values.len() != n)
        || trace
            .inputs
            .iter()
            .any(|u| u.values.len() != scenario.control_bounds.dim())
    {
        return Err(Error::Validation("trace dimension mismatch".into()));
    }
    let mut x = first.clone();
    for (i, u) in trace.inputs.iter().enumerate() {
        x = scenario.step(&x, &u.values, trace.dt);
        let recorded = &trace.states[i + 1];
        let same = x
            .values
            .iter()
            .zip(&recorded.values)
            .all(|(a, b)| (a - b).abs() <= 1e-9);
        if !same {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lane_state(d: f64, th_av: f64, th_r: f64, v: f64) -> SimState {
        SimState {
            values: vec![1.0, 2.0, th_av, th_r, v, d],
            env: EnvParams::default(),
        }
    }

    #[test]
    fn alpha_lane_projection() {
        let m = alpha(&lane_state(0.2, 0.1, 0.0, 5.0), ScenarioId::LaneKeeping).unwrap();
        assert_eq!(m.values, vec![0.2, 0.1, 5.0]);
    }

    #[test]
    fn alpha_braking_drops_rear_car() {
        let x = SimState {
            values: vec![30.0, 10.0, 12.0, 10.0],
            env: EnvParams { values: vec![0.4] },
        };
        let m = alpha(&x, ScenarioId::Braking).unwrap();
        assert_eq!(m.values, vec![30.0, 10.0]);
    }

    #[test]
    fn alpha_equal_headings_gives_zero_relative_heading() {
        let m = alpha(&lane_state(0.0, 0.3, 0.3, 5.0), ScenarioId::LaneKeeping).unwrap();
        assert_eq!(m.values[1], 0.0);
    }

    #[test]
    fn alpha_ignores_unlisted_fields() {
        let a = lane_state(0.2, 0.1, 0.05, 5.0);
        let mut b = a.clone();
        b.values[0] = -40.0;
        b.values[1] = 17.0;
        b.env.values.push(3.0);
        let ma = alpha(&a, ScenarioId::LaneKeeping).unwrap();
        let mb = alpha(&b, ScenarioId::LaneKeeping).unwrap();
        assert_eq!(ma.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   mb.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn alpha_rejects_wrong_dimension() {
        let x = SimState { values: vec![1.0], env: EnvParams::default() };
        assert!(matches!(alpha(&x, ScenarioId::Braking), Err(Error::Validation(_))));
    }

    #[test]
    fn scenario_id_parse() {
        assert_eq!("braking".parse::<ScenarioId>().unwrap(), ScenarioId::Braking);
        assert!(matches!("parking".parse::<ScenarioId>(), Err(Error::Config(_))));
    }

    #[test]
    fn box_corners_and_unit_maps() {
        let b = IntervalBox::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        assert_eq!(b.corners().len(), 4);
        assert_eq!(b.from_unit(&[0.5, 0.5]), vec![1.0, 0.0]);
        assert_eq!(b.to_unit(&[2.0, -1.0]), vec![1.0, 0.0]);
        assert!(IntervalBox::new(vec![1.0], vec![0.0]).is_err());
    }
}
