//! Deterministic closed-loop simulators for the two scenarios.

pub mod braking;
pub mod lane;
pub mod perception;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ControlInput, EnvParams, IntervalBox, Measurement, ScenarioId, SimState, Trace};

pub use braking::{
    braking_dynamics, braking_model_dynamics, controller_brake, rear_car_policy, BrakingParams,
};
pub use lane::{controller_lane, lane_keeping_dynamics, lane_model_dynamics};
pub use perception::{hashfrac, BrakeEmulator, LaneEmulator};

/// Scenario definition.
///
/// `x0_box` ranges over the initial-condition coordinates, not the full
/// state: lane keeping uses `(d0, theta0, v0)` and braking uses
/// `(d0, v0, d_car0)`. [`Scenario::initial_state`] expands them.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: ScenarioId,
    pub x0_box: IntervalBox,
    pub env_box: IntervalBox,
    pub dt: f64,
    pub horizon: usize,
    pub control_bounds: IntervalBox,
    pub wheelbase: f64,
    pub braking: BrakingParams,
}

impl Scenario {
    pub fn lane_keeping() -> Self {
        Scenario {
            id: ScenarioId::LaneKeeping,
            x0_box: IntervalBox {
                lo: vec![-0.4, -0.25, 15.0 / 3.6],
                hi: vec![0.4, 0.25, 25.0 / 3.6],
            },
            env_box: IntervalBox { lo: vec![], hi: vec![] },
            dt: 0.05,
            horizon: 160,
            control_bounds: IntervalBox { lo: vec![-0.5], hi: vec![0.5] },
            wheelbase: 2.9,
            braking: BrakingParams::default(),
        }
    }

    pub fn braking() -> Self {
        Scenario {
            id: ScenarioId::Braking,
            x0_box: IntervalBox {
                lo: vec![40.0, 8.0, 8.0],
                hi: vec![60.0, 12.0, 15.0],
            },
            env_box: IntervalBox { lo: vec![0.0], hi: vec![1.0] },
            dt: 0.05,
            horizon: 400,
            control_bounds: IntervalBox { lo: vec![0.0], hi: vec![2.5] },
            wheelbase: 2.9,
            braking: BrakingParams::default(),
        }
    }

    pub fn default_for(id: ScenarioId) -> Self {
        match id {
            ScenarioId::LaneKeeping => Self::lane_keeping(),
            ScenarioId::Braking => Self::braking(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.x0_box.validate()?;
        self.env_box.validate()?;
        self.control_bounds.validate()?;
        let (nx, ne) = match self.id {
            ScenarioId::LaneKeeping => (3, 0),
            ScenarioId::Braking => (3, 1),
        };
        if self.x0_box.dim() != nx || self.env_box.dim() != ne || self.control_bounds.dim() != 1 {
            return Err(Error::Validation(format!(
                "{} expects {nx} initial-condition dims, {ne} env dims and 1 input",
                self.id
            )));
        }
        if self.horizon < 1 {
            return Err(Error::Validation("horizon must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation("dt must be positive".into()));
        }
        Ok(())
    }

    /// Falsifier search box: initial-condition coordinates then env.
    pub fn search_box(&self) -> IntervalBox {
        let mut lo = self.x0_box.lo.clone();
        let mut hi = self.x0_box.hi.clone();
        lo.extend(&self.env_box.lo);
        hi.extend(&self.env_box.hi);
        IntervalBox { lo, hi }
    }

    pub fn search_names(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = match self.id {
            ScenarioId::LaneKeeping => vec!["d0", "theta0", "v0"],
            ScenarioId::Braking => vec!["d0", "v0", "d_car0"],
        };
        names.extend(self.id.env_names());
        names
    }

    /// Expand a search point (initial conditions then env) into a state.
    pub fn initial_state(&self, point: &[f64]) -> SimState {
        let nx = self.x0_box.dim();
        let env = EnvParams { values: point[nx..].to_vec() };
        let values = match self.id {
            ScenarioId::LaneKeeping => {
                let (d, th, v) = (point[0], point[1], point[2]);
                vec![0.0, d, th, 0.0, v, d]
            }
            ScenarioId::Braking => {
                let (d, v, gap) = (point[0], point[1], point[2]);
                vec![d, v, gap, v]
            }
        };
        SimState { values, env }
    }

    /// Initial-state box of the surrogate model.
    pub fn model_x0_box(&self) -> IntervalBox {
        match self.id {
            ScenarioId::LaneKeeping => self.x0_box.clone(),
            ScenarioId::Braking => self.x0_box.select(&[0, 1]),
        }
    }

    pub fn step(&self, x: &SimState, u: &[f64], dt: f64) -> SimState {
        let values = match self.id {
            ScenarioId::LaneKeeping => lane_keeping_dynamics(&x.values, u[0], dt, self.wheelbase),
            ScenarioId::Braking => braking_dynamics(&x.values, u[0], dt, &self.braking),
        };
        SimState { values, env: x.env.clone() }
    }

    /// Surrogate dynamics on the projected state.
    pub fn model_step(&self, m: &[f64], u: &[f64]) -> Vec<f64> {
        match self.id {
            ScenarioId::LaneKeeping => lane_model_dynamics(m, u[0], self.dt, self.wheelbase),
            ScenarioId::Braking => braking_model_dynamics(m, u[0], self.dt),
        }
    }

    /// Controller output for measurement `y`, clamped to the input bounds.
    pub fn control(&self, p: &[f64], y: &[f64]) -> Vec<f64> {
        let (lo, hi) = (self.control_bounds.lo[0], self.control_bounds.hi[0]);
        let u = match self.id {
            ScenarioId::LaneKeeping => controller_lane(p, y[1], y[2], hi.max(-lo)),
            ScenarioId::Braking => controller_brake(p, y[0], y[1], &self.braking),
        };
        vec![u.clamp(lo, hi)]
    }
}

/// A scenario-specific perception emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emulator {
    Lane(LaneEmulator),
    Brake(BrakeEmulator),
}

impl Emulator {
    pub fn default_for(id: ScenarioId) -> Self {
        match id {
            ScenarioId::LaneKeeping => Emulator::Lane(LaneEmulator::default()),
            ScenarioId::Braking => Emulator::Brake(BrakeEmulator::default()),
        }
    }

    pub fn perceive(&self, x: &SimState) -> Measurement {
        match self {
            Emulator::Lane(em) => perceive_lane(em, x),
            Emulator::Brake(em) => perceive_brake(em, x),
        }
    }

    pub fn scenario_id(&self) -> ScenarioId {
        match self {
            Emulator::Lane(_) => ScenarioId::LaneKeeping,
            Emulator::Brake(_) => ScenarioId::Braking,
        }
    }
}

/// `(v, theta_delta, d_hat)`: speed and heading are exact.
pub fn perceive_lane(em: &LaneEmulator, x: &SimState) -> Measurement {
    let v = &x.values;
    let rel = v[2] - v[3];
    Measurement { values: vec![v[4], rel, em.deviation_estimate(v[5], rel)] }
}

/// `(v, d_hat)` where `d_hat` may be `+inf`.
pub fn perceive_brake(em: &BrakeEmulator, x: &SimState) -> Measurement {
    let c = x.env.values.first().copied().unwrap_or(0.0);
    Measurement { values: vec![x.values[1], em.distance_estimate(x.values[0], c)] }
}

/// Closed-loop rollout over the scenario horizon.
pub fn simulate(scenario: &Scenario, emulator: &Emulator, p: &[f64], x0: SimState) -> Result<Trace> {
    let h = scenario.horizon;
    let mut trace = Trace {
        dt: scenario.dt,
        states: Vec::with_capacity(h + 1),
        measurements: Vec::with_capacity(h),
        inputs: Vec::with_capacity(h),
    };
    let mut x = x0;
    for i in 0..h {
        let y = emulator.perceive(&x);
        let u = scenario.control(p, &y.values);
        let next = scenario.step(&x, &u, scenario.dt);
        trace.states.push(x);
        trace.measurements.push(y);
        trace.inputs.push(ControlInput { values: u });
        if next.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationFault {
                step: i,
                reason: "non-finite state".into(),
                partial: Box::new(trace),
            });
        }
        x = next;
    }
    trace.states.push(x);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::replay_check;

    #[test]
    fn zero_steering_drifts_monotonically() {
        let sc = Scenario::lane_keeping();
        let em = Emulator::default_for(sc.id);
        let tr = simulate(&sc, &em, &[0.0, 0.0], sc.initial_state(&[0.0, 0.2, 5.0])).unwrap();
        let ds: Vec<f64> = tr.states.iter().take(21).map(|s| s.values[5]).collect();
        assert!(ds.windows(2).all(|w| w[1] > w[0]));
        let closed = 5.0 * 0.2f64.sin() * 1.0;
        assert!((ds[20] - closed).abs() < 1e-12);
    }

    #[test]
    fn braking_cruise_and_full_brake() {
        let sc = Scenario::braking();
        let x = sc.initial_state(&[50.0, 10.0, 10.0, 0.0]);
        let x1 = sc.step(&x, &[0.0], 0.05);
        assert_eq!(x1.values[0], 49.5);
        let mut x = x;
        for i in 0..120 {
            x = sc.step(&x, &[2.5], 0.05);
            if i == 78 {
                assert!(x.values[1] > 0.0);
            }
            if i == 79 {
                assert!(x.values[1].abs() < 1e-9, "{}", x.values[1]);
            }
        }
        assert_eq!(x.values[1], 0.0);
    }

    #[test]
    fn simulated_traces_replay() {
        for id in [ScenarioId::LaneKeeping, ScenarioId::Braking] {
            let sc = Scenario::default_for(id);
            let em = Emulator::default_for(id);
            let p = match id {
                ScenarioId::LaneKeeping => vec![-2.0, -0.6],
                ScenarioId::Braking => vec![14.0, 6.0],
            };
            let x0 = sc.initial_state(&sc.search_box().center());
            let mut tr = simulate(&sc, &em, &p, x0).unwrap();
            assert_eq!(tr.states.len(), sc.horizon + 1);
            assert!(replay_check(&tr, &sc).unwrap());
            tr.states[7].values[0] += 1.0;
            assert!(!replay_check(&tr, &sc).unwrap());
        }
    }

    #[test]
    fn empty_trace_replays_vacuously() {
        let sc = Scenario::braking();
        let tr = Trace {
            dt: 0.05,
            states: vec![sc.initial_state(&[50.0, 10.0, 8.0, 0.5])],
            measurements: vec![],
            inputs: vec![],
        };
        assert!(replay_check(&tr, &sc).unwrap());
    }

    #[test]
    fn physical_limits_hold() {
        let sc = Scenario::braking();
        let em = Emulator::default_for(sc.id);
        for k in 0..20 {
            let t = k as f64 / 19.0;
            let pt = sc.search_box().from_unit(&[t, 1.0 - t, t * t, (t * 7.0).fract()]);
            let tr = simulate(&sc, &em, &[25.0, 7.0], sc.initial_state(&pt)).unwrap();
            for (s, u) in tr.states.iter().zip(&tr.inputs) {
                assert!(s.values[1] >= 0.0 && s.values[3] >= 0.0);
                assert!((0.0..=2.5).contains(&u.values[0]));
            }
            for y in &tr.measurements {
                assert!(y.values[1] > 0.0);
            }
        }
        let sc = Scenario::lane_keeping();
        let em = Emulator::default_for(sc.id);
        let tr = simulate(&sc, &em, &[-30.0, -30.0], sc.initial_state(&[0.4, 0.25, 6.0])).unwrap();
        assert!(tr.inputs.iter().all(|u| u.values[0].abs() <= 0.5));
    }

    #[test]
    fn lane_traces_mirror() {
        let sc = Scenario::lane_keeping();
        let em = Emulator::default_for(sc.id);
        let p = [-1.5, -0.7];
        let a = simulate(&sc, &em, &p, sc.initial_state(&[0.33, -0.12, 5.2])).unwrap();
        let b = simulate(&sc, &em, &p, sc.initial_state(&[-0.33, 0.12, 5.2])).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa.values[5].to_bits(), (-sb.values[5]).to_bits());
            assert_eq!(sa.values[2].to_bits(), (-sb.values[2]).to_bits());
        }
    }
}
