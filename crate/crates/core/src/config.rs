//! Declarative run configuration loaded from TOML.
//!
//! Loading is two-pass. The user file is first deserialized on its own so
//! unknown keys and type errors are reported with their line. It is then
//! merged over the scenario's full defaults, which yields the effective
//! configuration echoed into the run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::LoopConfig;
use crate::sim::braking::BrakingParams;
use crate::sim::{Emulator, Scenario};
use crate::spec::{builtin_specs, parse_formula, SafetyFormula, SpecParams, Target};
use crate::types::{IntervalBox, ScenarioId};

/// Scenario constants that may be overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: usize,
    pub x0_box: IntervalBox,
    pub env_box: IntervalBox,
    pub control_bounds: IntervalBox,
    pub wheelbase: f64,
    pub braking: BrakingParams,
}

impl SimSection {
    pub fn from_scenario(s: &Scenario) -> Self {
        SimSection {
            dt: s.dt,
            horizon: s.horizon,
            x0_box: s.x0_box.clone(),
            env_box: s.env_box.clone(),
            control_bounds: s.control_bounds.clone(),
            wheelbase: s.wheelbase,
            braking: s.braking.clone(),
        }
    }
}

impl Default for SimSection {
    fn default() -> Self {
        Self::from_scenario(&Scenario::lane_keeping())
    }
}

/// Thresholds of the built-in specifications, and optional formula
/// overrides in the s-expression grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecSection {
    pub eps1: f64,
    pub eps2: f64,
    pub lane_deviation_max: f64,
    pub lane_target_deviation: f64,
    pub lane_target_heading: f64,
    pub lane_reach_seconds: f64,
    pub lane_reach_and_stay: bool,
    /// Require the braking surrogate to get within `brake_reach_distance`
    /// by `brake_reach_seconds`.
    pub brake_reach: bool,
    pub brake_reach_distance: f64,
    pub brake_reach_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_s: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_m: Option<String>,
}

impl Default for SpecSection {
    fn default() -> Self {
        SpecSection {
            eps1: 0.5,
            eps2: 0.5,
            lane_deviation_max: 1.0,
            lane_target_deviation: 0.3,
            lane_target_heading: 0.1,
            lane_reach_seconds: 4.0,
            lane_reach_and_stay: true,
            brake_reach: true,
            brake_reach_distance: 6.0,
            brake_reach_seconds: 11.0,
            phi_s: None,
            phi_m: None,
        }
    }
}

/// Which optional artifacts a run writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    /// Learner datapoints with cluster labels.
    pub datapoints: bool,
    /// Per-iteration falsifier histories and synthesis logs.
    pub plot_data: bool,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection { datapoints: true, plot_data: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioId,
    pub output_dir: PathBuf,
    pub sim: SimSection,
    pub emulator: Emulator,
    pub spec: SpecSection,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::default_for(ScenarioId::LaneKeeping)
    }
}

impl RunConfig {
    pub fn default_for(id: ScenarioId) -> Self {
        RunConfig {
            scenario: id,
            output_dir: PathBuf::from(format!("runs/{id}")),
            sim: SimSection::from_scenario(&Scenario::default_for(id)),
            emulator: Emulator::default_for(id),
            spec: SpecSection::default(),
            loop_cfg: LoopConfig::default_for(id),
            export: ExportSection::default(),
        }
    }

    /// Parse, default and validate a configuration text. `origin` names
    /// the source in diagnostics.
    pub fn from_toml_str(src: &str, origin: &str) -> Result<Self> {
        let located = |e: toml::de::Error| Error::Config(format!("{origin}: {e}"));
        // Pass 1: shape check against the user text, for line-located errors.
        let _: RunConfig = toml::from_str(src).map_err(located)?;
        let user: toml::Table = toml::from_str(src).map_err(located)?;
        let id = match user.get("scenario") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::Config(format!("{origin}: scenario must be a string")))?
                .parse::<ScenarioId>()?,
            None => ScenarioId::LaneKeeping,
        };
        if let Some(em) = user.get("emulator").and_then(|v| v.as_table()) {
            let expected = match id {
                ScenarioId::LaneKeeping => "lane",
                ScenarioId::Braking => "brake",
            };
            if let Some(k) = em.keys().find(|k| k.as_str() != expected) {
                return Err(Error::Config(format!(
                    "{origin}: emulator.{k} does not match scenario {id} (expected emulator.{expected})"
                )));
            }
        }
        // Pass 2: merge over the scenario defaults.
        let mut merged = toml::Table::try_from(Self::default_for(id))
            .map_err(|e| Error::Config(format!("serializing defaults: {e}")))?;
        merge(&mut merged, user);
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    /// The fully defaulted configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::Validation(format!("{name} {msg}")));
        if self.sim.horizon < 1 {
            return field("sim.horizon", "must be >= 1");
        }
        if !(self.sim.dt > 0.0 && self.sim.dt.is_finite()) {
            return field("sim.dt", "must be positive and finite");
        }
        if !(self.sim.wheelbase > 0.0) {
            return field("sim.wheelbase", "must be positive");
        }
        if !(self.sim.braking.brake_max > 0.0) {
            return field("sim.braking.brake_max", "must be positive");
        }
        if self.emulator.scenario_id() != self.scenario {
            return field("emulator", "does not match the scenario");
        }
        let s = &self.spec;
        for (name, v) in [("spec.eps1", s.eps1), ("spec.eps2", s.eps2)] {
            if !(v > 0.0 && v.is_finite()) {
                return field(name, "must be positive and finite");
            }
        }
        for (name, v) in [
            ("spec.lane_deviation_max", s.lane_deviation_max),
            ("spec.lane_target_deviation", s.lane_target_deviation),
            ("spec.lane_target_heading", s.lane_target_heading),
            ("spec.lane_reach_seconds", s.lane_reach_seconds),
            ("spec.brake_reach_distance", s.brake_reach_distance),
            ("spec.brake_reach_seconds", s.brake_reach_seconds),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return field(name, "must be non-negative and finite");
            }
        }
        if self.loop_cfg.param_bounds.dim() != self.scenario.param_names().len() {
            return field(
                "loop.param_bounds",
                &format!("must have {} dimensions", self.scenario.param_names().len()),
            );
        }
        self.scenario_instance().validate()?;
        self.loop_cfg.validate().map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("loop: {m}")),
            other => other,
        })?;
        self.specs().map(|_| ())
    }

    pub fn scenario_instance(&self) -> Scenario {
        Scenario {
            id: self.scenario,
            x0_box: self.sim.x0_box.clone(),
            env_box: self.sim.env_box.clone(),
            dt: self.sim.dt,
            horizon: self.sim.horizon,
            control_bounds: self.sim.control_bounds.clone(),
            wheelbase: self.sim.wheelbase,
            braking: self.sim.braking.clone(),
        }
    }

    pub fn spec_params(&self) -> SpecParams {
        let s = &self.spec;
        SpecParams {
            dt: self.sim.dt,
            horizon: self.sim.horizon,
            lane_deviation_max: s.lane_deviation_max,
            lane_target_deviation: s.lane_target_deviation,
            lane_target_heading: s.lane_target_heading,
            lane_reach_seconds: s.lane_reach_seconds,
            lane_reach_and_stay: s.lane_reach_and_stay,
            eps1: s.eps1,
            eps2: s.eps2,
            brake_reach: s.brake_reach.then_some((s.brake_reach_distance, s.brake_reach_seconds)),
        }
    }

    /// `(phi_s, phi_m)`, the built-ins unless overridden.
    pub fn specs(&self) -> Result<(SafetyFormula, SafetyFormula)> {
        let (mut phi_s, mut phi_m) = builtin_specs(self.scenario, &self.spec_params());
        let wrap = |name: &str, e: Error| Error::Config(format!("{name}: {e}"));
        if let Some(src) = &self.spec.phi_s {
            phi_s = parse_formula(src, self.scenario, Target::Sim).map_err(|e| wrap("spec.phi_s", e))?;
        }
        if let Some(src) = &self.spec.phi_m {
            phi_m = parse_formula(src, self.scenario, Target::Model).map_err(|e| wrap("spec.phi_m", e))?;
        }
        let h = self.sim.horizon;
        for (name, f) in [("spec.phi_s", &phi_s), ("spec.phi_m", &phi_m)] {
            if f.root.lookahead() > h {
                return Err(Error::Validation(format!(
                    "{name} looks {} steps ahead but sim.horizon is {h}",
                    f.root.lookahead()
                )));
            }
        }
        Ok((phi_s, phi_m))
    }
}

/// Recursively overlay `over` onto `base`; non-table values replace.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_lane_defaults() {
        let cfg = RunConfig::from_toml_str("", "t").unwrap();
        assert_eq!(cfg, RunConfig::default_for(ScenarioId::LaneKeeping));
    }

    #[test]
    fn braking_defaults_follow_scenario() {
        let cfg = RunConfig::from_toml_str("scenario = \"braking\"\n[loop.learn]\nkmeans_restarts = 2\n", "t")
            .unwrap();
        assert_eq!(cfg.sim.horizon, 400);
        assert_eq!(cfg.loop_cfg.learn.k_max, 12);
        assert_eq!(cfg.loop_cfg.learn.kmeans_restarts, 2);
        assert_eq!(cfg.loop_cfg.p_init, vec![25.0, 7.0]);
        assert!(matches!(cfg.emulator, Emulator::Brake(_)));
        assert_eq!(cfg.spec_params().brake_reach, Some((6.0, 11.0)));
    }

    #[test]
    fn effective_config_round_trips() {
        for id in [ScenarioId::LaneKeeping, ScenarioId::Braking] {
            let src = format!("scenario = \"{id}\"\n[loop]\nmaster_seed = 5\n[emulator.{}]\nseed = 3\n",
                if id == ScenarioId::Braking { "brake" } else { "lane" });
            let cfg = RunConfig::from_toml_str(&src, "t").unwrap();
            let echoed = cfg.to_toml().unwrap();
            let again = RunConfig::from_toml_str(&echoed, "echo").unwrap();
            assert_eq!(cfg, again);
            assert_eq!(echoed, again.to_toml().unwrap());
        }
    }

    #[test]
    fn unknown_key_is_line_located() {
        let err = RunConfig::from_toml_str("scenario = \"lane_keeping\"\n\n[sim]\nhorizn = 3\n", "cfg.toml")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 4"), "{err}");
        assert!(err.contains("horizn"), "{err}");
    }

    #[test]
    fn zero_horizon_names_the_field() {
        let err = RunConfig::from_toml_str("[sim]\nhorizon = 0\n", "t").unwrap_err().to_string();
        assert!(err.contains("horizon must be >= 1"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        for src in [
            "scenario = \"parking\"",
            "[spec]\neps1 = -1.0",
            "[loop]\np_init = [1.0, 1.0]",
            "[loop]\nmax_outer_iterations = 0",
            "[emulator.brake]\nseed = 1",
            "[spec]\nphi_s = \"(always 0 999 (le (abs d) 1))\"",
            "[spec]\nphi_m = \"(always 0 10 (le (abs nope) 1))\"",
            "[sim]\nhorizon = \"long\"",
        ] {
            assert!(RunConfig::from_toml_str(src, "t").is_err(), "{src}");
        }
    }

    #[test]
    fn formula_override_replaces_builtin() {
        let cfg = RunConfig::from_toml_str("[spec]\nphi_m = \"(always 0 160 (le (abs d) 2))\"\n", "t").unwrap();
        let (_, phi_m) = cfg.specs().unwrap();
        assert_eq!(phi_m.root.lookahead(), 160);
        assert_ne!(phi_m, builtin_specs(ScenarioId::LaneKeeping, &cfg.spec_params()).1);
    }
}
