//! Counterexample-guided joint synthesis of an interval-valued perception
//! surrogate and a parametric feedback controller.
//!
//! The outer loop alternates three stages: synthesize controller parameters
//! against the surrogate model, falsify them on the full simulator, and
//! refine the surrogate's error model from the counterexamples found.

pub mod config;
pub mod error;
pub mod export;
pub mod falsifier;
pub mod learner;
pub mod orchestrator;
pub mod sim;
pub mod spec;
pub mod surrogate;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    alpha, replay_check, ControlInput, ControllerParams, EnvParams, IntervalBox, Measurement,
    ModelState, ModelTrace, ScenarioId, SimState, Trace,
};
