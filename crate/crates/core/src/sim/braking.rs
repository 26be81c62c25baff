//! Emergency braking in front of a lane closure, with one rear car.
//!
//! State layout `[d, v, d_car, v_rear]`: distance to the cones, ego speed,
//! gap to the rear car and rear-car speed.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrakingParams {
    pub brake_max: f64,
    /// Distance before the cones at which the rear car plans to stop.
    pub rear_stop_margin: f64,
    /// The rear car plans against the ego's footprint plus this allowance.
    pub rear_queue_allowance: f64,
    /// The ego's ideal-stop law aims this far before the estimated cones.
    pub standoff: f64,
}

impl Default for BrakingParams {
    fn default() -> Self {
        BrakingParams {
            brake_max: 2.5,
            rear_stop_margin: 1.0,
            rear_queue_allowance: 3.0,
            standoff: 2.0,
        }
    }
}

/// Braking magnitude of the rear car: the constant deceleration that stops
/// it `rear_stop_margin` before `d_rear_to_cone`, saturated.
pub fn rear_car_policy(v_rear: f64, d_rear_to_cone: f64, p: &BrakingParams) -> f64 {
    if v_rear <= 0.0 {
        return 0.0;
    }
    let room = d_rear_to_cone - p.rear_stop_margin;
    if room <= 0.0 {
        return p.brake_max;
    }
    (v_rear * v_rear / (2.0 * room)).clamp(0.0, p.brake_max)
}

pub fn braking_dynamics(x: &[f64], u: f64, dt: f64, p: &BrakingParams) -> Vec<f64> {
    let (d, v, d_car, v_rear) = (x[0], x[1], x[2], x[3]);
    let u_rear = rear_car_policy(v_rear, d + d_car - p.rear_queue_allowance, p);
    vec![
        d - dt * v,
        (v - dt * u).max(0.0),
        d_car + dt * (v - v_rear),
        (v_rear - dt * u_rear).max(0.0),
    ]
}

pub fn braking_model_dynamics(m: &[f64], u: f64, dt: f64) -> Vec<f64> {
    vec![m[0] - dt * m[1], (m[1] - dt * u).max(0.0)]
}

/// Trust the distance estimate only below `p1`; otherwise slow to `p2`.
/// An infinite estimate (no detection) means cruise.
pub fn controller_brake(p: &[f64], v_hat: f64, d_hat: f64, bp: &BrakingParams) -> f64 {
    if d_hat == f64::INFINITY {
        return 0.0;
    }
    let d_hat = if d_hat > 0.0 { d_hat } else { 1e-3 };
    if d_hat <= p[0] {
        let room = d_hat - bp.standoff;
        if room <= 0.0 {
            return bp.brake_max;
        }
        (v_hat * v_hat / (2.0 * room)).clamp(0.0, bp.brake_max)
    } else {
        (v_hat - p[1]).clamp(0.0, bp.brake_max)
    }
}
