//! Lane keeping: kinematic bicycle at constant speed on a straight road.
//!
//! State layout `[x, y, theta_av, theta_r, v, d]`.

/// One forward-Euler step. Heading integrates the steering angle `u`,
/// deviation integrates the lateral velocity at the old relative heading.
pub fn lane_keeping_dynamics(x: &[f64], u: f64, dt: f64, wheelbase: f64) -> Vec<f64> {
    let (px, py, th_av, th_r, v, d) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let rel = th_av - th_r;
    vec![
        px + dt * v * th_av.cos(),
        py + dt * v * th_av.sin(),
        th_av + dt * (v / wheelbase) * u.tan(),
        th_r,
        v,
        d + dt * v * rel.sin(),
    ]
}

/// The same update on the projected state `[d, theta_delta, v]`.
pub fn lane_model_dynamics(m: &[f64], u: f64, dt: f64, wheelbase: f64) -> Vec<f64> {
    let (d, rel, v) = (m[0], m[1], m[2]);
    vec![d + dt * v * rel.sin(), rel + dt * (v / wheelbase) * u.tan(), v]
}

/// `u = clamp(p1 * theta_hat + p2 * d_hat, -steer_max, steer_max)`.
pub fn controller_lane(p: &[f64], theta_hat: f64, d_hat: f64, steer_max: f64) -> f64 {
    (p[0] * theta_hat + p[1] * d_hat).clamp(-steer_max, steer_max)
}
