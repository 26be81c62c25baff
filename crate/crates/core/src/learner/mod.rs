//! Builds the error model from counterexample traces: extract residual
//! datapoints, cluster them in joint (state, residual) space, and fit
//! affine lower/upper bounds per cluster by linear programming.

pub mod kmeans;
pub mod lp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::{Cluster, ComponentErrorModel, SurrogateModel};
use crate::types::{alpha, IntervalBox, Trace};

pub use kmeans::{kmeans, KMeans};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub k_init: usize,
    pub k_max: usize,
    /// Stop growing `k` once the mean interval width is at most this.
    pub width_threshold: f64,
    pub kmeans_restarts: usize,
    pub seed: u64,
    /// Per-feature divisors (state dims then residual). Empty means each
    /// feature's standard deviation.
    pub feature_scaling: Vec<f64>,
    /// Bound on each slope coefficient of the fitted affine bounds.
    pub slope_cap: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            k_init: 2,
            k_max: 8,
            width_threshold: 0.2,
            kmeans_restarts: 4,
            seed: 0,
            feature_scaling: Vec::new(),
            slope_cap: 10.0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_init < 1 || self.k_init > self.k_max {
            return Err(Error::Validation("learn: need 1 <= k_init <= k_max".into()));
        }
        if !(self.slope_cap >= 0.0) || !(self.width_threshold >= 0.0) {
            return Err(Error::Validation(
                "learn: slope_cap and width_threshold must be non-negative".into(),
            ));
        }
        if self.feature_scaling.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Validation("learn: feature_scaling entries must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datapoint {
    pub x_m: Vec<f64>,
    /// `y_i - h*_i(x_m)`; `+inf` for misses.
    pub e: f64,
    pub trace_id: usize,
    pub step: usize,
}

impl Datapoint {
    pub fn is_miss(&self) -> bool {
        self.e == f64::INFINITY
    }
}

/// Residual datapoints of output component `output`, split into finite
/// residuals and misses.
pub fn extract_datapoints(
    traces: &[Trace],
    model: &SurrogateModel,
    output: usize,
) -> Result<(Vec<Datapoint>, Vec<Datapoint>)> {
    let mut points = Vec::new();
    let mut misses = Vec::new();
    for (tid, tr) in traces.iter().enumerate() {
        for (step, y) in tr.measurements.iter().enumerate() {
            let x_m = alpha(&tr.states[step], model.scenario)?.values;
            let yi = y.values[output];
            let dp = |e| Datapoint { x_m: x_m.clone(), e, trace_id: tid, step };
            if yi == f64::INFINITY {
                misses.push(dp(f64::INFINITY));
            } else if yi.is_finite() {
                points.push(dp(yi - model.nominal(&x_m)[output]));
            } else {
                return Err(Error::Validation(format!(
                    "trace {tid} step {step}: non-finite measurement {yi}"
                )));
            }
        }
    }
    Ok((points, misses))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsFit {
    pub cluster: Cluster,
    /// `sum_k low(z_k)` over the fitted points.
    pub objective_low: f64,
    /// `sum_k up(z_k)`.
    pub objective_up: f64,
    /// The LP failed and constant bounds were used instead.
    pub degraded: bool,
}

/// Fit affine bounds `low <= e <= up` over `points` (projected state,
/// residual) with slopes capped at `cap`.
///
/// Low maximizes `sum low(z_k)` and up minimizes `sum up(z_k)`, solved as
/// one LP that also keeps `low <= up` on every corner of `domain`. Among
/// optimal solutions the smallest total slope magnitude is chosen.
pub fn fit_bounds(points: &[(Vec<f64>, f64)], domain: &IntervalBox, cap: f64) -> Result<BoundsFit> {
    if points.is_empty() {
        return Err(Error::Validation("fit_bounds needs at least one point".into()));
    }
    let m = domain.dim();
    let n = points.len() as f64;
    let mu: Vec<f64> = (0..m).map(|j| points.iter().map(|(z, _)| z[j]).sum::<f64>() / n).collect();
    let (lo_e, hi_e) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, e)| (a.min(*e), b.max(*e)));

    let fitted = solve_bounds_lp(points, domain, &mu, cap);
    let (mut cluster, degraded) = match fitted {
        Ok(c) => (c, false),
        Err(err) => {
            log::warn!("bound LP failed ({err}); using constant bounds");
            (Cluster::constant(domain.clone(), lo_e, hi_e), true)
        }
    };

    // For the chosen slopes, the tightest offsets touch the extreme points.
    // Recomputing them in the model's own arithmetic makes containment exact.
    cluster.b_l = 0.0;
    cluster.b_u = 0.0;
    cluster.b_l = points.iter().map(|(z, e)| e - cluster.low(z)).fold(f64::INFINITY, f64::min);
    cluster.b_u = points.iter().map(|(z, e)| e - cluster.up(z)).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..4 {
        let viol_l = points.iter().map(|(z, e)| cluster.low(z) - e).fold(0.0, f64::max);
        let viol_u = points.iter().map(|(z, e)| e - cluster.up(z)).fold(0.0, f64::max);
        if viol_l == 0.0 && viol_u == 0.0 {
            break;
        }
        cluster.b_l -= viol_l;
        cluster.b_u += viol_u;
    }
    let gap = domain
        .corners()
        .iter()
        .map(|c| cluster.low(c) - cluster.up(c))
        .fold(0.0, f64::max);
    cluster.b_l -= gap;

    let objective_low = points.iter().map(|(z, _)| cluster.low(z)).sum();
    let objective_up = points.iter().map(|(z, _)| cluster.up(z)).sum();
    Ok(BoundsFit { cluster, objective_low, objective_up, degraded })
}

fn solve_bounds_lp(
    points: &[(Vec<f64>, f64)],
    domain: &IntervalBox,
    mu: &[f64],
    cap: f64,
) -> Result<Cluster> {
    let m = mu.len();
    // Variables: a_l (m), b_l, a_u (m), b_u, then for the tie-break t_l (m), t_u (m).
    let nv = 2 * m + 2;
    let (bl, au, bu) = (m, m + 1, 2 * m + 1);
    let mut g: Vec<Vec<f64>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    for (z, e) in points {
        let u: Vec<f64> = z.iter().zip(mu).map(|(a, b)| a - b).collect();
        let mut row = vec![0.0; nv];
        row[..m].copy_from_slice(&u);
        row[bl] = 1.0;
        g.push(row);
        h.push(*e);
        let mut row = vec![0.0; nv];
        for j in 0..m {
            row[au + j] = -u[j];
        }
        row[bu] = -1.0;
        g.push(row);
        h.push(-e);
    }
    for j in 0..m {
        for off in [0, au] {
            for s in [1.0, -1.0] {
                let mut row = vec![0.0; nv];
                row[off + j] = s;
                g.push(row);
                h.push(cap);
            }
        }
    }
    for c in domain.corners() {
        let mut row = vec![0.0; nv];
        for j in 0..m {
            let cj = c[j] - mu[j];
            row[j] = cj;
            row[au + j] = -cj;
        }
        row[bl] = 1.0;
        row[bu] = -1.0;
        g.push(row);
        h.push(0.0);
    }
    // With centered coordinates the objective reduces to n (b_l - b_u).
    let mut c = vec![0.0; nv];
    c[bl] = 1.0;
    c[bu] = -1.0;
    let first = lp::maximize(&c, &g, &h)?;

    // Tie-break toward small slopes.
    let tol = 1e-10 * (1.0 + first.objective.abs());
    let nv2 = nv + 2 * m;
    let widen = |row: &Vec<f64>| {
        let mut r = row.clone();
        r.resize(nv2, 0.0);
        r
    };
    let mut g2: Vec<Vec<f64>> = g.iter().map(widen).collect();
    let mut h2 = h.clone();
    for j in 0..m {
        for (a_idx, t_idx) in [(j, nv + j), (au + j, nv + m + j)] {
            for s in [1.0, -1.0] {
                let mut row = vec![0.0; nv2];
                row[a_idx] = s;
                row[t_idx] = -1.0;
                g2.push(row);
                h2.push(0.0);
            }
        }
    }
    let mut row = vec![0.0; nv2];
    row[bl] = -1.0;
    row[bu] = 1.0;
    g2.push(row);
    h2.push(-(first.objective - tol));
    let mut c2 = vec![0.0; nv2];
    for v in c2.iter_mut().skip(nv) {
        *v = -1.0;
    }
    let z = match lp::maximize(&c2, &g2, &h2) {
        Ok(s) => s.z,
        Err(err) => {
            log::debug!("slope tie-break LP failed ({err}); keeping first solution");
            first.z
        }
    };

    let a_l = z[..m].to_vec();
    let a_u = z[au..au + m].to_vec();
    let shift = |a: &[f64]| a.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>();
    Ok(Cluster {
        domain: domain.clone(),
        b_l: z[bl] - shift(&a_l),
        b_u: z[bu] - shift(&a_u),
        a_l,
        a_u,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub output: usize,
    pub k: usize,
    pub mean_width: f64,
    pub degraded_clusters: usize,
    pub datapoints: Vec<Datapoint>,
    pub misses: Vec<Datapoint>,
    /// Cluster index of each datapoint.
    pub labels: Vec<usize>,
}

fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

fn fit_component(
    comp: &ComponentErrorModel,
    points: &[Datapoint],
    cfg: &LearnConfig,
) -> Result<(Vec<Cluster>, usize, f64, usize, Vec<usize>)> {
    let dims = &comp.dims;
    let zs: Vec<Vec<f64>> = points.iter().map(|p| comp.project(&p.x_m)).collect();
    let nf = dims.len() + 1;
    let scales: Vec<f64> = if cfg.feature_scaling.len() == nf {
        cfg.feature_scaling.clone()
    } else {
        (0..nf)
            .map(|j| {
                let s = if j < dims.len() {
                    std_dev(zs.iter().map(|z| z[j]))
                } else {
                    std_dev(points.iter().map(|p| p.e))
                };
                if s > 1e-12 { s } else { 1.0 }
            })
            .collect()
    };
    let features: Vec<Vec<f64>> = zs
        .iter()
        .zip(points)
        .map(|(z, p)| {
            z.iter()
                .chain(std::iter::once(&p.e))
                .zip(&scales)
                .map(|(v, s)| v / s)
                .collect()
        })
        .collect();

    let mut k = cfg.k_init;
    loop {
        let seed = cfg.seed ^ ((comp.output as u64) << 32) ^ k as u64;
        let km = kmeans(&features, k, seed, cfg.kmeans_restarts);
        let mut clusters = Vec::with_capacity(km.k);
        let mut degraded = 0;
        for j in 0..km.k {
            let members: Vec<(Vec<f64>, f64)> = km
                .labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == j)
                .map(|(i, _)| (zs[i].clone(), points[i].e))
                .collect();
            if members.is_empty() {
                // Keep indices aligned with labels; an empty cluster matches nothing.
                clusters.push(None);
                continue;
            }
            let domain = IntervalBox::bounding(members.iter().map(|(z, _)| z.as_slice()));
            let fit = fit_bounds(&members, &domain, cfg.slope_cap)?;
            degraded += fit.degraded as usize;
            clusters.push(Some(fit.cluster));
        }
        let mean_width = km
            .labels
            .iter()
            .zip(&zs)
            .map(|(&l, z)| {
                let c = clusters[l].as_ref().expect("member cluster exists");
                c.up(z) - c.low(z)
            })
            .sum::<f64>()
            / points.len() as f64;
        let done = mean_width <= cfg.width_threshold || k >= cfg.k_max || km.k < k;
        if done {
            // Drop empty clusters and renumber labels.
            let mut remap = vec![usize::MAX; clusters.len()];
            let mut kept = Vec::new();
            for (j, c) in clusters.into_iter().enumerate() {
                if let Some(c) = c {
                    remap[j] = kept.len();
                    kept.push(c);
                }
            }
            let labels = km.labels.iter().map(|&l| remap[l]).collect();
            let n = kept.len();
            return Ok((kept, n, mean_width, degraded, labels));
        }
        k += 1;
    }
}

/// Rebuild the error model of every component of `prev` from `traces`.
///
/// Components without datapoints keep their previous error model. The
/// result contains every training datapoint (`contains` holds at tolerance
/// `1e-9`); a violation is reported as an error.
pub fn build_error_model(
    traces: &[Trace],
    prev: &SurrogateModel,
    cfg: &LearnConfig,
) -> Result<(SurrogateModel, Vec<ComponentFit>)> {
    cfg.validate()?;
    let mut model = prev.clone();
    let mut fits = Vec::new();
    for (ci, comp) in prev.error.iter().enumerate() {
        let (points, misses) = extract_datapoints(traces, prev, comp.output)?;
        if points.is_empty() && misses.is_empty() {
            continue;
        }
        let mut new = ComponentErrorModel::empty(comp.output, comp.dims.clone());
        let (mut k, mut mean_width, mut degraded, mut labels) = (0, 0.0, 0, Vec::new());
        if !points.is_empty() {
            let (clusters, kk, w, d, l) = fit_component(comp, &points, cfg)?;
            new.clusters = clusters;
            (k, mean_width, degraded, labels) = (kk, w, d, l);
        }
        if !misses.is_empty() {
            let zs: Vec<Vec<f64>> = misses.iter().map(|p| comp.project(&p.x_m)).collect();
            new.miss_region = Some(IntervalBox::bounding(zs.iter().map(Vec::as_slice)));
        }
        model.error[ci] = new;
        fits.push(ComponentFit {
            output: comp.output,
            k,
            mean_width,
            degraded_clusters: degraded,
            datapoints: points,
            misses,
            labels,
        });
    }
    for tr in traces {
        for (step, y) in tr.measurements.iter().enumerate() {
            let x_m = alpha(&tr.states[step], model.scenario)?.values;
            if !model.contains(&x_m, &y.values) {
                return Err(Error::Validation(format!(
                    "learned model does not contain datapoint at step {step}"
                )));
            }
        }
    }
    Ok((model, fits))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn canonical(clusters: &[Cluster]) -> Vec<&Cluster> {
    let mut v: Vec<&Cluster> = clusters.iter().collect();
    let key = |c: &Cluster| -> Vec<f64> {
        c.domain.lo.iter().chain(&c.domain.hi).copied().collect()
    };
    v.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    v
}

/// Same cluster structure with all numbers within `tol`, comparing
/// clusters in canonical order (by domain lower corner).
pub fn model_equal(m1: &SurrogateModel, m2: &SurrogateModel, tol: f64) -> bool {
    if m1.scenario != m2.scenario || m1.error.len() != m2.error.len() {
        return false;
    }
    m1.error.iter().zip(&m2.error).all(|(a, b)| {
        if a.output != b.output || a.clusters.len() != b.clusters.len() {
            return false;
        }
        let miss_ok = match (&a.miss_region, &b.miss_region) {
            (None, None) => true,
            (Some(x), Some(y)) => close(&x.lo, &y.lo, tol) && close(&x.hi, &y.hi, tol),
            _ => false,
        };
        miss_ok
            && canonical(&a.clusters).iter().zip(canonical(&b.clusters)).all(|(x, y)| {
                close(&x.domain.lo, &y.domain.lo, tol)
                    && close(&x.domain.hi, &y.domain.hi, tol)
                    && close(&x.a_l, &y.a_l, tol)
                    && close(&x.a_u, &y.a_u, tol)
                    && (x.b_l - y.b_l).abs() <= tol
                    && (x.b_u - y.b_u).abs() <= tol
            })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, Emulator, Scenario};
    use crate::types::{Measurement, SimState};
    use proptest::prelude::*;

    fn one_d(points: &[(f64, f64)]) -> Vec<(Vec<f64>, f64)> {
        points.iter().map(|(x, e)| (vec![*x], *e)).collect()
    }

    fn dom(points: &[(Vec<f64>, f64)]) -> IntervalBox {
        IntervalBox::bounding(points.iter().map(|(z, _)| z.as_slice()))
    }

    #[test]
    fn collinear_points_fit_exactly() {
        let pts = one_d(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]);
        let f = fit_bounds(&pts, &dom(&pts), 10.0).unwrap();
        for (a, b) in [(f.cluster.a_l[0], f.cluster.b_l), (f.cluster.a_u[0], f.cluster.b_u)] {
            assert!((a - 1.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn single_point_gives_constant() {
        let pts = one_d(&[(3.0, 0.7)]);
        let f = fit_bounds(&pts, &dom(&pts), 10.0).unwrap();
        assert_eq!(f.cluster.a_l[0], 0.0);
        assert_eq!(f.cluster.a_u[0], 0.0);
        assert!((f.cluster.b_l - 0.7).abs() < 1e-12 && (f.cluster.b_u - 0.7).abs() < 1e-12);
    }

    #[test]
    fn equal_residuals_give_constant() {
        let pts: Vec<(Vec<f64>, f64)> =
            (0..6).map(|i| (vec![i as f64 * 0.3, (i * i) as f64 * 0.1], -0.4)).collect();
        let f = fit_bounds(&pts, &dom(&pts), 10.0).unwrap();
        for (z, _) in &pts {
            assert!((f.cluster.low(z) + 0.4).abs() < 1e-9);
            assert!((f.cluster.up(z) + 0.4).abs() < 1e-9);
        }
        assert!(f.cluster.a_l.iter().chain(&f.cluster.a_u).all(|a| a.abs() < 1e-9));
    }

    #[test]
    fn two_d_bounds_are_valid_on_corners() {
        let pts: Vec<(Vec<f64>, f64)> = (0..20)
            .map(|i| {
                let x = (i % 5) as f64 * 0.1;
                let y = (i / 5) as f64 * 0.05;
                (vec![x, y], ((i * 7919) % 13) as f64 * 0.01 + x)
            })
            .collect();
        let d = dom(&pts);
        let f = fit_bounds(&pts, &d, 10.0).unwrap();
        for c in d.corners() {
            assert!(f.cluster.low(&c) <= f.cluster.up(&c) + 1e-12);
        }
        for (z, e) in &pts {
            assert!(f.cluster.low(z) <= e + 1e-9 && *e <= f.cluster.up(z) + 1e-9);
        }
    }

    fn synthetic_traces(scenario: &Scenario, n: usize) -> Vec<Trace> {
        let em = Emulator::default_for(scenario.id);
        let p = match scenario.id {
            crate::ScenarioId::LaneKeeping => vec![-0.5, -0.8],
            crate::ScenarioId::Braking => vec![25.0, 7.0],
        };
        let b = scenario.search_box();
        (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64;
                let u: Vec<f64> = (0..b.dim()).map(|j| (t * (j as f64 + 1.7)).fract()).collect();
                simulate(scenario, &em, &p, scenario.initial_state(&b.from_unit(&u))).unwrap()
            })
            .collect()
    }

    #[test]
    fn learned_model_contains_training_data() {
        for sc in [Scenario::lane_keeping(), Scenario::braking()] {
            let traces = synthetic_traces(&sc, 6);
            let m0 = SurrogateModel::zero_error(&sc);
            let (m, fits) = build_error_model(&traces, &m0, &LearnConfig::default()).unwrap();
            assert_eq!(fits[0].datapoints.len() + fits[0].misses.len(), 6 * sc.horizon);
            for tr in &traces {
                for (s, y) in tr.states.iter().zip(&tr.measurements) {
                    let x = alpha(s, sc.id).unwrap().values;
                    assert!(m.contains(&x, &y.values));
                }
            }
        }
    }

    #[test]
    fn rebuild_is_deterministic() {
        let sc = Scenario::lane_keeping();
        let traces = synthetic_traces(&sc, 4);
        let m0 = SurrogateModel::zero_error(&sc);
        let a = build_error_model(&traces, &m0, &LearnConfig::default()).unwrap().0;
        let b = build_error_model(&traces, &m0, &LearnConfig::default()).unwrap().0;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(model_equal(&a, &b, 1e-6));
    }

    #[test]
    fn zero_residuals_give_zero_cluster() {
        let mut sc = Scenario::lane_keeping();
        sc.horizon = 20;
        let em = Emulator::Lane(crate::sim::LaneEmulator { ideal: true, ..Default::default() });
        let tr = simulate(&sc, &em, &[-1.0, -1.0], sc.initial_state(&[0.2, 0.1, 5.0])).unwrap();
        let m0 = SurrogateModel::zero_error(&sc);
        let (m, fits) = build_error_model(&[tr], &m0, &LearnConfig::default()).unwrap();
        assert!(fits[0].datapoints.iter().all(|d| d.e == 0.0));
        for c in &m.error[0].clusters {
            assert!(c.b_l.abs() < 1e-12 && c.b_u.abs() < 1e-12);
        }
        let set = &m.output_set(&[0.15, 0.05, 5.0])[2];
        assert_eq!(set.intervals.iter().map(|i| i.1 - i.0).fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn miss_steps_go_to_miss_list() {
        let sc = Scenario::braking();
        let states: Vec<SimState> =
            (0..31).map(|i| sc.initial_state(&[50.0 - i as f64, 10.0, 8.0, 0.2])).collect();
        let measurements: Vec<Measurement> = (0..30)
            .map(|i| Measurement {
                values: vec![10.0, if i < 20 { f64::INFINITY } else { 30.0 - i as f64 * 0.5 }],
            })
            .collect();
        let inputs = (0..30).map(|_| crate::ControlInput { values: vec![0.0] }).collect();
        let tr = Trace { dt: 0.05, states, measurements, inputs };
        let m0 = SurrogateModel::zero_error(&sc);
        let (pts, misses) = extract_datapoints(&[tr], &m0, 1).unwrap();
        assert_eq!(misses.len(), 20);
        assert_eq!(pts.len(), 10);
    }

    #[test]
    fn fig5_like_data_separates_small_and_large_error() {
        let sc = Scenario::lane_keeping();
        let m0 = SurrogateModel::zero_error(&sc);
        // Synthetic residuals: tiny near the origin, large outside.
        let mut states = Vec::new();
        let mut measurements = Vec::new();
        for i in 0..200 {
            let d = -1.0 + 0.01 * i as f64;
            let th = 0.0;
            let e = if d.abs() <= 0.3 { 0.01 * ((i % 5) as f64 - 2.0) } else { d.signum() * (0.25 + 0.5 * ((i * 37 % 17) as f64 / 17.0)) };
            states.push(sc.initial_state(&[d, th, 5.0]));
            measurements.push(Measurement { values: vec![5.0, 0.0, d + e] });
        }
        states.push(states[0].clone());
        let inputs = (0..200).map(|_| crate::ControlInput { values: vec![0.0] }).collect();
        let tr = Trace { dt: 0.05, states, measurements, inputs };
        let (m, _) = build_error_model(&[tr], &m0, &LearnConfig::default()).unwrap();
        let clusters = &m.error[0].clusters;
        assert!(clusters.len() >= 2);
        let width = |c: &Cluster| c.up(&c.domain.center()) - c.low(&c.domain.center());
        let near = clusters.iter().filter(|c| c.domain.contains(&[0.0, 0.0])).map(width).fold(f64::INFINITY, f64::min);
        let far = clusters.iter().filter(|c| c.domain.lo[0] > 0.3 || c.domain.hi[0] < -0.3).map(width).fold(0.0, f64::max);
        assert!(near < far, "near {near} far {far}");
    }

    #[test]
    fn model_equal_cases() {
        let sc = Scenario::lane_keeping();
        let mut m = SurrogateModel::zero_error(&sc);
        m.error[0].clusters = vec![
            Cluster::constant(IntervalBox { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] }, -0.1, 0.1),
            Cluster::constant(IntervalBox { lo: vec![-1.0, 0.0], hi: vec![0.0, 1.0] }, 0.2, 0.5),
        ];
        assert!(model_equal(&m, &m, 1e-6));
        let mut shifted = m.clone();
        shifted.error[0].clusters[1].b_u += 1.0;
        assert!(!model_equal(&m, &shifted, 1e-6));
        let mut swapped = m.clone();
        swapped.error[0].clusters.reverse();
        assert!(model_equal(&m, &swapped, 1e-6));
    }

    proptest! {
        #[test]
        fn fitted_bounds_contain_points(
            pts in prop::collection::vec((-5.0..5.0f64, -2.0..2.0f64, -3.0..3.0f64), 1..25)
        ) {
            let pts: Vec<(Vec<f64>, f64)> = pts.into_iter().map(|(a, b, e)| (vec![a, b], e)).collect();
            let d = dom(&pts);
            let f = fit_bounds(&pts, &d, 10.0).unwrap();
            for (z, e) in &pts {
                prop_assert!(f.cluster.low(z) <= e + 1e-9);
                prop_assert!(*e <= f.cluster.up(z) + 1e-9);
            }
            for c in d.corners() {
                prop_assert!(f.cluster.low(&c) <= f.cluster.up(&c) + 1e-9);
            }
            prop_assert!(f.cluster.a_l.iter().chain(&f.cluster.a_u).all(|a| a.abs() <= 10.0 + 1e-9));
        }

        #[test]
        fn adding_points_keeps_original_points_covered(
            base in prop::collection::vec((-5.0..5.0f64, -3.0..3.0f64), 2..10),
            extra in prop::collection::vec((-5.0..5.0f64, -3.0..3.0f64), 1..5),
        ) {
            let a = one_d(&base);
            let mut all = a.clone();
            all.extend(one_d(&extra));
            let fa = fit_bounds(&a, &dom(&a), 10.0).unwrap();
            let fb = fit_bounds(&all, &dom(&all), 10.0).unwrap();
            let width = |f: &BoundsFit| -> f64 {
                a.iter().map(|(z, _)| f.cluster.up(z) - f.cluster.low(z)).sum()
            };
            prop_assert!(width(&fb) >= width(&fa) - 1e-7);
        }
    }
}
