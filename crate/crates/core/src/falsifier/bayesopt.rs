//! Gaussian-process proposal step with expected improvement toward lower
//! robustness.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::types::IntervalBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    /// Latin-hypercube samples before the GP takes over.
    pub n_init: usize,
    pub n_candidates: usize,
    /// Kernel length scale as a fraction of each box width.
    pub length_scale: f64,
    pub noise: f64,
    /// At most this many history points enter the GP (best ones first,
    /// then the most recent).
    pub max_gp_points: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            n_init: 10,
            n_candidates: 1000,
            length_scale: 0.2,
            noise: 1e-6,
            max_gp_points: 80,
        }
    }
}

/// `n` points of a Latin hypercube in the unit cube.
pub fn latin_hypercube(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for j in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        for (i, p) in pts.iter_mut().enumerate() {
            p[j] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn kernel(a: &[f64], b: &[f64], ls: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d2 / (ls * ls)).exp()
}

/// GP posterior over the unit cube, zero prior mean on standardized outputs.
pub struct Gp {
    xs: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    ls: f64,
    mean: f64,
    scale: f64,
}

impl Gp {
    pub fn fit(xs: Vec<Vec<f64>>, ys: &[f64], ls: f64, noise: f64) -> Option<Gp> {
        let n = xs.len();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
        let scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let k = DMatrix::from_fn(n, n, |i, j| kernel(&xs[i], &xs[j], ls));
        let chol = [noise, noise + 1e-4].iter().find_map(|jit| {
            let mut kk = k.clone();
            for i in 0..n {
                kk[(i, i)] += jit;
            }
            Cholesky::new(kk)
        })?;
        let y = DVector::from_iterator(n, ys.iter().map(|v| (v - mean) / scale));
        let alpha = chol.solve(&y);
        if alpha.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Gp { xs, chol, alpha, ls, mean, scale })
    }

    /// Posterior mean and standard deviation in original output units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.xs.len();
        let ks = DVector::from_iterator(n, self.xs.iter().map(|xi| kernel(xi, x, self.ls)));
        let mu = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).unwrap_or_else(|| ks.clone());
        let var = (1.0 - v.dot(&v)).max(0.0);
        (self.mean + self.scale * mu, self.scale * var.sqrt())
    }
}

/// Expected improvement below `best` for a Gaussian with `(mu, sigma)`.
pub fn expected_improvement(best: f64, mu: f64, sigma: f64) -> f64 {
    if sigma <= 1e-12 {
        return (best - mu).max(0.0);
    }
    let std = Normal::standard();
    let z = (best - mu) / sigma;
    (best - mu) * std.cdf(z) + sigma * std.pdf(z)
}

/// Next sample point given the `(point, robustness)` history.
///
/// The first `n_init` proposals come from one Latin-hypercube design
/// determined by `seed`; `history.len()` selects the entry. Later proposals
/// maximize expected improvement over seeded candidates, half uniform and
/// half perturbations of the best points so far. Non-finite robustness
/// values are ignored.
pub fn bayesopt_propose(
    history: &[(Vec<f64>, f64)],
    bbox: &IntervalBox,
    seed: u64,
    cfg: &BoConfig,
) -> Vec<f64> {
    let dim = bbox.dim();
    let step = history.len();
    if step < cfg.n_init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let design = latin_hypercube(cfg.n_init, dim, &mut rng);
        return bbox.from_unit(&design[step]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut finite: Vec<(Vec<f64>, f64)> = history
        .iter()
        .filter(|(_, r)| r.is_finite())
        .map(|(x, r)| (bbox.to_unit(x), *r))
        .collect();
    if finite.len() < 2 {
        return bbox.sample_uniform(&mut rng);
    }
    // Keep the best points and the most recent ones.
    if finite.len() > cfg.max_gp_points {
        let keep_best = cfg.max_gp_points / 4;
        let mut order: Vec<usize> = (0..finite.len()).collect();
        order.sort_by(|&a, &b| finite[a].1.total_cmp(&finite[b].1).then(a.cmp(&b)));
        let mut chosen: Vec<usize> = order[..keep_best].to_vec();
        for i in (0..finite.len()).rev() {
            if chosen.len() >= cfg.max_gp_points {
                break;
            }
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        chosen.sort_unstable();
        finite = chosen.into_iter().map(|i| finite[i].clone()).collect();
    }
    let ys: Vec<f64> = finite.iter().map(|(_, r)| *r).collect();
    let best_idx = (0..ys.len()).min_by(|&a, &b| ys[a].total_cmp(&ys[b])).expect("nonempty");
    let best = ys[best_idx];
    let incumbent = finite[best_idx].0.clone();
    let xs: Vec<Vec<f64>> = finite.into_iter().map(|(x, _)| x).collect();
    let Some(gp) = Gp::fit(xs, &ys, cfg.length_scale, cfg.noise) else {
        log::debug!("GP fit failed; proposing a uniform point");
        return bbox.sample_uniform(&mut rng);
    };
    let n_local = cfg.n_candidates / 2;
    let candidates: Vec<Vec<f64>> = (0..cfg.n_candidates)
        .map(|i| {
            if i < n_local {
                let r = cfg.length_scale * [0.1, 0.3, 1.0][i % 3];
                incumbent
                    .iter()
                    .map(|c| (c + r * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0))
                    .collect()
            } else {
                (0..dim).map(|_| rng.random::<f64>()).collect()
            }
        })
        .collect();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| {
            let (mu, sd) = gp.predict(c);
            expected_improvement(best, mu, sd)
        })
        .collect();
    let mut arg = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[arg] {
            arg = i;
        }
    }
    bbox.from_unit(&candidates[arg])
}
