//! Deterministic perception emulators.
//!
//! Noise is a pure function of a quantized state cell and the emulator
//! seed, so the measurement map is a function of state like a real
//! (deterministic) perception stack.

use serde::{Deserialize, Serialize};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform fraction in `[0, 1)` determined by `seed`, a salt and integer
/// cell coordinates.
pub fn hashfrac(seed: u64, salt: u64, cell: &[i64]) -> f64 {
    let mut h = splitmix64(seed ^ salt.wrapping_mul(0xd6e8_feb8_6659_fd93));
    for &c in cell {
        h = splitmix64(h ^ (c as u64));
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn cell(v: f64, q: f64) -> i64 {
    (v / q).round() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaneEmulator {
    pub seed: u64,
    /// Emit exact measurements.
    pub ideal: bool,
    /// Quantization of `d` and `theta_delta` for the noise hash.
    pub quantum: f64,
    pub near_deviation: f64,
    pub near_heading: f64,
    /// Half-width of the error inside the near region.
    pub small_noise: f64,
    /// Outside the near region the error is
    /// `sign(d) * (bias_min + bias_span * f) - theta * (coupling_min + coupling_span * g)`.
    pub bias_min: f64,
    pub bias_span: f64,
    pub coupling_min: f64,
    pub coupling_span: f64,
}

impl Default for LaneEmulator {
    fn default() -> Self {
        LaneEmulator {
            seed: 7,
            ideal: false,
            quantum: 0.02,
            near_deviation: 0.3,
            near_heading: 0.15,
            small_noise: 0.03,
            bias_min: 0.25,
            bias_span: 0.5,
            coupling_min: 2.0,
            coupling_span: 1.0,
        }
    }
}

impl LaneEmulator {
    /// Deviation estimate for true deviation `d` and relative heading `theta`.
    ///
    /// The error is odd in `(d, theta)`, so mirrored states get mirrored
    /// estimates bit for bit (`-0.0` counts as negative).
    pub fn deviation_estimate(&self, d: f64, theta: f64) -> f64 {
        if self.ideal {
            return d;
        }
        let s = d.signum();
        let key = [cell(d, self.quantum).abs(), s as i64 * cell(theta, self.quantum)];
        let f = hashfrac(self.seed, 1, &key);
        let e = if d.abs() <= self.near_deviation && theta.abs() <= self.near_heading {
            s * self.small_noise * (2.0 * f - 1.0)
        } else {
            let g = hashfrac(self.seed, 2, &key);
            s * (self.bias_min + self.bias_span * f)
                - theta * (self.coupling_min + self.coupling_span * g)
        };
        d + e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrakeEmulator {
    pub seed: u64,
    pub ideal: bool,
    /// Beyond this distance the detector may return nothing.
    pub miss_range: f64,
    /// A miss happens when the hash fraction exceeds this gate.
    pub miss_gate: f64,
    /// Below this distance estimates are reliable.
    pub reliable_range: f64,
    /// Color similarity above which the broken car is confused with cones.
    pub confusion_threshold: f64,
    pub confusion_eta: [f64; 2],
    pub far_eta: [f64; 2],
    pub near_eta: [f64; 2],
    pub distance_quantum: f64,
    pub color_quantum: f64,
    /// Floor applied to finite estimates so they stay positive.
    pub min_estimate: f64,
}

impl Default for BrakeEmulator {
    fn default() -> Self {
        BrakeEmulator {
            seed: 7,
            ideal: false,
            miss_range: 35.2,
            miss_gate: 0.3,
            reliable_range: 16.5,
            confusion_threshold: 0.7,
            confusion_eta: [-0.6, -0.3],
            far_eta: [-0.2, 0.2],
            near_eta: [-0.05, 0.05],
            distance_quantum: 0.5,
            color_quantum: 0.05,
            min_estimate: 1e-3,
        }
    }
}

impl BrakeEmulator {
    /// Distance estimate; `f64::INFINITY` means nothing was detected.
    pub fn distance_estimate(&self, d: f64, color: f64) -> f64 {
        if self.ideal {
            return d.max(self.min_estimate);
        }
        let key = [cell(d, self.distance_quantum), cell(color, self.color_quantum)];
        if d > self.miss_range && hashfrac(self.seed, 2, &key) > self.miss_gate {
            return f64::INFINITY;
        }
        let f = hashfrac(self.seed, 3, &key);
        let [lo, hi] = if d < self.reliable_range {
            self.near_eta
        } else if color > self.confusion_threshold {
            self.confusion_eta
        } else {
            self.far_eta
        };
        let eta = lo + (hi - lo) * f;
        (d * (1.0 + eta)).max(self.min_estimate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashfrac_is_uniformish_and_deterministic() {
        let xs: Vec<f64> = (0..10_000).map(|i| hashfrac(3, 1, &[i, -i])).collect();
        assert!(xs.iter().all(|x| (0.0..1.0).contains(x)));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 0.02);
        assert_eq!(hashfrac(3, 1, &[5, 6]), hashfrac(3, 1, &[5, 6]));
        assert_ne!(hashfrac(3, 1, &[5, 6]), hashfrac(4, 1, &[5, 6]));
    }

    #[test]
    fn lane_near_region_error_is_small() {
        let em = LaneEmulator::default();
        for i in 0..200 {
            let d = -0.3 + 0.003 * i as f64;
            let th = 0.15 * ((i % 7) as f64 / 7.0 - 0.5);
            assert!((em.deviation_estimate(d, th) - d).abs() <= 0.03 + 1e-12);
        }
    }

    #[test]
    fn lane_far_region_error_is_biased_outward() {
        let em = LaneEmulator::default();
        let e = em.deviation_estimate(0.6, 0.0) - 0.6;
        assert!((0.25..=0.75).contains(&e));
        let e = em.deviation_estimate(-0.6, 0.0) + 0.6;
        assert!((-0.75..=-0.25).contains(&e));
    }

    #[test]
    fn lane_error_is_odd() {
        let em = LaneEmulator::default();
        for i in 0..500 {
            let d = -1.0 + 0.0041 * i as f64;
            let th = 0.3 * ((i * 37 % 101) as f64 / 101.0 - 0.5);
            let a = em.deviation_estimate(d, th);
            let b = em.deviation_estimate(-d, -th);
            assert_eq!(a.to_bits(), (-b).to_bits());
        }
    }

    #[test]
    fn brake_near_range_is_reliable() {
        let em = BrakeEmulator::default();
        for c in [0.0, 0.5, 0.9, 1.0] {
            let dh = em.distance_estimate(10.0, c);
            assert!((dh - 10.0).abs() / 10.0 <= 0.05);
        }
    }

    #[test]
    fn brake_confusion_underestimates() {
        let em = BrakeEmulator::default();
        let dh = em.distance_estimate(25.0, 0.9);
        assert!((10.0..=17.5).contains(&dh), "{dh}");
    }

    #[test]
    fn brake_far_range_may_miss() {
        let em = BrakeEmulator::default();
        let mut misses = 0;
        for i in 0..100 {
            let d = 36.0 + 0.5 * i as f64;
            let dh = em.distance_estimate(d, 0.2);
            if dh.is_infinite() {
                misses += 1;
            } else {
                assert!(dh >= 0.8 * d - 1e-9 && dh <= 1.2 * d + 1e-9);
            }
        }
        assert!(misses > 40 && misses < 100);
    }

    #[test]
    fn brake_estimates_stay_positive() {
        let em = BrakeEmulator::default();
        for i in -20..20 {
            let dh = em.distance_estimate(i as f64 * 0.1, 0.5);
            assert!(dh > 0.0);
        }
    }
}
