//! Lloyd's k-means with k-means++ seeding and best-of-restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Cluster count actually used (reduced when there are fewer distinct
    /// points than requested).
    pub k: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_count(points: &[Vec<f64>], cap: usize) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len().min(cap)
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let (mut best, mut bd) = (0, f64::INFINITY);
        for (j, c) in centroids.iter().enumerate() {
            let d = dist2(p, c);
            if d < bd {
                bd = d;
                best = j;
            }
        }
        *l = best;
        inertia += bd;
    }
    inertia
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![0; points.len()];
    let mut inertia = assign(points, &centroids, &mut labels);
    for _ in 0..100 {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved: f64 = 0.0;
        for j in 0..k {
            let next = if counts[j] > 0 {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = points
                    .iter()
                    .zip(&labels)
                    .enumerate()
                    .max_by(|(_, (a, &la)), (_, (b, &lb))| {
                        dist2(a, &centroids[la]).total_cmp(&dist2(b, &centroids[lb]))
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                points[far].clone()
            };
            moved = moved.max(dist2(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        inertia = assign(points, &centroids, &mut labels);
        if moved < 1e-8 {
            break;
        }
    }
    KMeans { labels, centroids, inertia, k }
}

/// Cluster `points` into at most `k` groups. Deterministic given `seed`;
/// among restarts the lowest inertia wins, ties going to the earliest.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> KMeans {
    assert!(!points.is_empty(), "kmeans needs at least one point");
    let k = distinct_count(points, k.max(1));
    let mut best: Option<KMeans> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let init = plus_plus(points, k, &mut rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs() -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        for c in [0.0, 10.0] {
            for _ in 0..30 {
                pts.push(vec![c + rng.random::<f64>() - 0.5, c + rng.random::<f64>() - 0.5]);
            }
        }
        pts
    }

    #[test]
    fn separates_blobs() {
        let pts = blobs();
        let km = kmeans(&pts, 2, 5, 3);
        assert!(km.labels[..30].iter().all(|&l| l == km.labels[0]));
        assert!(km.labels[30..].iter().all(|&l| l == km.labels[30]));
        assert_ne!(km.labels[0], km.labels[30]);
    }

    #[test]
    fn single_cluster() {
        let km = kmeans(&blobs(), 1, 0, 2);
        assert!(km.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn deterministic() {
        let pts = blobs();
        assert_eq!(kmeans(&pts, 3, 9, 4), kmeans(&pts, 3, 9, 4));
    }

    #[test]
    fn k_reduced_to_distinct_points() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        let km = kmeans(&pts, 5, 0, 1);
        assert_eq!(km.k, 2);
        assert_eq!(km.labels[0], km.labels[1]);
        assert_ne!(km.labels[0], km.labels[2]);
    }
}
