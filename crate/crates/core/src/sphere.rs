//! Extremes of a continuous function over the Euclidean unit sphere.
//!
//! Seeded uniform sampling followed by coordinate pattern-search refinement
//! of the best candidates. The minimum found is an upper estimate of the
//! true infimum and the maximum a lower estimate of the supremum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereSettings {
    pub n_samples: usize,
    /// Number of best samples refined by local search (per extreme).
    pub refinements: usize,
    pub step_start: f64,
    pub step_end: f64,
    pub seed: u64,
}

impl Default for SphereSettings {
    fn default() -> Self {
        Self {
            n_samples: 4096,
            refinements: 10,
            step_start: 1e-2,
            step_end: 1e-6,
            seed: 0,
        }
    }
}

impl SphereSettings {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug)]
pub struct SphereExtremes {
    pub min: f64,
    pub argmin: Vec<f64>,
    pub max: f64,
    pub argmax: Vec<f64>,
    /// False if a local search hit its iteration cap.
    pub converged: bool,
}

const MAX_PATTERN_ITERS: usize = 10_000;

pub fn sphere_extremes(
    n: usize,
    f: impl Fn(&[f64]) -> f64,
    settings: &SphereSettings,
) -> SphereExtremes {
    assert!(n >= 1, "sphere dimension must be positive");
    if n == 1 {
        let (a, b) = (f(&[1.0]), f(&[-1.0]));
        let (min, argmin) = if a <= b { (a, 1.0) } else { (b, -1.0) };
        let (max, argmax) = if a >= b { (a, 1.0) } else { (b, -1.0) };
        return SphereExtremes {
            min,
            argmin: vec![argmin],
            max,
            argmax: vec![argmax],
            converged: true,
        };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let count = settings.n_samples.max(1);
    let mut points = vec![0.0; count * n];
    let mut values = Vec::with_capacity(count);
    for chunk in points.chunks_mut(n) {
        loop {
            for c in chunk.iter_mut() {
                *c = StandardNormal.sample(&mut rng);
            }
            if normalize(chunk) {
                break;
            }
        }
        values.push(f(chunk));
    }

    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let k = settings.refinements.min(count);

    let mut converged = true;
    let mut best_min = (values[order[0]], points[order[0] * n..][..n].to_vec());
    for &i in order.iter().take(k) {
        let start = points[i * n..][..n].to_vec();
        let (v, u, ok) = pattern_search(&start, values[i], &f, 1.0, settings);
        converged &= ok;
        if v < best_min.0 {
            best_min = (v, u);
        }
    }
    let last = order[count - 1];
    let mut best_max = (values[last], points[last * n..][..n].to_vec());
    for &i in order.iter().rev().take(k) {
        let start = points[i * n..][..n].to_vec();
        let (v, u, ok) = pattern_search(&start, values[i], &f, -1.0, settings);
        converged &= ok;
        if v > best_max.0 {
            best_max = (v, u);
        }
    }
    SphereExtremes {
        min: best_min.0,
        argmin: best_min.1,
        max: best_max.0,
        argmax: best_max.1,
        converged,
    }
}

/// Minimizes `sign·f` from `start` on the sphere; returns the value of `f`.
fn pattern_search(
    start: &[f64],
    start_value: f64,
    f: &impl Fn(&[f64]) -> f64,
    sign: f64,
    settings: &SphereSettings,
) -> (f64, Vec<f64>, bool) {
    let n = start.len();
    let mut u = start.to_vec();
    let mut best = sign * start_value;
    let mut cand = vec![0.0; n];
    let mut h = settings.step_start;
    let mut iters = 0;
    while h >= settings.step_end * (1.0 - 1e-9) {
        let mut improved = true;
        while improved {
            improved = false;
            iters += 1;
            if iters > MAX_PATTERN_ITERS {
                return (sign * best, u, false);
            }
            for i in 0..n {
                for delta in [h, -h] {
                    cand.copy_from_slice(&u);
                    cand[i] += delta;
                    if !normalize(&mut cand) {
                        continue;
                    }
                    let v = sign * f(&cand);
                    if v < best {
                        best = v;
                        u.copy_from_slice(&cand);
                        improved = true;
                    }
                }
            }
        }
        h /= 10.0;
    }
    (sign * best, u, true)
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return false;
    }
    v.iter_mut().for_each(|c| *c /= norm);
    true
}
