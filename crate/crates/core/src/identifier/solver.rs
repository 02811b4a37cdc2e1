//! First-order minimizers for the forgetting objective at a fixed time.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::loss::LossSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Armijo backtracking from the previous accepted step.
    Backtracking,
    /// Barzilai–Borwein trial step, safeguarded by Armijo backtracking.
    BarzilaiBorwein,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverMode {
    ClosedFormRls,
    GradientDescent { max_iters: usize, step: StepRule },
    /// Forward step on the data term (gradient when `ψ` is smooth,
    /// subgradient otherwise), exact proximal step on the quadratic prior.
    ProximalSubgradient { max_iters: usize },
    MultiStartLocal { n_starts: usize, inner: Box<SolverMode> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverFlag {
    Converged,
    /// Iteration budget exhausted before the stopping test was met.
    MaxIters,
    /// Line search could not make progress (round-off floor).
    Stalled,
    /// A certificate probe found a lower objective value than the estimate.
    Suboptimal,
}

impl SolverFlag {
    pub fn is_clean(self) -> bool {
        self == SolverFlag::Converged
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolverFlag::Converged => "converged",
            SolverFlag::MaxIters => "max_iters",
            SolverFlag::Stalled => "stalled",
            SolverFlag::Suboptimal => "suboptimal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "converged" => Some(SolverFlag::Converged),
            "max_iters" => Some(SolverFlag::MaxIters),
            "stalled" => Some(SolverFlag::Stalled),
            "suboptimal" => Some(SolverFlag::Suboptimal),
            _ => None,
        }
    }
}

/// `V(θ) = Σ w_k ψ(y_k − x_kᵀθ) + μ·ψ₀(θ − θ₀)` frozen at one time step.
pub(crate) struct Objective<'a> {
    pub xs: Vec<&'a DVector<f64>>,
    pub ys: Vec<f64>,
    pub ws: Vec<f64>,
    pub prior_weight: f64,
    pub theta0: &'a DVector<f64>,
    pub psi: &'a LossSpec,
    pub psi0: &'a LossSpec,
    /// `W` for the quadratic prior kinds.
    pub prior_matrix: Option<&'a DMatrix<f64>>,
}

impl Objective<'_> {
    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn data_value(&self, theta: &DVector<f64>) -> f64 {
        self.xs
            .iter()
            .zip(&self.ys)
            .zip(&self.ws)
            .map(|((x, y), w)| w * self.psi.psi(y - x.dot(theta)))
            .sum()
    }

    pub fn prior_value(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - self.theta0;
        self.prior_weight * self.psi0.psi0(d.as_slice())
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        self.data_value(theta) + self.prior_value(theta)
    }

    pub fn data_grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for ((x, y), w) in self.xs.iter().zip(&self.ys).zip(&self.ws) {
            let d = self.psi.psi_derivative(y - x.dot(theta));
            if d != 0.0 {
                g.axpy(-w * d, x, 1.0);
            }
        }
        g
    }

    pub fn prior_grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let d = theta - self.theta0;
        match self.prior_matrix {
            Some(w) => (w * d) * (2.0 * self.prior_weight),
            None => {
                // ψ₀ applied through the norm; only used for scalar ψ₀ in tests
                let r = d.norm();
                if r == 0.0 {
                    d
                } else {
                    d * (self.prior_weight * self.psi0.psi_derivative(r) / r)
                }
            }
        }
    }

    pub fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.data_grad(theta) + self.prior_grad(theta)
    }

    /// `argmin_θ μψ₀(θ − θ₀) + ‖θ − z‖²/(2s)` for a quadratic prior.
    fn prox(&self, z: &DVector<f64>, s: f64) -> DVector<f64> {
        let w = self.prior_matrix.expect("proximal step needs a quadratic prior");
        let n = self.dim();
        let a = DMatrix::identity(n, n) + w * (2.0 * s * self.prior_weight);
        let rhs = z + (w * self.theta0) * (2.0 * s * self.prior_weight);
        match a.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => a.lu().solve(&rhs).unwrap_or_else(|| z.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SolveResult {
    pub theta: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub flag: SolverFlag,
}

pub(crate) struct Tolerances {
    pub grad_tol: f64,
    pub value_tol: f64,
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-30;
/// Iterations without best-value improvement after which a subgradient run stops.
const SUBGRADIENT_PATIENCE: usize = 500;

pub(crate) fn solve(
    obj: &Objective<'_>,
    mode: &SolverMode,
    start: &DVector<f64>,
    extra_starts: &[DVector<f64>],
    tol: &Tolerances,
    seed: u64,
) -> SolveResult {
    match mode {
        SolverMode::GradientDescent { max_iters, step } => {
            gradient_descent(obj, start, *max_iters, *step, tol)
        }
        SolverMode::ProximalSubgradient { max_iters } => {
            if obj.prior_matrix.is_none() {
                return gradient_descent(obj, start, *max_iters, StepRule::BarzilaiBorwein, tol);
            }
            if obj.psi.is_smooth() {
                proximal_gradient(obj, start, *max_iters, tol)
            } else {
                proximal_subgradient(obj, start, *max_iters, tol)
            }
        }
        SolverMode::MultiStartLocal { n_starts, inner } => {
            multi_start(obj, inner, start, extra_starts, (*n_starts).max(1), tol, seed)
        }
        SolverMode::ClosedFormRls => {
            // handled by the recursive update; fall back to a generic method
            gradient_descent(obj, start, 10_000, StepRule::BarzilaiBorwein, tol)
        }
    }
}

fn gradient_descent(
    obj: &Objective<'_>,
    start: &DVector<f64>,
    max_iters: usize,
    rule: StepRule,
    tol: &Tolerances,
) -> SolveResult {
    let mut x = start.clone();
    let mut f = obj.value(&x);
    let mut g = obj.grad(&x);
    let mut step = 1.0;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    for it in 0..max_iters {
        let gn2 = g.norm_squared();
        if gn2.sqrt() <= tol.grad_tol {
            return SolveResult { theta: x, value: f, iterations: it, flag: SolverFlag::Converged };
        }
        if let (StepRule::BarzilaiBorwein, Some((px, pg))) = (rule, &prev) {
            let s = &x - px;
            let y = &g - pg;
            let sy = s.dot(&y);
            if sy > 0.0 {
                step = (s.norm_squared() / sy).clamp(1e-12, 1e12);
            }
        }
        // Armijo, or failing that the local Lipschitz test
        // ‖∇f(c) − ∇f(x)‖ ≤ ‖c − x‖/s, which implies descent for convex f
        // and still resolves once f differences fall below round-off.
        let mut accepted = None;
        while step >= MIN_STEP {
            let cand = &x - &g * step;
            let fc = obj.value(&cand);
            let gc = obj.grad(&cand);
            if fc <= f - ARMIJO_C * step * gn2 || (&gc - &g).norm() <= gn2.sqrt() * (1.0 + 1e-12) {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            return SolveResult { theta: x, value: f, iterations: it, flag: SolverFlag::Stalled };
        };
        prev = Some((std::mem::replace(&mut x, cand), std::mem::replace(&mut g, gc)));
        f = fc;
        if rule == StepRule::Backtracking {
            step *= 2.0;
        }
    }
    let flag = if g.norm() <= tol.grad_tol {
        SolverFlag::Converged
    } else {
        SolverFlag::MaxIters
    };
    SolveResult { theta: x, value: f, iterations: max_iters, flag }
}

fn proximal_gradient(
    obj: &Objective<'_>,
    start: &DVector<f64>,
    max_iters: usize,
    tol: &Tolerances,
) -> SolveResult {
    let mut x = start.clone();
    if obj.grad(&x).norm() <= tol.grad_tol {
        let value = obj.value(&x);
        return SolveResult { theta: x, value, iterations: 0, flag: SolverFlag::Converged };
    }
    // Steps are accepted when ‖∇f(c) − ∇f(x)‖ ≤ ‖c − x‖/s, a local Lipschitz
    // test that stays reliable where function values stop resolving.
    let mut step = 1.0;
    let mut g = obj.data_grad(&x);
    for it in 0..max_iters {
        let mut next = None;
        while step >= MIN_STEP {
            let cand = obj.prox(&(&x - &g * step), step);
            let d = &cand - &x;
            let dn = d.norm();
            if dn == 0.0 {
                next = Some((cand, g.clone(), 0.0));
                break;
            }
            let gc = obj.data_grad(&cand);
            if (&gc - &g).norm() * step <= dn * (1.0 + 1e-12) {
                next = Some((cand, gc, dn / step));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, gc, mapping_norm)) = next else {
            let value = obj.value(&x);
            return SolveResult { theta: x, value, iterations: it, flag: SolverFlag::Stalled };
        };
        x = cand;
        g = gc;
        if mapping_norm <= tol.grad_tol {
            let value = obj.value(&x);
            return SolveResult { theta: x, value, iterations: it + 1, flag: SolverFlag::Converged };
        }
        step *= 2.0;
    }
    let value = obj.value(&x);
    SolveResult { theta: x, value, iterations: max_iters, flag: SolverFlag::MaxIters }
}

fn proximal_subgradient(
    obj: &Objective<'_>,
    start: &DVector<f64>,
    max_iters: usize,
    tol: &Tolerances,
) -> SolveResult {
    let mut x = start.clone();
    let mut best = (x.clone(), obj.value(&x));
    let g0 = obj.data_grad(&x).norm();
    if g0 == 0.0 && obj.grad(&x).norm() <= tol.grad_tol {
        return SolveResult { theta: x, value: best.1, iterations: 0, flag: SolverFlag::Converged };
    }
    let base = 0.1 * (1.0 + x.norm()) / g0.max(1e-12);
    let mut since_improvement = 0;
    for it in 0..max_iters {
        let g = obj.data_grad(&x);
        let step = base / ((it + 1) as f64).sqrt();
        x = obj.prox(&(&x - &g * step), step);
        let f = obj.value(&x);
        if f < best.1 - tol.value_tol {
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if f < best.1 {
            best = (x.clone(), f);
        }
        if since_improvement >= SUBGRADIENT_PATIENCE {
            let (theta, value) = vertex_polish(obj, best.0, best.1);
            return SolveResult { theta, value, iterations: it + 1, flag: SolverFlag::Converged };
        }
    }
    let (theta, value) = vertex_polish(obj, best.0, best.1);
    SolveResult { theta, value, iterations: max_iters, flag: SolverFlag::MaxIters }
}

/// Minimizers of nonsmooth `V` sit where `n` residuals vanish. Tries the
/// interpolants through the samples with the smallest residuals at the
/// current point, and swaps one sample at a time, while `V` keeps dropping.
fn vertex_polish(obj: &Objective<'_>, mut theta: DVector<f64>, mut value: f64) -> (DVector<f64>, f64) {
    let n = obj.dim();
    let m = obj.xs.len();
    if m < n {
        return (theta, value);
    }
    let interpolate = |idx: &[usize]| {
        let a = DMatrix::from_fn(n, n, |i, j| obj.xs[idx[i]][j]);
        let b = DVector::from_fn(n, |i, _| obj.ys[idx[i]]);
        a.lu().solve(&b).filter(|s| s.iter().all(|v| v.is_finite()))
    };
    for _ in 0..4 * n + 4 {
        let mut order: Vec<usize> = (0..m).collect();
        let r: Vec<f64> = (0..m).map(|k| (obj.ys[k] - obj.xs[k].dot(&theta)).abs()).collect();
        order.sort_by(|a, b| r[*a].total_cmp(&r[*b]));
        let pool = &order[..(n + 1).min(m)];
        let mut subsets = vec![pool[..n].to_vec()];
        if pool.len() > n {
            for skip in 0..n {
                subsets.push(pool.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, k)| *k).collect());
            }
        }
        let mut improved = false;
        for idx in subsets {
            if let Some(cand) = interpolate(&idx) {
                let f = obj.value(&cand);
                if f < value {
                    theta = cand;
                    value = f;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (theta, value)
}

fn multi_start(
    obj: &Objective<'_>,
    inner: &SolverMode,
    start: &DVector<f64>,
    extra_starts: &[DVector<f64>],
    n_starts: usize,
    tol: &Tolerances,
    seed: u64,
) -> SolveResult {
    let n = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<DVector<f64>> = vec![start.clone()];
    for s in extra_starts.iter().chain(std::iter::once(&DVector::zeros(n))) {
        if !starts.iter().any(|t| t == s) {
            starts.push(s.clone());
        }
    }
    // exact interpolants of random n-subsets of the retained samples
    let m = obj.xs.len();
    let mut attempts = 0;
    while starts.len() < n_starts && m >= n && attempts < 4 * n_starts {
        attempts += 1;
        let idx: Vec<usize> = rand::seq::index::sample(&mut rng, m, n).into_vec();
        let a = DMatrix::from_fn(n, n, |i, j| obj.xs[idx[i]][j]);
        let b = DVector::from_fn(n, |i, _| obj.ys[idx[i]]);
        if let Some(sol) = a.lu().solve(&b) {
            if sol.iter().all(|v| v.is_finite()) {
                starts.push(sol);
            }
        }
    }
    while starts.len() < n_starts {
        let scale = 1.0 + start.norm();
        let jitter = DVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale * rng.random_range(0.01..1.0)
        });
        starts.push(start + jitter);
    }
    starts.truncate(n_starts);

    let inner = match inner {
        SolverMode::MultiStartLocal { .. } | SolverMode::ClosedFormRls => {
            &SolverMode::ProximalSubgradient { max_iters: 5_000 }
        }
        other => other,
    };
    let mut total_iters = 0;
    let mut best: Option<SolveResult> = None;
    for (i, s) in starts.iter().enumerate() {
        let r = solve(obj, inner, s, &[], tol, seed.wrapping_add(i as u64));
        total_iters += r.iterations;
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one start");
    best.iterations = total_iters;
    best
}

/// Probes random points around `theta` at log-spread radii and returns the
/// most negative `V(probe) − V(theta)` together with the probe achieving it.
pub(crate) fn probe_certificate(
    obj: &Objective<'_>,
    theta: &DVector<f64>,
    value: f64,
    n_probes: usize,
    seed: u64,
) -> (f64, Option<DVector<f64>>) {
    let n = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 + theta.norm();
    let mut worst = (f64::INFINITY, None);
    for _ in 0..n_probes {
        let mut u = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let norm = u.norm();
        if norm == 0.0 {
            continue;
        }
        u /= norm;
        let radius = scale * 10f64.powf(rng.random_range(-4.0..1.0));
        let probe = theta + u * radius;
        let gap = obj.value(&probe) - value;
        if gap < worst.0 {
            worst = (gap, Some(probe));
        }
    }
    worst
}
