//! The adaptive optimal identifier: at every step it returns a minimizer of
//!
//! ```text
//! V_t(θ) = Σ_{k=1}^t λ^{t−k} ψ(y_k − x_kᵀθ) + λ^t ψ₀(θ − θ̂₀)
//! ```
//!
//! over the retained data. A recursive least-squares update covers the
//! quadratic case in closed form and doubles as an oracle for the generic
//! solvers.

mod solver;

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use solver::{SolverFlag, SolverMode, StepRule};

use crate::error::{Error, Result};
use crate::kinf::XiFunction;
use crate::loss::{verify_properties, Arity, LossSpec, DEFAULT_PROPERTY_TOL};
use crate::signal::{fmt_real, Trajectory};
use solver::{probe_certificate, solve, Objective, SolveResult, Tolerances};

pub const DEFAULT_TRUNCATION_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub mode: SolverMode,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_value_tol")]
    pub value_tol: f64,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// Random probe points compared against each estimate.
    #[serde(default = "default_probes")]
    pub certificate_probes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_grad_tol() -> f64 {
    1e-10
}
fn default_value_tol() -> f64 {
    1e-9
}
fn default_true() -> bool {
    true
}
fn default_probes() -> usize {
    16
}

impl SolverSettings {
    pub fn new(mode: SolverMode) -> Self {
        Self {
            mode,
            grad_tol: default_grad_tol(),
            value_tol: default_value_tol(),
            warm_start: true,
            certificate_probes: default_probes(),
            seed: 0,
        }
    }

    /// Solver matched to the smoothness class of `ψ`: gradient descent for
    /// smooth convex losses, proximal subgradient for Huber and `|e|`, and
    /// seeded multi-start for the nonconvex powers `p < 1`.
    pub fn for_losses(psi: &LossSpec) -> Self {
        let mode = match psi {
            LossSpec::Huber { .. } => SolverMode::ProximalSubgradient { max_iters: 20_000 },
            LossSpec::Power { p, .. } if *p < 1.0 => SolverMode::MultiStartLocal {
                n_starts: 8,
                inner: Box::new(SolverMode::ProximalSubgradient { max_iters: 5_000 }),
            },
            LossSpec::Power { p, .. } if *p == 1.0 => {
                SolverMode::ProximalSubgradient { max_iters: 20_000 }
            }
            _ => SolverMode::GradientDescent {
                max_iters: 20_000,
                step: StepRule::BarzilaiBorwein,
            },
        };
        Self::new(mode)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.value_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if let SolverMode::MultiStartLocal { n_starts: 0, .. } = self.mode {
            return Err(Error::Config("multi-start needs n_starts ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifierConfig {
    pub lambda: f64,
    pub psi: LossSpec,
    pub psi0: LossSpec,
    pub theta0: Vec<f64>,
    pub solver: SolverSettings,
    #[serde(default = "default_truncation")]
    pub truncation_eps: f64,
}

fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION_EPS
}

impl IdentifierConfig {
    pub fn new(lambda: f64, psi: LossSpec, psi0: LossSpec, theta0: Vec<f64>) -> Self {
        let solver = SolverSettings::for_losses(&psi);
        Self {
            lambda,
            psi,
            psi0,
            theta0,
            solver,
            truncation_eps: DEFAULT_TRUNCATION_EPS,
        }
    }

    pub fn with_solver(mut self, mode: SolverMode) -> Self {
        self.solver.mode = mode;
        self
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!(
                "forgetting factor must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        let n = self.dim();
        if n == 0 {
            return Err(Error::Config("theta0 must have at least one component".into()));
        }
        if !self.psi.is_scalar() {
            return Err(Error::Config(format!("ψ must be a scalar loss, got {}", self.psi)));
        }
        match self.psi0.arity() {
            Arity::Vector(Some(m)) if m != n => {
                return Err(Error::Config(format!(
                    "ψ₀ has dimension {m} but theta0 has dimension {n}"
                )))
            }
            Arity::Scalar => {
                return Err(Error::Config(format!("ψ₀ must be a vector loss, got {}", self.psi0)))
            }
            _ => {}
        }
        self.psi.validate()?;
        self.psi0.validate()?;
        if !(self.truncation_eps >= 0.0) {
            return Err(Error::Config("truncation_eps must be nonnegative".into()));
        }
        self.solver.validate()?;
        for (name, spec) in [("ψ", &self.psi), ("ψ₀", &self.psi0)] {
            let rep = verify_properties(spec, 2_000, 0, DEFAULT_PROPERTY_TOL);
            if !rep.passed_bound_hypotheses() {
                return Err(Error::Config(format!(
                    "{name} = {spec} fails positive-definiteness, symmetry or the triangle property"
                )));
            }
        }
        if self.solver.mode == SolverMode::ClosedFormRls {
            if !self.psi.is_scalar_quadratic() {
                return Err(Error::Config("closed-form RLS needs ψ(e) = c·e²".into()));
            }
            if self.psi0.weight_matrix(n).is_none() {
                return Err(Error::Config("closed-form RLS needs a quadratic ψ₀".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub iterations: usize,
    pub flag: SolverFlag,
    /// Norm of the full gradient at the estimate (subgradient 0 at kinks).
    pub stationarity: f64,
    /// Smallest `V(probe) − V(θ̂)` over certificate probes (∞ if none).
    pub certificate_gap: f64,
}

impl StepDiagnostics {
    fn initial() -> Self {
        Self {
            iterations: 0,
            flag: SolverFlag::Converged,
            stationarity: 0.0,
            certificate_gap: f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationLog {
    pub dropped: usize,
    /// `truncation_eps · Σ ψ(y_k)` over dropped samples; bounds the
    /// objective perturbation at `θ = 0`.
    pub perturbation_bound: f64,
}

#[derive(Clone, Debug)]
struct Sample {
    k: usize,
    x: DVector<f64>,
    y: f64,
}

#[derive(Clone, Debug)]
pub struct IdentifierState {
    cfg: Arc<IdentifierConfig>,
    theta0: DVector<f64>,
    prior_matrix: Option<DMatrix<f64>>,
    t: usize,
    history: VecDeque<Sample>,
    theta_hat: DVector<f64>,
    v_opt: f64,
    /// Inverse information matrix `P_t`, in closed-form RLS mode.
    rls_p: Option<DMatrix<f64>>,
    diagnostics: StepDiagnostics,
    truncation: TruncationLog,
}

impl IdentifierState {
    /// State at `t = 0`, with `θ̂₀ = theta0`.
    pub fn new(cfg: IdentifierConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.dim();
        let theta0 = DVector::from_column_slice(&cfg.theta0);
        let prior_matrix = cfg.psi0.weight_matrix(n);
        let rls_p = if cfg.solver.mode == SolverMode::ClosedFormRls {
            let w = prior_matrix.clone().expect("validated quadratic prior");
            let inv = w
                .cholesky()
                .ok_or_else(|| Error::Numerical("prior weight is not positive definite".into()))?
                .inverse();
            Some(inv * rls_scale(&cfg.psi))
        } else {
            None
        };
        Ok(Self {
            theta_hat: theta0.clone(),
            theta0,
            prior_matrix,
            t: 0,
            history: VecDeque::new(),
            v_opt: 0.0,
            rls_p,
            diagnostics: StepDiagnostics::initial(),
            truncation: TruncationLog::default(),
            cfg: Arc::new(cfg),
        })
    }

    pub fn config(&self) -> &IdentifierConfig {
        &self.cfg
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn v_opt(&self) -> f64 {
        self.v_opt
    }

    pub fn diagnostics(&self) -> &StepDiagnostics {
        &self.diagnostics
    }

    pub fn truncation(&self) -> &TruncationLog {
        &self.truncation
    }

    pub fn rls_covariance(&self) -> Option<&DMatrix<f64>> {
        self.rls_p.as_ref()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// `(k, λ^{t−k})` for every retained sample.
    pub fn weights(&self) -> Vec<(usize, f64)> {
        self.history
            .iter()
            .map(|s| (s.k, self.weight(s.k)))
            .collect()
    }

    fn weight(&self, k: usize) -> f64 {
        self.cfg.lambda.powi((self.t - k) as i32)
    }

    fn objective(&self) -> Objective<'_> {
        Objective {
            xs: self.history.iter().map(|s| &s.x).collect(),
            ys: self.history.iter().map(|s| s.y).collect(),
            ws: self.history.iter().map(|s| self.weight(s.k)).collect(),
            prior_weight: self.cfg.lambda.powi(self.t as i32),
            theta0: &self.theta0,
            psi: &self.cfg.psi,
            psi0: &self.cfg.psi0,
            prior_matrix: self.prior_matrix.as_ref(),
        }
    }

    fn check_dim(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        if v.len() != self.theta0.len() {
            return Err(Error::contract(format!(
                "{what} has dimension {}, expected {}",
                v.len(),
                self.theta0.len()
            )));
        }
        Ok(())
    }

    /// `V_t(θ)` over the retained history.
    pub fn cost_eval(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check_dim(theta, "θ")?;
        Ok(self.objective().value(theta))
    }

    /// Gradient of `V_t` (subgradient 0 at kinks of `ψ`).
    pub fn cost_gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(theta, "θ")?;
        Ok(self.objective().grad(theta))
    }

    fn push(&mut self, x: &DVector<f64>, y: f64) -> Result<()> {
        self.check_dim(x, "regressor")?;
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("sample contains non-finite values"));
        }
        self.t += 1;
        self.history.push_back(Sample { k: self.t, x: x.clone(), y });
        let eps = self.cfg.truncation_eps;
        if eps > 0.0 {
            while let Some(front) = self.history.front() {
                if self.weight(front.k) >= eps {
                    break;
                }
                let psi_y = self.cfg.psi.psi(front.y);
                self.truncation.dropped += 1;
                self.truncation.perturbation_bound += eps * psi_y;
                self.history.pop_front();
            }
        }
        Ok(())
    }

    /// Advances to `t + 1` with the sample `(x, y)` and re-minimizes.
    /// In closed-form mode this is [`IdentifierState::rls_step`].
    pub fn step(self, x: &DVector<f64>, y: f64) -> Result<Self> {
        if self.cfg.solver.mode == SolverMode::ClosedFormRls {
            return self.rls_step(x, y);
        }
        let mut next = self;
        next.push(x, y)?;
        let cfg = Arc::clone(&next.cfg);
        let settings = &cfg.solver;
        let tol = Tolerances {
            grad_tol: settings.grad_tol,
            value_tol: settings.value_tol,
        };
        let seed = settings.seed.wrapping_mul(0x9E37_79B9).wrapping_add(next.t as u64);
        let start = if settings.warm_start {
            next.theta_hat.clone()
        } else {
            next.theta0.clone()
        };
        let extra = [next.theta0.clone(), next.theta_hat.clone()];

        let obj = next.objective();
        let mut result = solve(&obj, &settings.mode, &start, &extra, &tol, seed);
        let mut flag = result.flag;
        let mut gap = f64::INFINITY;
        if settings.certificate_probes > 0 {
            let (g, probe) =
                probe_certificate(&obj, &result.theta, result.value, settings.certificate_probes, seed);
            gap = g;
            if let (true, Some(p)) = (g < -settings.value_tol, probe) {
                // restart once from the better probe
                let retry: SolveResult = solve(&obj, &settings.mode, &p, &[], &tol, seed ^ 1);
                let iterations = result.iterations + retry.iterations;
                if retry.value < result.value {
                    result = retry;
                }
                result.iterations = iterations;
                let (g2, _) = probe_certificate(
                    &obj,
                    &result.theta,
                    result.value,
                    settings.certificate_probes,
                    seed ^ 2,
                );
                gap = g2;
                flag = if g2 < -settings.value_tol {
                    SolverFlag::Suboptimal
                } else {
                    result.flag
                };
            }
        }
        let stationarity = obj.grad(&result.theta).norm();
        drop(obj);
        next.diagnostics = StepDiagnostics {
            iterations: result.iterations,
            flag,
            stationarity,
            certificate_gap: gap,
        };
        next.theta_hat = result.theta;
        next.v_opt = result.value;
        Ok(next)
    }

    /// Exponentially weighted recursive least squares:
    ///
    /// ```text
    /// K = P x / (λ + xᵀ P x),  θ ← θ + K (y − xᵀθ),  P ← (P − K xᵀ P) / λ
    /// ```
    ///
    /// with `P₀ = c·W⁻¹` for `ψ(e) = c·e²`, `ψ₀(θ) = θᵀWθ`.
    pub fn rls_step(self, x: &DVector<f64>, y: f64) -> Result<Self> {
        let mut next = self;
        let Some(p) = next.rls_p.take() else {
            return Err(Error::contract("rls_step requires the closed_form_rls solver mode"));
        };
        next.push(x, y)?;
        let lambda = next.cfg.lambda;
        let px = &p * x;
        let denom = lambda + x.dot(&px);
        if !(denom > 0.0 && denom.is_finite()) {
            return Err(Error::Numerical(format!(
                "RLS gain denominator {denom} is not positive; regularize the prior (larger ψ₀ weight)"
            )));
        }
        let gain = &px / denom;
        let innovation = y - x.dot(&next.theta_hat);
        next.theta_hat += &gain * innovation;
        let mut p_new = (&p - &gain * px.transpose()) / lambda;
        p_new = (&p_new + p_new.transpose()) * 0.5;
        if p_new.diagonal().iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Numerical(
                "RLS covariance lost positive definiteness; regularize the prior (larger ψ₀ weight)".into(),
            ));
        }
        next.rls_p = Some(p_new);
        let obj = next.objective();
        let v = obj.value(&next.theta_hat);
        let stationarity = obj.grad(&next.theta_hat).norm();
        drop(obj);
        next.v_opt = v;
        next.diagnostics = StepDiagnostics {
            iterations: 1,
            flag: SolverFlag::Converged,
            stationarity,
            certificate_gap: f64::INFINITY,
        };
        Ok(next)
    }

    /// Largest `V_t(θ̂) − V_t(probe)` over `n_probes` seeded probe points;
    /// ≤ `value_tol` certifies the estimate against those probes.
    pub fn minimizer_certificate(&self, n_probes: usize, seed: u64) -> f64 {
        let obj = self.objective();
        let (gap, _) = probe_certificate(&obj, &self.theta_hat, obj.value(&self.theta_hat), n_probes, seed);
        -gap
    }

    /// Evaluates `V_t` on spheres `‖θ‖ = r` and compares the observed lower
    /// envelope with `g(r) − Σ λ^{t−k} ψ(y_k) − λ^t ψ₀(θ̂₀)` when a lower
    /// comparison function `g` for `G_t` is supplied.
    pub fn coercivity_probe(
        &self,
        radii: &[f64],
        directions: usize,
        seed: u64,
        g1: Option<&XiFunction>,
    ) -> CoercivityReport {
        let obj = self.objective();
        let n = self.theta0.len();
        let offset: f64 = self
            .history
            .iter()
            .map(|s| self.weight(s.k) * self.cfg.psi.psi(s.y))
            .sum::<f64>()
            + obj.prior_weight * self.cfg.psi0.psi0(self.theta0.as_slice());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dirs: Vec<DVector<f64>> = (0..directions.max(1))
            .map(|_| loop {
                let u = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let norm: f64 = u.norm();
                if norm > 1e-12 {
                    break u / norm;
                }
            })
            .collect();
        let rows = radii
            .iter()
            .map(|&r| {
                let envelope = dirs
                    .iter()
                    .map(|u| obj.value(&(u * r)))
                    .fold(f64::INFINITY, f64::min);
                CoercivityRow {
                    radius: r,
                    envelope,
                    lower_bound: g1.map(|g| g.eval(r) - offset),
                }
            })
            .collect();
        CoercivityReport { t: self.t, rows }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            t: self.t,
            theta_hat: self.theta_hat.iter().copied().collect(),
            v_opt: self.v_opt,
            solver_iters: self.diagnostics.iterations,
            flag: self.diagnostics.flag,
        }
    }
}

fn rls_scale(psi: &LossSpec) -> f64 {
    match psi {
        LossSpec::Power { scale, .. } => *scale,
        _ => 1.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityRow {
    pub radius: f64,
    /// Smallest observed `V_t(θ)` over the probed directions at this radius.
    pub envelope: f64,
    pub lower_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub t: usize,
    pub rows: Vec<CoercivityRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: usize,
    pub theta_hat: Vec<f64>,
    pub v_opt: f64,
    pub solver_iters: usize,
    pub flag: SolverFlag,
}

/// Runs the identifier over a whole trajectory; returns the snapshots for
/// `t = 0, …, N`.
pub fn run_identifier(cfg: &IdentifierConfig, trajectory: &Trajectory) -> Result<Vec<Snapshot>> {
    let mut state = IdentifierState::new(cfg.clone())?;
    let mut out = Vec::with_capacity(trajectory.len() + 1);
    out.push(state.snapshot());
    for r in &trajectory.records {
        state = state.step(&r.x, r.y)?;
        out.push(state.snapshot());
    }
    Ok(out)
}

/// Header `t,theta_hat_1..n,v_opt,solver_iters,flag`.
pub fn write_snapshots_csv(snapshots: &[Snapshot], w: &mut impl Write) -> std::io::Result<()> {
    let n = snapshots.first().map_or(0, |s| s.theta_hat.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("theta_hat_{i}")));
    header.extend(["v_opt", "solver_iters", "flag"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for s in snapshots {
        write!(w, "{}", s.t)?;
        for v in &s.theta_hat {
            write!(w, ",{}", fmt_real(*v))?;
        }
        writeln!(w, ",{},{},{}", fmt_real(s.v_opt), s.solver_iters, s.flag.as_str())?;
    }
    Ok(())
}
