//! Input-to-state stability bounds for the identifier error.
//!
//! For any exact minimizer sequence under PE,
//!
//! ```text
//! ‖θ̂_t − θ°‖ ≤ ξ⁻¹(b_t),   b_t = 2λ^t ψ₀(θ̂₀ − θ°) + 2 Σ_{k≤t} λ^{t−k} ψ(v_k),
//! ```
//!
//! where `ξ = min(g₁₁, g₁₂)` is the lower comparison function of
//! `G_t(θ) = α_ψ Σ λ^{t−k} ψ(x_kᵀθ) + α_ψ₀ λ^t ψ₀(θ)`:
//! `g₁₁(r) = α_ψ λ^{2T−1} α(r)` from the PE lower bound and
//! `g₁₂(r) = α_ψ₀ λ^{T−1} ξ₁(r)` from the sandwich bound on `ψ₀`.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifier::SolverFlag;
use crate::kinf::XiFunction;
use crate::loss::{sandwich_bounds, LossSpec, NormTag};
use crate::pe::{kinf_from_gamma, PECertificate};
use crate::signal::fmt_real;

/// Slack added to the bound before a sample counts as a violation.
pub const DEFAULT_BOUND_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsLabel {
    Exact,
    /// PE constants came from sphere sampling, so `γ₁` may overestimate the
    /// true infimum and the bound is not a guarantee.
    EstimatedConstants,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiConstruction {
    pub xi: XiFunction,
    pub g11: XiFunction,
    pub g12: XiFunction,
    pub constants: ConstantsLabel,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::contract(format!("forgetting factor must lie in (0, 1), got {lambda}")))
    }
}

fn check_losses(cert: &PECertificate, psi: &LossSpec, psi0: &LossSpec) -> Result<()> {
    let mut missing = Vec::new();
    if !psi.is_scalar() {
        missing.push(format!("ψ = {psi} is not a scalar loss"));
    }
    if psi0.is_scalar() {
        missing.push(format!("ψ₀ = {psi0} is not a vector loss"));
    }
    if *psi != cert.loss {
        missing.push(format!("PE certificate is for {}, not ψ = {psi}", cert.loss));
    }
    if cert.norm != NormTag::Euclidean {
        missing.push("PE norm must be Euclidean".into());
    }
    if let Err(e) = psi.validate().and_then(|_| psi0.validate()) {
        missing.push(e.to_string());
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Construction(missing.join("; ")))
    }
}

/// Builds `ξ = min(g₁₁, g₁₂)` from a PE certificate.
pub fn build_xi_general(
    cert: &PECertificate,
    psi: &LossSpec,
    psi0: &LossSpec,
    lambda: f64,
) -> Result<XiConstruction> {
    check_lambda(lambda)?;
    check_losses(cert, psi, psi0)?;
    let pair = kinf_from_gamma(cert)?;
    let sandwich = sandwich_bounds(psi0, cert.dim, NormTag::Euclidean)?;
    let t = cert.horizon as i32;
    let g11 = pair.alpha.scaled(psi.gti_constant() * lambda.powi(2 * t - 1));
    let g12 = sandwich.xi1.scaled(psi0.gti_constant() * lambda.powi(t - 1));
    let xi = XiFunction::min_of(vec![g11.clone(), g12.clone()]);
    xi.verify()?;
    Ok(XiConstruction {
        xi,
        g11,
        g12,
        constants: if cert.method.is_exact() && sandwich.exact {
            ConstantsLabel::Exact
        } else {
            ConstantsLabel::EstimatedConstants
        },
    })
}

/// Upper comparison function `g₂` with `G_t(θ) ≤ g₂(‖θ‖)` for all `t`:
/// `g₂(r) = α_ψ β(r)/(1 − λ^T) + α_ψ₀ ξ₂(r)`.
pub fn build_g2(cert: &PECertificate, psi: &LossSpec, psi0: &LossSpec, lambda: f64) -> Result<XiFunction> {
    check_lambda(lambda)?;
    check_losses(cert, psi, psi0)?;
    let pair = kinf_from_gamma(cert)?;
    let sandwich = sandwich_bounds(psi0, cert.dim, NormTag::Euclidean)?;
    let windows = 1.0 / (1.0 - lambda.powi(cert.horizon as i32));
    let g2 = XiFunction::sum(vec![
        pair.beta.scaled(psi.gti_constant() * windows),
        sandwich.xi2.scaled(psi0.gti_constant()),
    ]);
    g2.verify()?;
    Ok(g2)
}

/// Closed form for `ψ = |e|^p`, `ψ₀ = γ₀‖θ‖²` and `α(r) = a·r^p`:
/// `ξ(r) = min(a·α_ψ·λ^{2T−1}·r^p, (γ₀/2)·λ^{T−1}·r²)`.
pub fn xi_power_closed_form(a: f64, p: f64, alpha_psi: f64, lambda: f64, horizon: usize, gamma0: f64) -> XiFunction {
    let t = horizon as i32;
    XiFunction::min_of(vec![
        XiFunction::power(a * alpha_psi * lambda.powi(2 * t - 1), p),
        XiFunction::power(gamma0 / 2.0 * lambda.powi(t - 1), 2.0),
    ])
}

/// `G_t(θ) = α_ψ Σ_{k=1}^t λ^{t−k} ψ(x_kᵀθ) + α_ψ₀ λ^t ψ₀(θ)` over `xs[..t]`.
pub fn g_t(xs: &[DVector<f64>], t: usize, theta: &DVector<f64>, psi: &LossSpec, psi0: &LossSpec, lambda: f64) -> f64 {
    let data: f64 = xs[..t]
        .iter()
        .enumerate()
        .map(|(i, x)| lambda.powi((t - 1 - i) as i32) * psi.psi(x.dot(theta)))
        .sum();
    psi.gti_constant() * data + psi0.gti_constant() * lambda.powi(t as i32) * psi0.psi0(theta.as_slice())
}

/// `b_0 = 2ψ₀(η₀)`, `b_t = λ·b_{t−1} + 2ψ(v_t)`; returns `b_0, …, b_N`.
pub fn bound_rhs(noise: &[f64], psi: &LossSpec, psi0: &LossSpec, eta0: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let mut b = Vec::with_capacity(noise.len() + 1);
    let mut cur = 2.0 * psi0.psi0(eta0.as_slice());
    b.push(cur);
    for v in noise {
        cur = lambda * cur + 2.0 * psi.psi(*v);
        b.push(cur);
    }
    Ok(b)
}

pub fn invert_xi(xi: &XiFunction, y: f64) -> Result<f64> {
    xi.invert(y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub t: usize,
    /// `‖η_t‖ = ‖θ̂_t − θ°‖`
    pub err: f64,
    pub b: f64,
    pub xi_inv_b: f64,
    pub violated: bool,
    pub solver_flag: SolverFlag,
}

impl BoundRow {
    pub fn margin(&self) -> f64 {
        self.xi_inv_b - self.err
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTrajectory {
    pub rows: Vec<BoundRow>,
    pub tol: f64,
    pub constants: ConstantsLabel,
    pub violations: usize,
    /// Violations at steps whose solver flag is not `converged`.
    pub explained_violations: usize,
    pub unexplained_violations: usize,
    /// Smallest `ξ⁻¹(b_t) − err_t`.
    pub worst_margin: f64,
}

impl BoundTrajectory {
    pub fn passed(&self) -> bool {
        self.unexplained_violations == 0
    }

    /// Header `t,err,b,xi_inv_b,violated,solver_flag`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t,err,b,xi_inv_b,violated,solver_flag")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.t,
                fmt_real(r.err),
                fmt_real(r.b),
                fmt_real(r.xi_inv_b),
                u8::from(r.violated),
                r.solver_flag.as_str()
            )?;
        }
        Ok(())
    }

    pub fn from_rows(rows: Vec<BoundRow>, tol: f64, constants: ConstantsLabel) -> Self {
        let violations = rows.iter().filter(|r| r.violated).count();
        let explained_violations = rows
            .iter()
            .filter(|r| r.violated && !r.solver_flag.is_clean())
            .count();
        let worst_margin = rows.iter().map(BoundRow::margin).fold(f64::INFINITY, f64::min);
        Self {
            rows,
            tol,
            constants,
            violations,
            explained_violations,
            unexplained_violations: violations - explained_violations,
            worst_margin,
        }
    }
}

/// Compares `‖θ̂_t − θ°‖` against `ξ⁻¹(b_t)` for `t = 0, …, N`. `flags`
/// holds the solver flag per estimate (all converged when `None`).
pub fn check_iss(
    estimates: &[DVector<f64>],
    theta_true: &DVector<f64>,
    b: &[f64],
    xi: &XiFunction,
    flags: Option<&[SolverFlag]>,
    tol: f64,
    constants: ConstantsLabel,
) -> Result<BoundTrajectory> {
    if estimates.len() != b.len() || flags.is_some_and(|f| f.len() != b.len()) {
        return Err(Error::contract(format!(
            "series lengths differ: {} estimates, {} bound values{}",
            estimates.len(),
            b.len(),
            flags.map_or(String::new(), |f| format!(", {} flags", f.len()))
        )));
    }
    let mut rows = Vec::with_capacity(b.len());
    for (t, (est, bt)) in estimates.iter().zip(b).enumerate() {
        if est.len() != theta_true.len() {
            return Err(Error::contract(format!("estimate at t = {t} has the wrong dimension")));
        }
        let err = (est - theta_true).norm();
        let xi_inv_b = xi.invert(*bt)?;
        rows.push(BoundRow {
            t,
            err,
            b: *bt,
            xi_inv_b,
            violated: err > xi_inv_b + tol,
            solver_flag: flags.map_or(SolverFlag::Converged, |f| f[t]),
        });
    }
    Ok(BoundTrajectory::from_rows(rows, tol, constants))
}

/// `ξ⁻¹((2/(1−λ))·ψ(v̄))`, the limit bound for noise with `|v_t| ≤ v̄`.
pub fn asymptotic_bound(psi: &LossSpec, lambda: f64, noise_sup: f64, xi: &XiFunction) -> Result<f64> {
    check_lambda(lambda)?;
    if !(noise_sup >= 0.0) {
        return Err(Error::contract(format!("noise bound must be nonnegative, got {noise_sup}")));
    }
    xi.invert(2.0 / (1.0 - lambda) * psi.psi(noise_sup))
}
