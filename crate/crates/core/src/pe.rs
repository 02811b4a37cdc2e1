//! Persistence-of-excitation certificates.
//!
//! A regressor stream is PE with respect to `ψ` over horizon `T` when every
//! length-`T` window satisfies
//!
//! ```text
//! γ₁ ≤ Σ_{k ∈ window} ψ(x_kᵀθ/‖θ‖) ≤ γ₂   for all θ ≠ 0.
//! ```
//!
//! For `ψ(e) = c·e²` the window extremes are `c` times the extreme
//! eigenvalues of the window Gram matrix; other losses are handled by
//! sphere sampling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinf::XiFunction;
use crate::loss::{LossSpec, NormTag};
use crate::signal::Trajectory;
use crate::sphere::{sphere_extremes, SphereSettings};

/// Window infima at or below this are treated as zero excitation.
pub const DEFAULT_GAMMA_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeMethod {
    SphereSampling { n_samples: usize, refinements: usize },
    EigenExact,
}

impl PeMethod {
    pub fn is_exact(&self) -> bool {
        matches!(self, PeMethod::EigenExact)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeSettings {
    pub sampler: SphereSettings,
    pub gamma_floor: f64,
    /// Use sphere sampling even when the eigenvalue route is available.
    pub force_sampling: bool,
}

impl Default for PeSettings {
    fn default() -> Self {
        Self {
            sampler: SphereSettings::default(),
            gamma_floor: DEFAULT_GAMMA_FLOOR,
            force_sampling: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowGamma {
    pub g1: f64,
    pub g2: f64,
    pub method: PeMethod,
    pub converged: bool,
}

/// Extremes over the unit sphere of `θ ↦ Σ_k ψ(x_kᵀθ)` for one window.
pub fn window_gamma(
    window: &[DVector<f64>],
    loss: &LossSpec,
    settings: &PeSettings,
) -> Result<WindowGamma> {
    let Some(first) = window.first() else {
        return Err(Error::contract("PE window must hold at least one regressor"));
    };
    if !loss.is_scalar() {
        return Err(Error::contract(format!("PE needs a scalar loss, got {loss}")));
    }
    let n = first.len();
    if n == 0 || window.iter().any(|x| x.len() != n) {
        return Err(Error::contract("PE window regressors must share a positive dimension"));
    }

    if loss.is_scalar_quadratic() && !settings.force_sampling {
        let scale = match loss {
            LossSpec::Power { scale, .. } => *scale,
            _ => unreachable!("scalar quadratic is a power loss"),
        };
        let (lo, hi) = gram_extremes(window);
        return Ok(WindowGamma {
            g1: scale * lo,
            g2: scale * hi,
            method: PeMethod::EigenExact,
            converged: true,
        });
    }

    let ext = sphere_extremes(
        n,
        |u| {
            window
                .iter()
                .map(|x| loss.psi(x.iter().zip(u).map(|(a, b)| a * b).sum()))
                .sum()
        },
        &settings.sampler,
    );
    Ok(WindowGamma {
        g1: ext.min.max(0.0),
        g2: ext.max,
        method: PeMethod::SphereSampling {
            n_samples: settings.sampler.n_samples,
            refinements: settings.sampler.refinements,
        },
        converged: ext.converged,
    })
}

/// Extreme eigenvalues of `Σ x_k x_kᵀ`, the smallest clamped at 0.
pub fn gram_extremes(window: &[DVector<f64>]) -> (f64, f64) {
    let n = window[0].len();
    let mut gram = DMatrix::zeros(n, n);
    for x in window {
        gram.ger(1.0, x, x, 1.0);
    }
    let eig = SymmetricEigen::new(gram).eigenvalues;
    (eig.min().max(0.0), eig.max())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PECertificate {
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Regressor dimension.
    pub dim: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub method: PeMethod,
    pub loss: LossSpec,
    pub norm: NormTag,
    pub windows_checked: usize,
    pub is_pe: bool,
    pub gamma_floor: f64,
    /// Window start times checked: windows `{s, …, s + T − 1}` for `s` in this range.
    pub first_window_start: usize,
    pub last_window_start: usize,
    /// False if any sampled window's local search hit its iteration cap.
    pub converged: bool,
}

impl PECertificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn certify_pe(trajectory: &Trajectory, loss: &LossSpec, horizon: usize) -> Result<PECertificate> {
    certify_pe_with(&trajectory.regressors(), loss, horizon, &PeSettings::default())
}

/// Minimum of window infima and maximum of window suprema over every
/// length-`horizon` window of `regressors`.
pub fn certify_pe_with(
    regressors: &[DVector<f64>],
    loss: &LossSpec,
    horizon: usize,
    settings: &PeSettings,
) -> Result<PECertificate> {
    if horizon == 0 {
        return Err(Error::contract("PE horizon T must be at least 1"));
    }
    if regressors.len() < horizon {
        return Err(Error::contract(format!(
            "trajectory has {} samples, shorter than T = {horizon}",
            regressors.len()
        )));
    }
    loss.validate()?;
    let count = regressors.len() - horizon + 1;
    let mut gamma1 = f64::INFINITY;
    let mut gamma2: f64 = 0.0;
    let mut method = PeMethod::EigenExact;
    let mut converged = true;
    for (i, window) in regressors.windows(horizon).enumerate() {
        let mut s = settings.clone();
        s.sampler.seed = settings.sampler.seed.wrapping_add(i as u64);
        let w = window_gamma(window, loss, &s)?;
        gamma1 = gamma1.min(w.g1);
        gamma2 = gamma2.max(w.g2);
        converged &= w.converged;
        method = w.method;
    }
    Ok(PECertificate {
        horizon,
        dim: regressors[0].len(),
        gamma1,
        gamma2,
        method,
        loss: loss.clone(),
        norm: NormTag::Euclidean,
        windows_checked: count,
        is_pe: gamma1 > settings.gamma_floor,
        gamma_floor: settings.gamma_floor,
        first_window_start: 1,
        last_window_start: count,
        converged,
    })
}

/// Default scan horizons `{n, 2n, 4n}`.
pub fn default_scan(n: usize) -> Vec<usize> {
    vec![n, 2 * n, 4 * n]
}

/// Certifies with each horizon in turn and returns the first PE certificate,
/// or the certificate for the last horizon tried if none is PE.
pub fn scan_pe(
    regressors: &[DVector<f64>],
    loss: &LossSpec,
    horizons: &[usize],
    settings: &PeSettings,
) -> Result<PECertificate> {
    let mut last = None;
    for &t in horizons {
        if t > regressors.len() {
            break;
        }
        let cert = certify_pe_with(regressors, loss, t, settings)?;
        if cert.is_pe {
            return Ok(cert);
        }
        last = Some(cert);
    }
    last.ok_or_else(|| Error::contract("no scan horizon fits inside the trajectory"))
}

/// `α(r) ≤ Σ ψ(x_kᵀθ) ≤ β(r)` bounds with `r = ‖θ‖`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KInfinityPair {
    pub alpha: XiFunction,
    pub beta: XiFunction,
}

/// `α(r) = γ₁·f_ψ(r)` and `β(r) = γ₂/f_ψ(1/r)`.
pub fn kinf_from_gamma(cert: &PECertificate) -> Result<KInfinityPair> {
    if !cert.is_pe {
        return Err(Error::PeFailed(format!(
            "γ₁ = {:e} ≤ floor {:e} for T = {}; α would vanish",
            cert.gamma1, cert.gamma_floor, cert.horizon
        )));
    }
    Ok(KInfinityPair {
        alpha: cert.loss.gh_function().scaled(cert.gamma1),
        beta: cert.loss.gh_dual().scaled(cert.gamma2),
    })
}

/// `(α(1), β(1))`.
pub fn gamma_from_kinf(pair: &KInfinityPair) -> (f64, f64) {
    (pair.alpha.eval(1.0), pair.beta.eval(1.0))
}
