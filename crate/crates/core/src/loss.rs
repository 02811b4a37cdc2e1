//! Loss functions for the residual (`ψ: ℝ → ℝ₊`) and prior (`ψ₀: ℝⁿ → ℝ₊`)
//! terms of the forgetting objective, their structural constants, and
//! sampling checks of positive-definiteness, symmetry, the generalized
//! triangle inequality and generalized homogeneity.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinf::XiFunction;
use crate::sphere::{sphere_extremes, SphereSettings};

/// Default absolute tolerance on (scaled) property margins.
pub const DEFAULT_PROPERTY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `e ↦ scale·|e|^p`. `scale` defaults to 1; `scale = 0.5, p = 2` is the
    /// classical least-squares residual `e²/2`.
    Power {
        p: f64,
        #[serde(default = "unit", skip_serializing_if = "is_unit")]
        scale: f64,
    },
    /// `e²/2` for `|e| ≤ h`, `h(|e| − h/2)` otherwise.
    Huber { h: f64 },
    /// `θ ↦ γ₀‖θ‖²` in any dimension.
    #[serde(rename = "scaled_sq_norm")]
    ScaledSquaredNorm { gamma0: f64 },
    /// `θ ↦ θᵀWθ`.
    QuadraticForm {
        #[serde(rename = "W")]
        w: Vec<Vec<f64>>,
    },
}

fn unit() -> f64 {
    1.0
}

fn is_unit(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arity {
    Scalar,
    /// `None` when the loss is defined in every dimension.
    Vector(Option<usize>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormTag {
    #[default]
    Euclidean,
}

impl LossSpec {
    pub fn power(p: f64) -> Self {
        LossSpec::Power { p, scale: 1.0 }
    }

    /// `e ↦ e²/2`.
    pub fn half_square() -> Self {
        LossSpec::Power { p: 2.0, scale: 0.5 }
    }

    pub fn huber(h: f64) -> Self {
        LossSpec::Huber { h }
    }

    pub fn scaled_sq_norm(gamma0: f64) -> Self {
        LossSpec::ScaledSquaredNorm { gamma0 }
    }

    pub fn quadratic_form(w: &DMatrix<f64>) -> Self {
        LossSpec::QuadraticForm {
            w: w.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn arity(&self) -> Arity {
        match self {
            LossSpec::Power { .. } | LossSpec::Huber { .. } => Arity::Scalar,
            LossSpec::ScaledSquaredNorm { .. } => Arity::Vector(None),
            LossSpec::QuadraticForm { w } => Arity::Vector(Some(w.len())),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.arity() == Arity::Scalar
    }

    pub fn name(&self) -> String {
        match self {
            LossSpec::Power { p, scale } if *scale == 1.0 => format!("power(p={p})"),
            LossSpec::Power { p, scale } => format!("power(p={p}, scale={scale})"),
            LossSpec::Huber { h } => format!("huber(h={h})"),
            LossSpec::ScaledSquaredNorm { gamma0 } => format!("scaled_sq_norm(gamma0={gamma0})"),
            LossSpec::QuadraticForm { w } => format!("quadratic_form(n={})", w.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self {
            LossSpec::Power { p, scale } => {
                positive("power exponent p", *p)?;
                positive("power scale", *scale)
            }
            LossSpec::Huber { h } => positive("Huber threshold h", *h),
            LossSpec::ScaledSquaredNorm { gamma0 } => positive("gamma0", *gamma0),
            LossSpec::QuadraticForm { w } => {
                let n = w.len();
                if n == 0 || w.iter().any(|row| row.len() != n) {
                    return Err(Error::Config("quadratic form weight must be a square n×n matrix".into()));
                }
                let m = self.weight_matrix(n).expect("quadratic kind");
                let scale = m.amax().max(1.0);
                if (&m - m.transpose()).amax() > 1e-12 * scale {
                    return Err(Error::Config("quadratic form weight must be symmetric".into()));
                }
                let min_eig = SymmetricEigen::new(m).eigenvalues.min();
                if !(min_eig > 0.0) {
                    return Err(Error::Config(format!(
                        "quadratic form weight must be positive definite (min eigenvalue {min_eig})"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Evaluates the loss at `arg`, checking that the dimension matches the arity.
    pub fn eval(&self, arg: &[f64]) -> Result<f64> {
        match self.arity() {
            Arity::Scalar if arg.len() != 1 => Err(Error::contract(format!(
                "{} takes a scalar argument, got dimension {}",
                self.name(),
                arg.len()
            ))),
            Arity::Scalar => Ok(self.psi(arg[0])),
            Arity::Vector(Some(n)) if arg.len() != n => Err(Error::contract(format!(
                "{} takes a vector of dimension {n}, got {}",
                self.name(),
                arg.len()
            ))),
            Arity::Vector(_) if arg.is_empty() => {
                Err(Error::contract("vector loss evaluated on an empty argument"))
            }
            Arity::Vector(_) => Ok(self.psi0(arg)),
        }
    }

    /// Scalar evaluation without dimension checks. Vector kinds are treated
    /// as their one-dimensional restriction.
    #[inline]
    pub fn psi(&self, e: f64) -> f64 {
        match self {
            LossSpec::Power { p, scale } => {
                if e == 0.0 {
                    0.0
                } else if *p == 2.0 {
                    scale * e * e
                } else {
                    scale * e.abs().powf(*p)
                }
            }
            LossSpec::Huber { h } => {
                let a = e.abs();
                if a <= *h {
                    0.5 * e * e
                } else {
                    h * (a - 0.5 * h)
                }
            }
            LossSpec::ScaledSquaredNorm { gamma0 } => gamma0 * e * e,
            LossSpec::QuadraticForm { w } => w[0][0] * e * e,
        }
    }

    /// Derivative of [`LossSpec::psi`], using the subgradient 0 at kinks.
    #[inline]
    pub fn psi_derivative(&self, e: f64) -> f64 {
        match self {
            LossSpec::Power { p, scale } => {
                if e == 0.0 {
                    0.0
                } else if *p == 2.0 {
                    2.0 * scale * e
                } else {
                    scale * p * e.abs().powf(p - 1.0) * e.signum()
                }
            }
            LossSpec::Huber { h } => e.clamp(-h, *h),
            LossSpec::ScaledSquaredNorm { gamma0 } => 2.0 * gamma0 * e,
            LossSpec::QuadraticForm { w } => 2.0 * w[0][0] * e,
        }
    }

    /// Vector evaluation without dimension checks. Scalar kinds are applied
    /// to the Euclidean norm of `v`.
    pub fn psi0(&self, v: &[f64]) -> f64 {
        match self {
            LossSpec::ScaledSquaredNorm { gamma0 } => gamma0 * v.iter().map(|c| c * c).sum::<f64>(),
            LossSpec::QuadraticForm { w } => w
                .iter()
                .zip(v)
                .map(|(row, vi)| vi * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                .sum(),
            _ => self.psi(v.iter().map(|c| c * c).sum::<f64>().sqrt()),
        }
    }

    /// Weight matrix `W` with `ψ₀(θ) = θᵀWθ`, for the quadratic kinds.
    pub fn weight_matrix(&self, n: usize) -> Option<DMatrix<f64>> {
        match self {
            LossSpec::ScaledSquaredNorm { gamma0 } => Some(DMatrix::identity(n, n) * *gamma0),
            LossSpec::QuadraticForm { w } if w.len() == n => {
                Some(DMatrix::from_fn(n, n, |i, j| w[i][j]))
            }
            _ => None,
        }
    }

    /// Whether the scalar loss is differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        match self {
            LossSpec::Power { p, .. } => *p > 1.0,
            _ => true,
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            LossSpec::Power { p, .. } => *p >= 1.0,
            _ => true,
        }
    }

    /// Whether this is `c·e²` for some `c > 0`.
    pub fn is_scalar_quadratic(&self) -> bool {
        matches!(self, LossSpec::Power { p, .. } if *p == 2.0)
    }

    /// Constant `α` with `ℓ(x − y) ≥ α·ℓ(x) − ℓ(y)` for all `x, y`.
    pub fn gti_constant(&self) -> f64 {
        match self {
            LossSpec::Power { p, .. } => {
                if *p <= 1.0 {
                    2f64.powf(1.0 - 1.0 / p)
                } else {
                    2f64.powf(1.0 - p)
                }
            }
            // convex with ℓ(2u) ≤ 4ℓ(u)
            LossSpec::Huber { .. }
            | LossSpec::ScaledSquaredNorm { .. }
            | LossSpec::QuadraticForm { .. } => 0.5,
        }
    }

    /// The homogeneity function `f` with `ℓ(x) ≥ f(1/|r|)·ℓ(r·x)`.
    pub fn gh_function(&self) -> XiFunction {
        match self {
            LossSpec::Power { p, .. } => XiFunction::power(1.0, *p),
            LossSpec::Huber { .. } => XiFunction::min_of(vec![
                XiFunction::power(1.0, 1.0),
                XiFunction::power(1.0, 2.0),
            ]),
            LossSpec::ScaledSquaredNorm { .. } | LossSpec::QuadraticForm { .. } => {
                XiFunction::power(1.0, 2.0)
            }
        }
    }

    pub fn gh_value(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::contract(format!(
                "homogeneity function is evaluated at s > 0, got {s}"
            )));
        }
        Ok(self.gh_function().eval(s))
    }

    /// `r ↦ 1/f(1/r)`, the growth bound from above.
    pub fn gh_dual(&self) -> XiFunction {
        self.gh_function()
            .dual()
            .expect("homogeneity functions of supported kinds have closed-form duals")
    }

    /// Natural sampling dimension: 1 for scalar kinds, `n` for a quadratic
    /// form, 3 for the dimension-free scaled norm.
    pub fn default_dim(&self) -> usize {
        match self.arity() {
            Arity::Scalar => 1,
            Arity::Vector(Some(n)) => n,
            Arity::Vector(None) => 3,
        }
    }

    pub fn candidate(&self, dim: usize) -> Candidate<'_> {
        let eval: LossFn<'_> = if self.is_scalar() {
            Box::new(move |v: &[f64]| self.psi(v[0]))
        } else {
            Box::new(move |v: &[f64]| self.psi0(v))
        };
        Candidate {
            dim: if self.is_scalar() { 1 } else { dim },
            eval,
            gti: self.gti_constant(),
            gh: self.gh_function(),
        }
    }
}

impl std::fmt::Display for LossSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// A loss together with claimed structural constants, for property checks.
/// Lets tests inject losses and constants that are not in [`LossSpec`].
pub type LossFn<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;

pub struct Candidate<'a> {
    pub dim: usize,
    pub eval: LossFn<'a>,
    /// Claimed GTI constant.
    pub gti: f64,
    /// Claimed homogeneity function.
    pub gh: XiFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub passed: bool,
    /// Most negative scaled margin seen (≥ 0 means no violation).
    pub worst_margin: f64,
    pub witness: Option<String>,
}

impl PropertyCheck {
    fn new() -> Self {
        Self {
            passed: true,
            worst_margin: f64::INFINITY,
            witness: None,
        }
    }

    fn record(&mut self, margin: f64, tol: f64, witness: impl FnOnce() -> String) {
        if margin < self.worst_margin {
            self.worst_margin = margin;
            if margin < -tol {
                self.passed = false;
                self.witness = Some(witness());
            }
        }
    }

    fn fail(&mut self, witness: String) {
        self.passed = false;
        if self.witness.is_none() {
            self.witness = Some(witness);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub positive_definite: PropertyCheck,
    pub symmetric: PropertyCheck,
    pub triangle: PropertyCheck,
    pub homogeneity: PropertyCheck,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.positive_definite.passed
            && self.symmetric.passed
            && self.triangle.passed
            && self.homogeneity.passed
    }

    /// Positivity, symmetry and the triangle property, which the ISS bound
    /// needs; homogeneity only enters the comparison functions.
    pub fn passed_bound_hypotheses(&self) -> bool {
        self.positive_definite.passed && self.symmetric.passed && self.triangle.passed
    }

    pub fn worst_margin(&self) -> f64 {
        [
            &self.positive_definite,
            &self.symmetric,
            &self.triangle,
            &self.homogeneity,
        ]
        .iter()
        .map(|c| c.worst_margin)
        .fold(f64::INFINITY, f64::min)
    }
}

pub fn verify_properties(spec: &LossSpec, n_samples: usize, seed: u64, tol: f64) -> PropertyReport {
    verify_candidate(&spec.candidate(spec.default_dim()), n_samples, seed, tol)
}

/// Samples `n_samples` points and pairs and checks all four properties for the candidate.
///
/// Margins are divided by `max(1, |terms|)` so the tolerance is absolute for
/// moderate values and relative for large ones.
pub fn verify_candidate(c: &Candidate<'_>, n_samples: usize, seed: u64, tol: f64) -> PropertyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = c.dim;
    let l = |v: &[f64]| (c.eval)(v);
    let n_samples = n_samples.max(1);

    let mut pos = PropertyCheck::new();
    let at_zero = l(&vec![0.0; n]);
    pos.record(-at_zero.abs(), tol, || format!("ℓ(0) = {at_zero}"));
    for _ in 0..n_samples.min(256) {
        let u = random_direction(&mut rng, n);
        for k in -8..=3 {
            let x: Vec<f64> = u.iter().map(|ui| ui * 10f64.powi(k)).collect();
            let v = l(&x);
            if !(v > 0.0) {
                pos.fail(format!("ℓ({x:?}) = {v} at a nonzero point"));
            }
        }
    }
    if pos.worst_margin == f64::INFINITY {
        pos.worst_margin = 0.0;
    }

    let mut sym = PropertyCheck::new();
    let mut tri = PropertyCheck::new();
    let mut hom = PropertyCheck::new();
    for i in 0..n_samples {
        let x = random_point(&mut rng, n);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let (lx, lneg) = (l(&x), l(&neg));
        sym.record(-(lx - lneg).abs() / scale(&[lx, lneg]), tol, || {
            format!("ℓ({x:?}) = {lx} but ℓ(−x) = {lneg}")
        });

        // every other pair is collinear, where GTI is tight
        let y: Vec<f64> = if i % 2 == 0 {
            random_point(&mut rng, n)
        } else {
            let k: f64 = rng.random_range(-2.0..2.0);
            x.iter().map(|v| k * v).collect()
        };
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let (ld, ly) = (l(&diff), l(&y));
        let rhs = c.gti * lx - ly;
        tri.record((ld - rhs) / scale(&[ld, c.gti * lx, ly]), tol, || {
            format!("ℓ(x−y) = {ld} < α·ℓ(x) − ℓ(y) = {rhs} at x = {x:?}, y = {y:?}")
        });

        let mag = 10f64.powf(rng.random_range(-2.0..2.0));
        let r = if rng.random_bool(0.5) { mag } else { -mag };
        let rx: Vec<f64> = x.iter().map(|v| r * v).collect();
        let f = c.gh.eval(1.0 / r.abs());
        let lrx = f * l(&rx);
        hom.record((lx - lrx) / scale(&[lx, lrx]), tol, || {
            format!("ℓ(x) = {lx} < f(1/|r|)·ℓ(rx) = {lrx} at x = {x:?}, r = {r}")
        });
    }

    PropertyReport {
        positive_definite: pos,
        symmetric: sym,
        triangle: tri,
        homogeneity: hom,
        samples: n_samples,
        seed,
        tol,
    }
}

fn scale(terms: &[f64]) -> f64 {
    terms.iter().fold(1.0_f64, |m, t| m.max(t.abs()))
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// Random direction with log-uniform radius in `[1e-3, 10^1.5]`.
fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let radius = 10f64.powf(rng.random_range(-3.0..1.5));
    random_direction(rng, n).into_iter().map(|c| c * radius).collect()
}

/// The pair `ξ₁(r) = D₁·f(r)`, `ξ₂(r) = D₂/f(1/r)` bracketing a vector loss
/// by functions of the norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichBounds {
    pub d1: f64,
    pub d2: f64,
    pub xi1: XiFunction,
    pub xi2: XiFunction,
    pub norm: NormTag,
    /// True when `D₁`, `D₂` are exact (eigenvalues) rather than sampled.
    pub exact: bool,
    /// False if sphere refinement did not converge.
    pub verified: bool,
}

/// Sandwich bounds for a vector loss of dimension `n`. Exact for the
/// quadratic kinds, where `D₁` and `D₂` are the extreme eigenvalues of `W`.
pub fn sandwich_bounds(spec: &LossSpec, n: usize, norm: NormTag) -> Result<SandwichBounds> {
    let NormTag::Euclidean = norm;
    if spec.is_scalar() {
        return Err(Error::contract(format!(
            "sandwich bounds need a vector loss, got {}",
            spec.name()
        )));
    }
    spec.validate()?;
    let w = spec.weight_matrix(n).ok_or_else(|| {
        Error::contract(format!("{} is not defined in dimension {n}", spec.name()))
    })?;
    let eig = SymmetricEigen::new(w).eigenvalues;
    let (d1, d2) = (eig.min(), eig.max());
    Ok(SandwichBounds {
        d1,
        d2,
        xi1: spec.gh_function().scaled(d1),
        xi2: spec.gh_dual().scaled(d2),
        norm,
        exact: true,
        verified: true,
    })
}

/// Sandwich bounds with `D₁`, `D₂` estimated by sphere sampling. `D₁` is an
/// upper estimate of the true minimum.
pub fn sandwich_bounds_sampled(c: &Candidate<'_>, settings: &SphereSettings) -> Result<SandwichBounds> {
    let dual = c.gh.dual().ok_or_else(|| {
        Error::Construction("homogeneity function has no closed-form dual".into())
    })?;
    let ext = sphere_extremes(c.dim, |u| (c.eval)(u), settings);
    Ok(SandwichBounds {
        d1: ext.min,
        d2: ext.max,
        xi1: c.gh.scaled(ext.min),
        xi2: dual.scaled(ext.max),
        norm: NormTag::Euclidean,
        exact: false,
        verified: ext.converged,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn eval_examples() {
        assert_eq!(LossSpec::power(2.0).eval(&[3.0]).unwrap(), 9.0);
        assert_eq!(LossSpec::huber(1.0).eval(&[2.0]).unwrap(), 1.5);
        assert_eq!(LossSpec::huber(1.0).eval(&[0.5]).unwrap(), 0.125);
        assert_eq!(LossSpec::scaled_sq_norm(2.0).eval(&[1.0, 2.0]).unwrap(), 10.0);
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        // [1, -1] W [1, -1]ᵀ = 2 - 1 - 1 + 3
        assert_eq!(LossSpec::quadratic_form(&w).eval(&[1.0, -1.0]).unwrap(), 3.0);
    }

    #[test]
    fn zero_maps_to_zero() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        for spec in [
            LossSpec::power(0.5),
            LossSpec::power(3.0),
            LossSpec::huber(2.0),
        ] {
            assert_eq!(spec.eval(&[0.0]).unwrap(), 0.0);
        }
        assert_eq!(LossSpec::scaled_sq_norm(3.0).eval(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(LossSpec::quadratic_form(&w).eval(&[0.0; 2]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_a_contract_error() {
        assert!(matches!(LossSpec::power(2.0).eval(&[1.0, 2.0]), Err(Error::Contract(_))));
        let w = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(LossSpec::quadratic_form(&w).eval(&[1.0]), Err(Error::Contract(_))));
        assert!(matches!(LossSpec::scaled_sq_norm(1.0).eval(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(LossSpec::power(0.0).validate().is_err());
        assert!(LossSpec::huber(-1.0).validate().is_err());
        assert!(LossSpec::scaled_sq_norm(0.0).validate().is_err());
        let asym = LossSpec::QuadraticForm { w: vec![vec![1.0, 2.0], vec![0.0, 1.0]] };
        assert!(asym.validate().is_err());
        let indefinite = LossSpec::QuadraticForm { w: vec![vec![1.0, 2.0], vec![2.0, 1.0]] };
        assert!(indefinite.validate().is_err());
        assert!(LossSpec::QuadraticForm { w: vec![vec![1.0, 0.0]] }.validate().is_err());
    }

    #[test]
    fn gti_constants() {
        assert_eq!(LossSpec::power(2.0).gti_constant(), 0.5);
        assert_eq!(LossSpec::power(1.0).gti_constant(), 1.0);
        assert_eq!(LossSpec::power(0.5).gti_constant(), 0.5);
        assert_eq!(LossSpec::power(3.0).gti_constant(), 0.25);
        assert_eq!(LossSpec::huber(1.0).gti_constant(), 0.5);
        assert_eq!(LossSpec::scaled_sq_norm(4.0).gti_constant(), 0.5);
    }

    /// Oracle: grid minimum of ψ(x)/ψ(x/s) over x, which for a valid GH
    /// function bounds f(s) from above.
    fn gh_ratio_oracle(spec: &LossSpec, s: f64) -> f64 {
        (1..4000)
            .map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / 4000.0))
            .map(|x| spec.psi(x) / spec.psi(x / s))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn gh_values_match_ratio_oracle() {
        let p2 = LossSpec::power(2.0);
        assert_eq!(p2.gh_value(0.5).unwrap(), 0.25);
        assert!((gh_ratio_oracle(&p2, 0.5) - 0.25).abs() < 1e-12);

        let hub = LossSpec::huber(1.0);
        assert_eq!(hub.gh_value(3.0).unwrap(), 3.0);
        let oracle = gh_ratio_oracle(&hub, 3.0);
        assert!(oracle >= 3.0 - 1e-9, "oracle {oracle}");

        assert_eq!(LossSpec::power(1.0).gh_value(1.0).unwrap(), 1.0);
        assert!(matches!(p2.gh_value(0.0), Err(Error::Contract(_))));
        assert!(matches!(p2.gh_value(-1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn gh_functions_are_kinf() {
        for spec in [
            LossSpec::power(0.5),
            LossSpec::power(1.0),
            LossSpec::power(2.0),
            LossSpec::huber(0.5),
            LossSpec::scaled_sq_norm(1.0),
        ] {
            spec.gh_function().verify().unwrap();
            spec.gh_dual().verify().unwrap();
        }
    }

    #[test]
    fn power_two_passes_all_properties() {
        let rep = verify_properties(&LossSpec::power(2.0), 10_000, 1, DEFAULT_PROPERTY_TOL);
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.worst_margin() >= -DEFAULT_PROPERTY_TOL);
        assert_eq!(rep.samples, 10_000);
    }

    #[test]
    fn asymmetric_loss_fails_symmetry() {
        let c = Candidate {
            dim: 1,
            eval: Box::new(|v: &[f64]| if v[0] >= 0.0 { v[0] * v[0] } else { 2.0 * v[0] * v[0] }),
            gti: 0.5,
            gh: XiFunction::power(1.0, 2.0),
        };
        let rep = verify_candidate(&c, 1000, 3, DEFAULT_PROPERTY_TOL);
        assert!(!rep.symmetric.passed);
        assert!(rep.symmetric.witness.is_some());
        assert!(rep.positive_definite.passed);
    }

    #[test]
    fn overclaimed_huber_gti_fails() {
        let spec = LossSpec::huber(1.0);
        let mut c = spec.candidate(1);
        c.gti = 1.0;
        let rep = verify_candidate(&c, 2000, 5, DEFAULT_PROPERTY_TOL);
        assert!(!rep.triangle.passed);
        // the violating pair named in the docs: x = 2h, y = x/2
        let (x, y) = (2.0, 1.0);
        assert!(spec.psi(x - y) < 1.0 * spec.psi(x) - spec.psi(y));
    }

    #[test]
    fn sandwich_examples() {
        let id = sandwich_bounds(&LossSpec::quadratic_form(&DMatrix::identity(2, 2)), 2, NormTag::Euclidean).unwrap();
        assert_eq!((id.d1, id.d2), (1.0, 1.0));
        assert_eq!(id.xi1, XiFunction::power(1.0, 2.0));
        assert_eq!(id.xi2, XiFunction::power(1.0, 2.0));

        let g = sandwich_bounds(&LossSpec::scaled_sq_norm(2.0), 3, NormTag::Euclidean).unwrap();
        assert_eq!(g.xi1, XiFunction::power(2.0, 2.0));
        assert_eq!(g.xi2, XiFunction::power(2.0, 2.0));

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let s = sandwich_bounds(&LossSpec::quadratic_form(&d), 2, NormTag::Euclidean).unwrap();
        assert!((s.d1 - 1.0).abs() < 1e-14 && (s.d2 - 4.0).abs() < 1e-14);
        assert!(s.exact);
    }

    #[test]
    fn sandwich_requires_vector_loss() {
        assert!(matches!(
            sandwich_bounds(&LossSpec::power(2.0), 1, NormTag::Euclidean),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn sampled_sandwich_agrees_with_eigenvalues() {
        let w = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.0]);
        let spec = LossSpec::quadratic_form(&w);
        let exact = sandwich_bounds(&spec, 3, NormTag::Euclidean).unwrap();
        let sampled = sandwich_bounds_sampled(&spec.candidate(3), &SphereSettings::default()).unwrap();
        assert!(sampled.d1 >= exact.d1 - 1e-12);
        assert!((sampled.d1 - exact.d1).abs() < 1e-8);
        assert!((sampled.d2 - exact.d2).abs() < 1e-8);
        assert!(!sampled.exact);
    }

    #[test]
    fn serde_fragments() {
        let p: LossSpec = serde_json::from_str(r#"{ "kind": "power", "p": 2.0 }"#).unwrap();
        assert_eq!(p, LossSpec::power(2.0));
        let h: LossSpec = serde_json::from_str(r#"{ "kind": "huber", "h": 1.0 }"#).unwrap();
        assert_eq!(h, LossSpec::huber(1.0));
        let g: LossSpec = serde_json::from_str(r#"{ "kind": "scaled_sq_norm", "gamma0": 1.0 }"#).unwrap();
        assert_eq!(g, LossSpec::scaled_sq_norm(1.0));
        let q: LossSpec =
            serde_json::from_str(r#"{ "kind": "quadratic_form", "W": [[1.0, 0.0], [0.0, 2.0]] }"#).unwrap();
        assert_eq!(q.arity(), Arity::Vector(Some(2)));
        assert_eq!(serde_json::to_string(&LossSpec::power(2.0)).unwrap(), r#"{"kind":"power","p":2.0}"#);
    }
}
