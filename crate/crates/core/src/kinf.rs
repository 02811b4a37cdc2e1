//! Class-K∞ comparison functions.
//!
//! A [`XiFunction`] is a small expression tree over power terms `c·r^p`
//! closed under pointwise min, max, sum and positive scaling, plus a
//! tabulated piecewise-linear form. Every node can be evaluated and
//! inverted; power terms and min/max trees are inverted in closed form,
//! sums and tables fall back to bracketing plus bisection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative accuracy of numeric inversion: `|ξ(r) − y| ≤ INVERSE_TOL·max(1, y)`.
pub const INVERSE_TOL: f64 = 1e-10;

/// Number of log-spaced points used to check K∞ membership.
pub const KINF_GRID_POINTS: usize = 64;
pub const KINF_GRID_LO: f64 = 1e-6;
pub const KINF_GRID_HI: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XiFunction {
    /// `r ↦ c·r^p`
    Power { c: f64, p: f64 },
    MinOf { terms: Vec<XiFunction> },
    MaxOf { terms: Vec<XiFunction> },
    Sum { terms: Vec<XiFunction> },
    /// Piecewise-linear interpolation through `(grid[i], values[i])`, linearly
    /// extrapolated past the last knot. `grid[0]` must be 0.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl XiFunction {
    pub fn power(c: f64, p: f64) -> Self {
        XiFunction::Power { c, p }
    }

    /// Pointwise minimum. Nested minima are flattened and power terms
    /// sharing an exponent collapse to the one with the smaller coefficient.
    pub fn min_of(terms: Vec<XiFunction>) -> Self {
        combine(terms, Combine::Min)
    }

    pub fn max_of(terms: Vec<XiFunction>) -> Self {
        combine(terms, Combine::Max)
    }

    pub fn sum(terms: Vec<XiFunction>) -> Self {
        combine(terms, Combine::Sum)
    }

    /// `r ↦ k·ξ(r)` for `k > 0`.
    pub fn scaled(&self, k: f64) -> Self {
        match self {
            XiFunction::Power { c, p } => XiFunction::Power { c: c * k, p: *p },
            XiFunction::MinOf { terms } => XiFunction::MinOf {
                terms: terms.iter().map(|t| t.scaled(k)).collect(),
            },
            XiFunction::MaxOf { terms } => XiFunction::MaxOf {
                terms: terms.iter().map(|t| t.scaled(k)).collect(),
            },
            XiFunction::Sum { terms } => XiFunction::Sum {
                terms: terms.iter().map(|t| t.scaled(k)).collect(),
            },
            XiFunction::Tabulated { grid, values } => XiFunction::Tabulated {
                grid: grid.clone(),
                values: values.iter().map(|v| v * k).collect(),
            },
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            XiFunction::Power { c, p } => {
                if r == 0.0 {
                    0.0
                } else {
                    c * r.powf(*p)
                }
            }
            XiFunction::MinOf { terms } => terms
                .iter()
                .map(|t| t.eval(r))
                .fold(f64::INFINITY, f64::min),
            XiFunction::MaxOf { terms } => terms
                .iter()
                .map(|t| t.eval(r))
                .fold(f64::NEG_INFINITY, f64::max),
            XiFunction::Sum { terms } => terms.iter().map(|t| t.eval(r)).sum(),
            XiFunction::Tabulated { grid, values } => interpolate(grid, values, r),
        }
    }

    /// Returns `r ≥ 0` with `ξ(r) = y` to within [`INVERSE_TOL`].
    pub fn invert(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0) {
            return Err(Error::contract(format!(
                "K∞ inverse requires a nonnegative argument, got {y}"
            )));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        match self {
            XiFunction::Power { c, p } => Ok((y / c).powf(1.0 / p)),
            // min of increasing functions inverts to the max of the inverses
            XiFunction::MinOf { terms } => terms
                .iter()
                .map(|t| t.invert(y))
                .try_fold(0.0_f64, |acc, r| Ok(acc.max(r?))),
            XiFunction::MaxOf { terms } => terms
                .iter()
                .map(|t| t.invert(y))
                .try_fold(f64::INFINITY, |acc, r| Ok(acc.min(r?))),
            XiFunction::Sum { .. } | XiFunction::Tabulated { .. } => {
                invert_by_bisection(|r| self.eval(r), y)
            }
        }
    }

    /// The dual `r ↦ 1/ξ(1/r)` (with value 0 at 0), available in closed form
    /// for power terms and min/max trees of them.
    pub fn dual(&self) -> Option<XiFunction> {
        match self {
            XiFunction::Power { c, p } => Some(XiFunction::Power { c: 1.0 / c, p: *p }),
            XiFunction::MinOf { terms } => terms
                .iter()
                .map(|t| t.dual())
                .collect::<Option<Vec<_>>>()
                .map(XiFunction::max_of),
            XiFunction::MaxOf { terms } => terms
                .iter()
                .map(|t| t.dual())
                .collect::<Option<Vec<_>>>()
                .map(XiFunction::min_of),
            XiFunction::Sum { .. } | XiFunction::Tabulated { .. } => None,
        }
    }

    /// Checks zero-at-zero and strict increase on the verification grid.
    pub fn verify(&self) -> Result<()> {
        if let XiFunction::Tabulated { grid, values } = self {
            if grid.len() < 2 || grid.len() != values.len() || grid[0] != 0.0 {
                return Err(Error::Construction(
                    "tabulated K∞ function needs ≥ 2 knots starting at r = 0".into(),
                ));
            }
        }
        let at_zero = self.eval(0.0);
        if at_zero != 0.0 {
            return Err(Error::Construction(format!(
                "K∞ function must vanish at 0, got {at_zero}"
            )));
        }
        let mut prev = 0.0;
        for r in kinf_grid() {
            let v = self.eval(r);
            if !(v > prev) || !v.is_finite() {
                return Err(Error::Construction(format!(
                    "K∞ function is not strictly increasing near r = {r:e}"
                )));
            }
            prev = v;
        }
        Ok(())
    }
}

/// The 64 log-spaced radii over `[1e-6, 1e6]` used by [`XiFunction::verify`].
pub fn kinf_grid() -> impl Iterator<Item = f64> {
    let (lo, hi) = (KINF_GRID_LO.log10(), KINF_GRID_HI.log10());
    let step = (hi - lo) / (KINF_GRID_POINTS - 1) as f64;
    (0..KINF_GRID_POINTS).map(move |i| 10f64.powf(lo + step * i as f64))
}

/// Inverts a continuous increasing `f` with `f(0) = 0` at `y > 0` by doubling
/// an upper bracket and bisecting.
pub fn invert_by_bisection(f: impl Fn(f64) -> f64, y: f64) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::contract(format!(
            "K∞ inverse requires a nonnegative argument, got {y}"
        )));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let tol = INVERSE_TOL * y.max(1.0);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while f(hi) < y {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 2000 || !hi.is_finite() {
            return Err(Error::Numerical(format!(
                "could not bracket K∞ inverse at y = {y}"
            )));
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if (v - y).abs() <= tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if v < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

fn interpolate(grid: &[f64], values: &[f64], r: f64) -> f64 {
    let n = grid.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return values[0];
    }
    let i = match grid.partition_point(|g| *g <= r) {
        0 => 0,
        k if k >= n => n - 2,
        k => k - 1,
    };
    let (g0, g1) = (grid[i], grid[i + 1]);
    let (v0, v1) = (values[i], values[i + 1]);
    v0 + (v1 - v0) * (r - g0) / (g1 - g0)
}

#[derive(Clone, Copy, PartialEq)]
enum Combine {
    Min,
    Max,
    Sum,
}

fn combine(terms: Vec<XiFunction>, how: Combine) -> XiFunction {
    let mut flat = Vec::with_capacity(terms.len());
    for t in terms {
        match (how, t) {
            (Combine::Min, XiFunction::MinOf { terms })
            | (Combine::Max, XiFunction::MaxOf { terms })
            | (Combine::Sum, XiFunction::Sum { terms }) => flat.extend(terms),
            (_, other) => flat.push(other),
        }
    }
    // merge power terms with identical exponents
    let mut merged: Vec<XiFunction> = Vec::with_capacity(flat.len());
    for t in flat {
        if let XiFunction::Power { c, p } = t {
            let slot = merged
                .iter_mut()
                .find(|m| matches!(m, XiFunction::Power { p: q, .. } if *q == p));
            if let Some(XiFunction::Power { c: c0, .. }) = slot {
                *c0 = match how {
                    Combine::Min => c0.min(c),
                    Combine::Max => c0.max(c),
                    Combine::Sum => *c0 + c,
                };
                continue;
            }
            merged.push(XiFunction::Power { c, p });
        } else {
            merged.push(t);
        }
    }
    if merged.len() == 1 {
        return merged.pop().unwrap();
    }
    match how {
        Combine::Min => XiFunction::MinOf { terms: merged },
        Combine::Max => XiFunction::MaxOf { terms: merged },
        Combine::Sum => XiFunction::Sum { terms: merged },
    }
}
