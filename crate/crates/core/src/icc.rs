//! Item characteristic curves and the Beta response model.
//!
//! A response `p` of a respondent with ability `θ ∈ (0,1)` to an item with
//! difficulty `δ ∈ (0,1)` and discrimination `a` is drawn from
//! `Beta(α, β)` with
//!
//! ```text
//! α = (θ / δ)^a        β = ((1 - θ) / (1 - δ))^a
//! ```
//!
//! The item characteristic curve is the mean of that Beta distribution,
//!
//! ```text
//! E[p] = α / (α + β) = 1 / (1 + (δ/(1-δ))^a · (θ/(1-θ))^(-a))
//! ```
//!
//! which in log-odds form is `logistic(a · (logit θ - logit δ))`. Every
//! power and ratio here is evaluated in log-space so `|a|` in the tens does
//! not overflow.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

/// Smallest admissible distance of a bounded parameter from 0 or 1.
pub const BOUND_EPS: f64 = 1e-6;

/// Numerically stable logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

fn check_bounded(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && (BOUND_EPS..=1.0 - BOUND_EPS).contains(&value) {
        Ok(value)
    } else {
        Err(Error::OutOfRange { what, value })
    }
}

/// Respondent ability on the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Ability(f64);

impl Ability {
    /// Rejects values outside `[1e-6, 1 - 1e-6]` instead of clipping them.
    pub fn new(value: f64) -> Result<Self> {
        check_bounded("ability", value).map(Self)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Ability {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Ability> for f64 {
    fn from(a: Ability) -> f64 {
        a.0
    }
}

/// Item difficulty on the open unit interval. The expected response is 0.5
/// when ability equals difficulty.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Difficulty(f64);

impl Difficulty {
    pub fn new(value: f64) -> Result<Self> {
        check_bounded("difficulty", value).map(Self)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Difficulty {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Difficulty> for f64 {
    fn from(d: Difficulty) -> f64 {
        d.0
    }
}

/// Item discrimination: the exponent applied to the ability/difficulty
/// ratios. Any finite sign is allowed; zero gives a flat curve.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Discrimination(f64);

impl Discrimination {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::OutOfRange {
                what: "discrimination",
                value,
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Discrimination {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Discrimination> for f64 {
    fn from(a: Discrimination) -> f64 {
        a.0
    }
}

/// Shape parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaShape {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaShape {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha", format!("{alpha} is not a positive real")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid("beta", format!("{beta} is not a positive real")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Shape of an ICC as a function of the discrimination. Boundaries are
/// compared exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IccRegime {
    /// `a > 1`
    Sigmoid,
    /// `a = 1`
    Parabolic,
    /// `0 < a < 1`
    AntiSigmoid,
    /// `a = 0`
    Flat,
    /// `-1 < a < 0`
    DecreasingAntiSigmoid,
    /// `a = -1`
    DecreasingParabolic,
    /// `a < -1`
    DecreasingSigmoid,
}

impl IccRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            IccRegime::Sigmoid => "sigmoid",
            IccRegime::Parabolic => "parabolic",
            IccRegime::AntiSigmoid => "anti_sigmoid",
            IccRegime::Flat => "flat",
            IccRegime::DecreasingAntiSigmoid => "decreasing_anti_sigmoid",
            IccRegime::DecreasingParabolic => "decreasing_parabolic",
            IccRegime::DecreasingSigmoid => "decreasing_sigmoid",
        }
    }
}

impl std::fmt::Display for IccRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(α, β)` of the response distribution, computed as
/// `α = exp(a·(ln θ - ln δ))`, `β = exp(a·(ln(1-θ) - ln(1-δ)))`.
pub fn beta_shape(theta: Ability, delta: Difficulty, a: Discrimination) -> BetaShape {
    let (alpha, beta) = shape_raw(theta.0, delta.0, a.0);
    BetaShape { alpha, beta }
}

/// Expected response `E[p | θ, δ, a]`.
pub fn icc_beta3(theta: Ability, delta: Difficulty, a: Discrimination) -> f64 {
    expected_response(theta.0, delta.0, a.0)
}

/// Slope of the ICC with respect to ability at `θ = δ`: `a / (4 δ (1 - δ))`.
pub fn icc_slope_at_difficulty(delta: Difficulty, a: Discrimination) -> f64 {
    a.0 / (4.0 * delta.0 * (1.0 - delta.0))
}

pub fn icc_regime(a: Discrimination) -> IccRegime {
    let a = a.0;
    if a > 1.0 {
        IccRegime::Sigmoid
    } else if a == 1.0 {
        IccRegime::Parabolic
    } else if a > 0.0 {
        IccRegime::AntiSigmoid
    } else if a == 0.0 {
        IccRegime::Flat
    } else if a > -1.0 {
        IccRegime::DecreasingAntiSigmoid
    } else if a == -1.0 {
        IccRegime::DecreasingParabolic
    } else {
        IccRegime::DecreasingSigmoid
    }
}

/// Logistic ICC of the continuous 2PL baseline on unbounded scales:
/// `1 / (1 + exp(-a (θ - δ)))`.
pub fn icc_2plnd(theta: f64, delta: f64, a: Discrimination) -> f64 {
    logistic(a.0 * (theta - delta))
}

/// Inverts the ICC: the ability at which an item with difficulty `delta` and
/// discrimination `a` has expected response `p_bar`.
///
/// Solves `(1/p̄ - 1)^(1/a) · (1/δ - 1) = 1/θ - 1`, i.e.
/// `logit θ = logit δ + logit(p̄) / a`.
pub fn ability_from_expected_response(
    p_bar: f64,
    delta: Difficulty,
    a: Discrimination,
) -> Result<Ability> {
    if a.0 == 0.0 {
        return Err(Error::ZeroDiscrimination);
    }
    if !(p_bar > 0.0 && p_bar < 1.0) {
        return Err(Error::DegenerateResponse(p_bar));
    }
    Ability::new(logistic(logit(delta.0) + logit(p_bar) / a.0))
}

/// Log-density of `Beta(α, β)` at `p ∈ (0, 1)`.
pub fn beta_log_density(p: f64, shape: BetaShape) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DegenerateResponse(p));
    }
    Ok(beta_log_density_raw(p, shape.alpha, shape.beta))
}

// Unchecked kernels shared by the fitters. Callers guarantee θ, δ ∈ (0,1).

#[inline]
pub(crate) fn shape_raw(theta: f64, delta: f64, a: f64) -> (f64, f64) {
    let alpha = (a * (theta.ln() - delta.ln())).exp();
    let beta = (a * ((-theta).ln_1p() - (-delta).ln_1p())).exp();
    (alpha, beta)
}

#[inline]
pub(crate) fn expected_response(theta: f64, delta: f64, a: f64) -> f64 {
    logistic(a * (logit(theta) - logit(delta)))
}

#[inline]
pub(crate) fn beta_log_density_raw(p: f64, alpha: f64, beta: f64) -> f64 {
    (alpha - 1.0) * p.ln() + (beta - 1.0) * (-p).ln_1p() - ln_beta(alpha, beta)
}
