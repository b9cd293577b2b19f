//! Gaussian-mechanism accounting by Rényi composition, and the excess-risk
//! bound for noisy strongly convex SGD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::PerturbationNorm;
use crate::scalar::Scalar;

/// Replace-one sensitivity of one summed gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Sensitivity<T> {
    pub lipschitz: T,
    /// Adversarial radius `r`; zero for nominal training.
    #[serde(default)]
    pub radius: T,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default)]
    pub norm: PerturbationNorm,
}

fn one() -> usize {
    1
}

impl<T: Scalar> Sensitivity<T> {
    pub fn nominal(lipschitz: T) -> Self {
        Self {
            lipschitz,
            radius: T::zero(),
            dim: 1,
            norm: PerturbationNorm::L2,
        }
    }

    pub fn robust(lipschitz: T, radius: T, dim: usize, norm: PerturbationNorm) -> Self {
        Self {
            lipschitz,
            radius,
            dim,
            norm,
        }
    }

    /// `Δ = 2L(1 + r)` for ℓ2 radii and `2L(1 + r√d)` for ℓ∞ radii.
    ///
    /// The per-example robust gradient is `ℓ'·(yx - r ∂‖w‖_q)`; the dual-norm
    /// subgradient has Euclidean length 1 (q = 2) or at most `√d` (q = 1).
    pub fn value(&self) -> T {
        let two = T::lit(2.0);
        let spread = match self.norm {
            PerturbationNorm::L2 => self.radius,
            PerturbationNorm::Linf => self.radius * T::from_count(self.dim).sqrt(),
        };
        two * self.lipschitz * (T::one() + spread)
    }

    fn check(&self) -> Result<()> {
        if !(self.lipschitz > T::zero()) || !(self.radius >= T::zero()) || self.dim == 0 {
            return Err(Error::invalid("sensitivity needs L > 0, r >= 0, d >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountantResult<T> {
    pub epsilon: T,
    /// Minimising Rényi order.
    pub lambda: usize,
}

/// `ε = min_λ (α(λ) + ln(1/δ))/λ` with `α(λ) = λ(λ+1)Δ²T/(2σ²)` over integer `λ ∈ 1..=lambda_max`.
pub fn accountant_epsilon<T: Scalar>(
    sigma: T,
    steps: usize,
    sensitivity: &Sensitivity<T>,
    delta: T,
    lambda_max: usize,
) -> Result<AccountantResult<T>> {
    sensitivity.check()?;
    if lambda_max < 1 {
        return Err(Error::invalid("lambda_max must be >= 1"));
    }
    if !(sigma > T::zero()) {
        return Err(Error::invalid(format!("sigma = {sigma} must be > 0")));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    if steps == 0 {
        return Err(Error::invalid("steps must be >= 1"));
    }
    let dl = sensitivity.value();
    let rate = dl * dl * T::from_count(steps) / (T::lit(2.0) * sigma * sigma);
    let log_inv_delta = -delta.ln();
    let mut best = AccountantResult {
        epsilon: T::infinity(),
        lambda: 1,
    };
    for lambda in 1..=lambda_max {
        let l = T::from_count(lambda);
        let eps = (l * (l + T::one()) * rate + log_inv_delta) / l;
        if eps < best.epsilon {
            best = AccountantResult { epsilon: eps, lambda };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaCalibration<T> {
    pub sigma: T,
    pub achieved: AccountantResult<T>,
    /// `σ² = c′ (Δ/2)² T ln(1/δ)/ε²` with `c′ =` [`CLOSED_FORM_CONSTANT`].
    pub closed_form_sigma: T,
}

/// Constant used for the closed-form comparison; bounds the Rényi
/// minimisation from above whenever the optimal order is below `lambda_max`.
pub const CLOSED_FORM_CONSTANT: f64 = 8.0;

/// Smallest `σ` (to about 1e-12 relative) whose accountant `ε` does not exceed `epsilon`.
pub fn accountant_sigma<T: Scalar>(
    epsilon: T,
    delta: T,
    steps: usize,
    sensitivity: &Sensitivity<T>,
    lambda_max: usize,
) -> Result<SigmaCalibration<T>> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon = {epsilon} must be > 0")));
    }
    let eps_at = |s: T| accountant_epsilon(s, steps, sensitivity, delta, lambda_max).map(|r| r.epsilon);
    let floor = -delta.ln() / T::from_count(lambda_max.max(1));
    let scale = sensitivity.value() * T::from_count(steps).sqrt();
    if eps_at(scale)?.is_nan() {
        return Err(Error::invalid("accountant produced NaN"));
    }
    if !(epsilon > floor) {
        return Err(Error::Range(format!(
            "epsilon = {epsilon} is at or below ln(1/delta)/lambda_max = {floor}; raise lambda_max"
        )));
    }
    let mut lo = scale;
    let mut hi = scale;
    let factor = T::lit(2.0);
    let mut guard = 0;
    while eps_at(hi)? > epsilon {
        hi *= factor;
        guard += 1;
        if guard > 200 {
            return Err(Error::Range(format!("no sigma reaches epsilon = {epsilon}")));
        }
    }
    guard = 0;
    while eps_at(lo)? <= epsilon {
        lo /= factor;
        guard += 1;
        if guard > 200 {
            return Err(Error::Range(format!("epsilon = {epsilon} reached by vanishing sigma")));
        }
    }
    let tol = T::lit(1e-12);
    while (hi.ln() - lo.ln()) > tol {
        let mid = (lo.ln() * T::lit(0.5) + hi.ln() * T::lit(0.5)).exp();
        if mid <= lo || mid >= hi {
            break;
        }
        if eps_at(mid)? <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let half = sensitivity.value() / T::lit(2.0);
    let closed = (T::lit(CLOSED_FORM_CONSTANT) * half * half * T::from_count(steps) * (-delta.ln())).sqrt() / epsilon;
    Ok(SigmaCalibration {
        sigma: hi,
        achieved: accountant_epsilon(hi, steps, sensitivity, delta, lambda_max)?,
        closed_form_sigma: closed,
    })
}

/// An `(ε, δ, σ, T)` tuple linked by the accountant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PrivacyBudget<T> {
    pub epsilon: T,
    pub delta: T,
    pub sigma: T,
    pub steps: usize,
    pub sensitivity: Sensitivity<T>,
    pub lambda: usize,
    pub lambda_max: usize,
}

impl<T: Scalar> PrivacyBudget<T> {
    pub fn from_sigma(sigma: T, delta: T, steps: usize, sensitivity: Sensitivity<T>, lambda_max: usize) -> Result<Self> {
        let r = accountant_epsilon(sigma, steps, &sensitivity, delta, lambda_max)?;
        Ok(Self {
            epsilon: r.epsilon,
            delta,
            sigma,
            steps,
            sensitivity,
            lambda: r.lambda,
            lambda_max,
        })
    }

    pub fn from_epsilon(epsilon: T, delta: T, steps: usize, sensitivity: Sensitivity<T>, lambda_max: usize) -> Result<Self> {
        let cal = accountant_sigma(epsilon, delta, steps, &sensitivity, lambda_max)?;
        Ok(Self {
            epsilon,
            delta,
            sigma: cal.sigma,
            steps,
            sensitivity,
            lambda: cal.achieved.lambda,
            lambda_max,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ExcessRiskInputs<T> {
    pub lambda_sc: T,
    pub lipschitz: T,
    pub dim: usize,
    pub sigma: T,
    pub horizon: usize,
}

/// `17 (L² + dσ²)(1 + ln T)/(λ T)`.
pub fn excess_risk_bound<T: Scalar>(inputs: &ExcessRiskInputs<T>) -> Result<T> {
    if !(inputs.lambda_sc > T::zero()) || !(inputs.lipschitz > T::zero()) || inputs.dim == 0 || inputs.horizon == 0 {
        return Err(Error::invalid("excess risk inputs must be positive"));
    }
    if !(inputs.sigma >= T::zero()) {
        return Err(Error::invalid("sigma must be >= 0"));
    }
    let t = T::from_count(inputs.horizon);
    let g2 = inputs.lipschitz * inputs.lipschitz + T::from_count(inputs.dim) * inputs.sigma * inputs.sigma;
    Ok(T::lit(17.0) * g2 * (T::one() + t.ln()) / (inputs.lambda_sc * t))
}
