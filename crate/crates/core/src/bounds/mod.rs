//! Closed-form convergence bounds for (robust, private) gradient descent on
//! separable logistic regression, plus privacy accounting and excess risk.

pub mod privacy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use privacy::{
    accountant_epsilon, accountant_sigma, CLOSED_FORM_CONSTANT, excess_risk_bound, AccountantResult, ExcessRiskInputs, PrivacyBudget,
    Sensitivity, SigmaCalibration,
};

/// Which printed expression to evaluate for the robust bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundForm {
    /// Derived chain, with leading coefficient `(2 - sη)/(2tη)`.
    #[default]
    Appendix,
    /// Summary-table expression, whose leading coefficient subtracts `c/(tγ)`.
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundSetting {
    Nominal,
    Private,
    Robust,
    RobustPrivate,
    RobustUnderStandard,
}

impl BoundSetting {
    pub const ALL: [BoundSetting; 5] = [
        BoundSetting::Nominal,
        BoundSetting::Private,
        BoundSetting::Robust,
        BoundSetting::RobustPrivate,
        BoundSetting::RobustUnderStandard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundSetting::Nominal => "nominal",
            BoundSetting::Private => "private",
            BoundSetting::Robust => "robust",
            BoundSetting::RobustPrivate => "robust-private",
            BoundSetting::RobustUnderStandard => "robust-under-standard",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown bound setting `{s}`")))
    }

    pub fn evaluate<T: Scalar>(self, inputs: &BoundInputs<T>) -> Result<T> {
        match self {
            BoundSetting::Nominal => bound_nominal(inputs),
            BoundSetting::Private => bound_private(inputs),
            BoundSetting::Robust => bound_robust(inputs),
            BoundSetting::RobustPrivate => bound_robust_private(inputs),
            BoundSetting::RobustUnderStandard => bound_robust_under_standard(inputs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BoundInputs<T> {
    /// Step index, `t ≥ 1`; the bound applies to the iterate `θ^{t+1}`.
    pub t: T,
    pub eta: T,
    pub gamma: T,
    #[serde(default)]
    pub c: T,
    #[serde(default = "one_dim")]
    pub d: usize,
    #[serde(default)]
    pub sigma: T,
    #[serde(default)]
    pub form: BoundForm,
}

fn one_dim() -> usize {
    1
}

impl<T: Scalar> BoundInputs<T> {
    pub fn new(t: T, eta: T, gamma: T) -> Self {
        Self {
            t,
            eta,
            gamma,
            c: T::zero(),
            d: 1,
            sigma: T::zero(),
            form: BoundForm::Appendix,
        }
    }

    pub fn at(&self, t: T) -> Self {
        Self { t, ..*self }
    }

    pub fn with_budget(mut self, c: T) -> Self {
        self.c = c;
        self
    }

    pub fn with_noise(mut self, d: usize, sigma: T) -> Self {
        self.d = d;
        self.sigma = sigma;
        self
    }

    pub fn with_form(mut self, form: BoundForm) -> Self {
        self.form = form;
        self
    }

    /// `s = (1+c)²/4 + 2c/(ηγ)`.
    pub fn smoothness(&self) -> T {
        let four = T::lit(4.0);
        (T::one() + self.c).powi(2) / four + T::lit(2.0) * self.c / (self.eta * self.gamma)
    }

    fn check_common(&self) -> Result<()> {
        if !(self.t >= T::one()) || !self.t.is_finite() {
            return Err(Error::invalid(format!("t = {} must be >= 1", self.t)));
        }
        if !(self.eta > T::zero()) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta = {} must be > 0", self.eta)));
        }
        if !(self.gamma > T::zero()) {
            return Err(Error::invalid(format!("gamma = {} must be > 0", self.gamma)));
        }
        if !(self.sigma >= T::zero()) {
            return Err(Error::invalid(format!("sigma = {} must be >= 0", self.sigma)));
        }
        if !(self.c >= T::zero()) {
            return Err(Error::invalid(format!("c = {} must be >= 0", self.c)));
        }
        Ok(())
    }

    fn check_nominal(&self) -> Result<()> {
        self.check_common()?;
        if !(self.eta < T::lit(4.0)) {
            return Err(Error::InvalidRegime(format!("eta < 4 violated (eta = {})", self.eta)));
        }
        Ok(())
    }

    fn check_robust(&self) -> Result<()> {
        self.check_common()?;
        let half = self.gamma / T::lit(2.0);
        if !(self.c < half) {
            return Err(Error::InvalidRegime(format!("c < gamma/2 violated ({} >= {half})", self.c)));
        }
        let se = self.smoothness() * self.eta;
        if !(se < T::one()) {
            return Err(Error::InvalidRegime(format!("s * eta < 1 violated (s * eta = {se})")));
        }
        Ok(())
    }
}

/// `A (init² + dσ² + (ln t/γ_eff)²) + B ln(1 + 1/t) + ηdσ²`.
fn kernel<T: Scalar>(a: T, b: T, init_sq: T, gamma_eff: T, inputs: &BoundInputs<T>) -> T {
    let t = inputs.t;
    let noise = T::from_count(inputs.d) * inputs.sigma * inputs.sigma;
    let lg = t.ln() / gamma_eff;
    a * (init_sq + noise + lg * lg) + b * (T::one() / t).ln_1p() + inputs.eta * noise
}

fn nominal_kernel<T: Scalar>(inputs: &BoundInputs<T>) -> T {
    robust_kernel(inputs, T::lit(0.25), T::zero())
}

fn robust_kernel<T: Scalar>(inputs: &BoundInputs<T>, s: T, c: T) -> T {
    let two = T::lit(2.0);
    let eta = inputs.eta;
    let t = inputs.t;
    let b = two - s * eta;
    let a = match inputs.form {
        BoundForm::Appendix => b / (two * t * eta),
        BoundForm::Table => {
            (T::lit(8.0) - eta * (T::one() + c).powi(2)) / (T::lit(8.0) * t * eta) - c / (t * inputs.gamma)
        }
    };
    let init_sq = (T::one() + c).powi(2);
    kernel(a, b, init_sq, inputs.gamma - c, inputs)
}

fn noiseless<T: Scalar>(inputs: &BoundInputs<T>) -> BoundInputs<T> {
    BoundInputs {
        sigma: T::zero(),
        ..*inputs
    }
}

/// Bound on the nominal loss of plain GD; ignores `c` and `σ`.
pub fn bound_nominal<T: Scalar>(inputs: &BoundInputs<T>) -> Result<T> {
    inputs.check_nominal()?;
    Ok(nominal_kernel(&noiseless(inputs)))
}

/// Bound on the nominal loss of noisy GD; ignores `c`.
pub fn bound_private<T: Scalar>(inputs: &BoundInputs<T>) -> Result<T> {
    inputs.check_nominal()?;
    Ok(nominal_kernel(inputs))
}

/// Bound on the adversarial loss of adversarial GD; ignores `σ`.
pub fn bound_robust<T: Scalar>(inputs: &BoundInputs<T>) -> Result<T> {
    inputs.check_robust()?;
    Ok(robust_kernel(&noiseless(inputs), inputs.smoothness(), inputs.c))
}

/// Bound on the adversarial loss of noisy adversarial GD.
pub fn bound_robust_private<T: Scalar>(inputs: &BoundInputs<T>) -> Result<T> {
    inputs.check_robust()?;
    Ok(robust_kernel(inputs, inputs.smoothness(), inputs.c))
}

/// Bound on the adversarial loss of plain GD: `bound_nominal + c (1 + η(t-1))`.
pub fn bound_robust_under_standard<T: Scalar>(inputs: &BoundInputs<T>) -> Result<T> {
    let base = bound_nominal(inputs)?;
    Ok(base + inputs.c * (T::one() + inputs.eta * (inputs.t - T::one())))
}

/// `(t, bound(t))` for integer `t` in `1..=t_max`.
pub fn bound_curve<T: Scalar>(setting: BoundSetting, inputs: &BoundInputs<T>, t_max: usize) -> Result<Vec<(T, T)>> {
    (1..=t_max)
        .map(|t| {
            let tt = T::from_count(t);
            setting.evaluate(&inputs.at(tt)).map(|v| (tt, v))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapSetting {
    Nonprivate,
    Private,
}

/// Robust bound minus the matching nominal bound at each `t`.
pub fn gap_curve<T: Scalar>(inputs: &BoundInputs<T>, setting: GapSetting, ts: &[T]) -> Result<Vec<(T, T)>> {
    ts.iter()
        .map(|&t| {
            let at = inputs.at(t);
            let gap = match setting {
                GapSetting::Nonprivate => bound_robust(&at)? - bound_nominal(&at)?,
                GapSetting::Private => bound_robust_private(&at)? - bound_private(&at)?,
            };
            Ok((t, gap))
        })
        .collect()
}

/// First integer `t*` such that `bound_robust(t) < bound_robust_under_standard(t)`
/// for every `t` in `t*..=t_max`; `None` if the last point is not below.
pub fn robust_crossover<T: Scalar>(inputs: &BoundInputs<T>, t_max: usize) -> Result<Option<usize>> {
    let mut crossover = None;
    for t in 1..=t_max {
        let at = inputs.at(T::from_count(t));
        if bound_robust(&at)? < bound_robust_under_standard(&at)? {
            crossover.get_or_insert(t);
        } else {
            crossover = None;
        }
    }
    Ok(crossover)
}

/// Table-form minus appendix-form value of a robust bound.
pub fn form_discrepancy<T: Scalar>(setting: BoundSetting, inputs: &BoundInputs<T>) -> Result<T> {
    let table = setting.evaluate(&inputs.with_form(BoundForm::Table))?;
    let appendix = setting.evaluate(&inputs.with_form(BoundForm::Appendix))?;
    Ok(table - appendix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> BoundInputs<f64> {
        BoundInputs::new(1.0, 0.1, 1.0).with_budget(0.1).with_noise(10, 0.25)
    }

    #[test]
    fn nominal_at_one() {
        let v = bound_nominal(&BoundInputs::new(1.0, 0.1, 1.0)).unwrap();
        let oracle = 7.9 / 0.8 + 7.9 / 4.0 * 2f64.ln();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 11.244).abs() < 1e-3);
    }

    #[test]
    fn private_at_one() {
        let v = bound_private(&fig1()).unwrap();
        let nominal = bound_nominal(&fig1()).unwrap();
        assert!((v - (nominal + 7.9 / 0.8 * 0.625 + 0.1 * 0.625)).abs() < 1e-12);
    }

    #[test]
    fn fig_one_smoothness() {
        assert!((fig1().smoothness() - 2.3025).abs() < 1e-12);
    }

    #[test]
    fn regime_errors_name_the_inequality() {
        let e = bound_robust(&fig1().with_budget(0.6)).unwrap_err();
        assert!(matches!(e, Error::InvalidRegime(ref m) if m.contains("c < gamma/2")));
        let e = bound_nominal(&BoundInputs::new(1.0, 4.0, 1.0)).unwrap_err();
        assert!(matches!(e, Error::InvalidRegime(ref m) if m.contains("eta < 4")));
        let e = bound_robust(&BoundInputs::new(1.0, 2.0, 1.0).with_budget(0.2)).unwrap_err();
        assert!(matches!(e, Error::InvalidRegime(ref m) if m.contains("s * eta")));
    }

    #[test]
    fn under_standard_first_step_adds_c() {
        let i = fig1();
        assert_eq!(bound_robust_under_standard(&i).unwrap(), bound_nominal(&i).unwrap() + 0.1);
    }

    #[test]
    fn robust_private_exceeds_others_at_100() {
        let i = fig1().at(100.0);
        let rp = bound_robust_private(&i).unwrap();
        for s in [BoundSetting::Nominal, BoundSetting::Private, BoundSetting::Robust] {
            assert!(rp > s.evaluate(&i).unwrap());
        }
    }

    #[test]
    fn forms_differ_only_for_positive_budget() {
        let i = fig1().at(10.0);
        assert!(form_discrepancy(BoundSetting::Robust, &i).unwrap() != 0.0);
        assert!(form_discrepancy(BoundSetting::Robust, &i.with_budget(0.0)).unwrap().abs() < 1e-12);
    }
}
