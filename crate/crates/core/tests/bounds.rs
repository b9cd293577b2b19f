//! Loss bounds against formulas transcribed term by term.

use proptest::prelude::*;
use rpopt_core::bounds::{
    bound_curve, bound_nominal, bound_private, bound_robust, bound_robust_private, bound_robust_under_standard,
    gap_curve, robust_crossover, BoundForm, BoundInputs, BoundSetting, GapSetting,
};
use rpopt_core::Error;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

fn log_ratio(t: f64) -> f64 {
    ((t + 1.0) / t).ln()
}

fn table_nominal(t: f64, eta: f64, gamma: f64) -> f64 {
    (8.0 - eta) / (8.0 * t * eta) * ((t.ln() / gamma).powi(2) + 1.0) + (8.0 - eta) / 4.0 * log_ratio(t)
}

fn table_private(t: f64, eta: f64, gamma: f64, d: f64, sigma: f64) -> f64 {
    let ds2 = d * sigma * sigma;
    (8.0 - eta) / (8.0 * t * eta) * ((t.ln() / gamma).powi(2) + 1.0 + ds2) + (8.0 - eta) / 4.0 * log_ratio(t) + eta * ds2
}

fn table_robust_private(t: f64, eta: f64, gamma: f64, c: f64, d: f64, sigma: f64) -> f64 {
    let ds2 = d * sigma * sigma;
    let q = (1.0 + c).powi(2);
    ((8.0 - eta * q) / (8.0 * t * eta) - c / (t * gamma)) * ((t.ln() / (gamma - c)).powi(2) + q + ds2)
        + ((8.0 - eta * q) / 4.0 - 2.0 * c / gamma) * log_ratio(t)
        + eta * ds2
}

fn appendix_robust_private(t: f64, eta: f64, gamma: f64, c: f64, d: f64, sigma: f64) -> f64 {
    let s = (1.0 + c).powi(2) / 4.0 + 2.0 * c / (eta * gamma);
    let ds2 = d * sigma * sigma;
    (2.0 - s * eta) / (2.0 * t * eta) * ((1.0 + c).powi(2) + ds2 + (t.ln() / (gamma - c)).powi(2))
        + (2.0 - s * eta) * (1.0 / t).ln_1p()
        + eta * ds2
}

fn robust_under_standard(t: f64, eta: f64, gamma: f64, c: f64) -> f64 {
    table_nominal(t, eta, gamma) + c * (1.0 + eta * (t - 1.0))
}

const GRID: [(f64, f64, f64, f64, usize, f64); 4] = [
    (1.0, 0.1, 1.0, 0.1, 10, 0.25),
    (7.0, 0.3, 0.8, 0.05, 3, 1.0),
    (1000.0, 0.05, 0.5, 0.2, 100, 0.1),
    (1e5, 0.2, 0.9, 0.0, 1, 0.0),
];

#[test]
fn nominal_and_private_match_written_forms() {
    for (t, eta, gamma, c, d, sigma) in GRID {
        for form in [BoundForm::Appendix, BoundForm::Table] {
            let bi = BoundInputs::new(t, eta, gamma).with_budget(c).with_noise(d, sigma).with_form(form);
            assert!(close(bound_nominal(&bi).unwrap(), table_nominal(t, eta, gamma)));
            assert!(close(bound_private(&bi).unwrap(), table_private(t, eta, gamma, d as f64, sigma)));
            assert!(close(bound_robust_under_standard(&bi).unwrap(), robust_under_standard(t, eta, gamma, c)));
        }
    }
}

#[test]
fn robust_forms_match_written_forms() {
    for (t, eta, gamma, c, d, sigma) in GRID {
        let bi = BoundInputs::new(t, eta, gamma).with_budget(c).with_noise(d, sigma);
        let a = bi.with_form(BoundForm::Appendix);
        let tb = bi.with_form(BoundForm::Table);
        let df = d as f64;
        assert!(close(bound_robust_private(&a).unwrap(), appendix_robust_private(t, eta, gamma, c, df, sigma)));
        assert!(close(bound_robust_private(&tb).unwrap(), table_robust_private(t, eta, gamma, c, df, sigma)));
        assert!(close(bound_robust(&a).unwrap(), appendix_robust_private(t, eta, gamma, c, 0.0, 0.0)));
        assert!(close(bound_robust(&tb).unwrap(), table_robust_private(t, eta, gamma, c, 0.0, 0.0)));
    }
}

#[test]
fn regime_violations_name_the_inequality() {
    let err = |r: Result<f64, Error>| match r {
        Err(Error::InvalidRegime(m)) => m,
        other => panic!("expected a regime error, got {other:?}"),
    };
    assert!(err(bound_nominal(&BoundInputs::new(10.0, 4.0, 1.0))).contains("eta < 4"));
    assert!(err(bound_robust(&BoundInputs::new(10.0, 0.1, 1.0).with_budget(0.5))).contains("c < gamma/2"));
    assert!(err(bound_robust(&BoundInputs::new(10.0, 2.0, 1.0).with_budget(0.2))).contains("s * eta < 1"));
}

#[test]
fn curve_and_setting_dispatch_agree() {
    let bi = BoundInputs::new(1.0, 0.1, 1.0).with_budget(0.1).with_noise(10, 0.25);
    for setting in BoundSetting::ALL {
        let curve = bound_curve(setting, &bi, 50).unwrap();
        assert_eq!(curve.len(), 50);
        for (t, v) in curve {
            assert_eq!(v, setting.evaluate(&bi.at(t)).unwrap());
        }
        assert_eq!(BoundSetting::parse(setting.name()).unwrap(), setting);
    }
}

#[test]
fn crossover_is_where_robust_bound_stays_below() {
    let bi = BoundInputs::new(1.0, 0.1, 1.0).with_budget(0.1);
    let tc = robust_crossover(&bi, 10_000).unwrap().expect("crossover exists");
    for t in tc..=10_000 {
        let at = bi.at(t as f64);
        assert!(bound_robust(&at).unwrap() < bound_robust_under_standard(&at).unwrap());
    }
    let before = bi.at((tc - 1) as f64);
    assert!(bound_robust(&before).unwrap() >= bound_robust_under_standard(&before).unwrap());
}

#[test]
fn nonprivate_gap_is_robust_minus_nominal() {
    let bi = BoundInputs::new(1.0, 0.1, 1.0).with_budget(0.1);
    let ts = [1.0, 10.0, 1e3];
    for (t, g) in gap_curve(&bi, GapSetting::Nonprivate, &ts).unwrap() {
        let at = bi.at(t);
        assert!(close(g, bound_robust(&at).unwrap() - bound_nominal(&at).unwrap()));
    }
}

proptest! {
    #[test]
    fn noise_only_adds(t in 1.0f64..1e4, eta in 0.01f64..0.4, gamma in 0.2f64..1.0, cf in 0.0f64..0.4, d in 1usize..100, sigma in 0.0f64..2.0) {
        let c = cf * gamma;
        let bi = BoundInputs::new(t, eta, gamma).with_budget(c);
        if let (Ok(r), Ok(rp)) = (bound_robust(&bi), bound_robust_private(&bi.with_noise(d, sigma))) {
            prop_assert!(rp >= r - 1e-12 * r.abs());
        }
        let n = bound_nominal(&bi).unwrap();
        let p = bound_private(&bi.with_noise(d, sigma)).unwrap();
        prop_assert!(p >= n - 1e-12 * n.abs());
    }

    #[test]
    fn bounds_shrink_eventually(eta in 0.01f64..0.4, gamma in 0.2f64..1.0) {
        let bi = BoundInputs::new(1.0, eta, gamma);
        let early = bound_nominal(&bi.at(1e3)).unwrap();
        let late = bound_nominal(&bi.at(1e7)).unwrap();
        prop_assert!(late < early);
    }
}
