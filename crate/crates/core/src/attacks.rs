//! PGD attacks, robust accuracy, and the worst-case perturbations used for
//! adversarial training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, norm_inf};
use crate::losses::{cross_entropy, gram_matrix, LossSpec, ModelParams, PerturbationNorm};
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AttackConfig<T> {
    pub budget: T,
    #[serde(default)]
    pub norm: PerturbationNorm,
    pub steps: usize,
    /// Defaults to `2.5 c / steps`.
    #[serde(default)]
    pub step_size: Option<T>,
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl<T: Scalar> AttackConfig<T> {
    pub fn new(budget: T, norm: PerturbationNorm, steps: usize) -> Self {
        Self {
            budget,
            norm,
            steps,
            step_size: None,
            restarts: 1,
            seed: 0,
        }
    }

    pub fn with_restarts(mut self, restarts: usize, seed: u64) -> Self {
        self.restarts = restarts;
        self.seed = seed;
        self
    }

    pub fn with_budget(&self, budget: T) -> Self {
        Self {
            budget,
            ..self.clone()
        }
    }

    pub fn effective_step_size(&self) -> T {
        match self.step_size {
            Some(a) => a,
            None if self.steps == 0 => T::zero(),
            None => T::lit(2.5) * self.budget / T::from_count(self.steps),
        }
    }

    /// Errors for invalid fields; warnings for a search radius shorter than `c`.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.budget >= T::zero()) || !self.budget.is_finite() {
            return Err(Error::invalid(format!("attack budget {} must be >= 0", self.budget)));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        if let Some(a) = self.step_size {
            if !(a > T::zero()) {
                return Err(Error::invalid(format!("step size {a} must be > 0")));
            }
        }
        let mut warnings = Vec::new();
        if self.steps > 0 && self.effective_step_size() * T::from_count(self.steps) < self.budget {
            warnings.push(format!(
                "step_size * steps = {} is below the budget {}",
                self.effective_step_size() * T::from_count(self.steps),
                self.budget
            ));
        }
        Ok(warnings)
    }
}

/// Result of attacking one example.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome<T> {
    /// Highest-loss perturbation found.
    pub delta: Vec<T>,
    pub loss: T,
    /// Whether some visited perturbation was misclassified.
    pub broken: bool,
}

/// Nominal loss at `x`, its input gradient, and whether `x` is classified correctly.
fn probe<T: Scalar>(params: &ModelParams<T>, x: &[T], label: Label) -> (T, Vec<T>, bool) {
    match label {
        Label::Binary(_) => {
            let y: T = label.sign();
            let theta = params.weights();
            let m = y * dot(theta, x);
            let w = -y * sigmoid(-m);
            let g = theta.iter().map(|t| w * *t).collect();
            (softplus(-m), g, params.predict(x) == label)
        }
        Label::Class(class) => {
            let d = params.dim();
            let z = params.logits(x);
            let (loss, q) = cross_entropy(&z, class);
            let mut g = vec![T::zero(); d];
            for (qk, wk) in q.iter().zip(params.weights().chunks_exact(d)) {
                for (gi, wi) in g.iter_mut().zip(wk) {
                    *gi += *qk * *wi;
                }
            }
            (loss, g, params.predict(x) == label)
        }
    }
}

fn project<T: Scalar>(delta: &mut [T], x: &[T], c: T, norm: PerturbationNorm, domain: Option<(T, T)>) {
    match norm {
        PerturbationNorm::L2 => {
            let n = norm2(delta);
            if n > c {
                let mut s = c / n;
                loop {
                    let scaled: Vec<T> = delta.iter().map(|v| *v * s).collect();
                    if norm2(&scaled) <= c {
                        delta.copy_from_slice(&scaled);
                        break;
                    }
                    s *= T::one() - T::epsilon();
                }
            }
        }
        PerturbationNorm::Linf => {
            for v in delta.iter_mut() {
                *v = v.max(-c).min(c);
            }
        }
    }
    if let Some((lo, hi)) = domain {
        for (v, xi) in delta.iter_mut().zip(x) {
            *v = (*xi + *v).max(lo).min(hi) - *xi;
        }
    }
}

fn random_start<T: Scalar>(rng: &mut ChaCha8Rng, d: usize, c: T, norm: PerturbationNorm) -> Vec<T> {
    match norm {
        PerturbationNorm::L2 => {
            let mut v: Vec<T> = (0..d).map(|_| T::standard_normal(rng)).collect();
            let n = norm2(&v);
            let r = c * T::unit_uniform(rng).powf(T::one() / T::from_count(d));
            for e in v.iter_mut() {
                *e = if n > T::zero() { *e * r / n } else { T::zero() };
            }
            v
        }
        PerturbationNorm::Linf => (0..d)
            .map(|_| c * (T::lit(2.0) * T::unit_uniform(rng) - T::one()))
            .collect(),
    }
}

/// PGD from a given start (zero when `start` is `None`) plus random restarts.
///
/// `stream` selects the restart RNG stream so per-example attacks are
/// reproducible regardless of scheduling.
pub fn pgd_from<T: Scalar>(
    params: &ModelParams<T>,
    x: &[T],
    label: Label,
    attack: &AttackConfig<T>,
    domain: Option<(T, T)>,
    start: Option<&[T]>,
    stream: u64,
) -> AttackOutcome<T> {
    let d = x.len();
    let c = attack.budget;
    let (loss0, _, correct0) = probe(params, x, label);
    let mut best = AttackOutcome {
        delta: vec![T::zero(); d],
        loss: loss0,
        broken: !correct0,
    };
    if attack.steps == 0 || c == T::zero() {
        return best;
    }
    let alpha = attack.effective_step_size();
    let mut rng = ChaCha8Rng::seed_from_u64(attack.seed);
    rng.set_stream(stream);
    let mut xa = vec![T::zero(); d];
    for restart in 0..attack.restarts {
        let mut delta = if restart == 0 {
            start.map_or_else(|| vec![T::zero(); d], <[T]>::to_vec)
        } else {
            random_start(&mut rng, d, c, attack.norm)
        };
        project(&mut delta, x, c, attack.norm, domain);
        for step in 0..=attack.steps {
            for ((a, xi), di) in xa.iter_mut().zip(x).zip(&delta) {
                *a = *xi + *di;
            }
            let (loss, g, correct) = probe(params, &xa, label);
            best.broken |= !correct;
            if loss > best.loss {
                best.loss = loss;
                best.delta.copy_from_slice(&delta);
            }
            if step == attack.steps {
                break;
            }
            match attack.norm {
                PerturbationNorm::L2 => {
                    let gn = norm2(&g);
                    if gn == T::zero() {
                        break;
                    }
                    for (di, gi) in delta.iter_mut().zip(&g) {
                        *di += alpha * *gi / gn;
                    }
                }
                PerturbationNorm::Linf => {
                    if norm_inf(&g) == T::zero() {
                        break;
                    }
                    for (di, gi) in delta.iter_mut().zip(&g) {
                        *di += alpha * gi.signum() * T::from_count(usize::from(*gi != T::zero()));
                    }
                }
            }
            project(&mut delta, x, c, attack.norm, domain);
        }
    }
    best
}

/// Highest-loss perturbation of `x` found by PGD started at zero.
pub fn pgd<T: Scalar>(
    params: &ModelParams<T>,
    x: &[T],
    label: Label,
    attack: &AttackConfig<T>,
    domain: Option<(T, T)>,
) -> Vec<T> {
    pgd_from(params, x, label, attack, domain, None, 0).delta
}

/// `-c y θ/‖θ‖₂` or `-c y sign(θ)`: the exact maximiser for a binary linear model.
pub fn closed_form_perturbation<T: Scalar>(theta: &[T], y: T, c: T, norm: PerturbationNorm) -> Vec<T> {
    match norm {
        PerturbationNorm::L2 => {
            let n = norm2(theta);
            theta
                .iter()
                .map(|t| if n > T::zero() { -c * y * *t / n } else { T::zero() })
                .collect()
        }
        PerturbationNorm::Linf => theta
            .iter()
            .map(|t| if *t == T::zero() { T::zero() } else { -c * y * t.signum() })
            .collect(),
    }
}

fn check<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>, attack: &AttackConfig<T>) -> Result<()> {
    attack.validate()?;
    if !params.matches(data) {
        return Err(Error::Consistency("model arity does not match dataset".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub fn clean_accuracy<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<T> {
    if !params.matches(data) {
        return Err(Error::Consistency("model arity does not match dataset".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let correct = (0..data.len())
        .into_par_iter()
        .filter(|&i| params.predict(data.row(i)) == data.label(i))
        .count();
    Ok(T::from_count(correct) / T::from_count(data.len()))
}

/// Fraction of points PGD fails to misclassify.
pub fn robust_accuracy<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>, attack: &AttackConfig<T>) -> Result<T> {
    check(params, data, attack)?;
    let domain = data.domain();
    let intact = (0..data.len())
        .into_par_iter()
        .filter(|&i| !pgd_from(params, data.row(i), data.label(i), attack, domain, None, i as u64).broken)
        .count();
    Ok(T::from_count(intact) / T::from_count(data.len()))
}

/// Robust accuracy at each budget in nondecreasing order, each attack
/// warm-started from the previous one; broken points stay broken.
pub fn robust_accuracy_curve<T: Scalar>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    budgets: &[T],
    attack: &AttackConfig<T>,
) -> Result<Vec<(T, T)>> {
    check(params, data, attack)?;
    if budgets.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("budgets must be sorted in nondecreasing order"));
    }
    let domain = data.domain();
    let per_point: Vec<Vec<bool>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let mut warm: Option<Vec<T>> = None;
            let mut broken = false;
            budgets
                .iter()
                .map(|&c| {
                    let cfg = attack.with_budget(c);
                    let out = pgd_from(params, x, data.label(i), &cfg, domain, warm.as_deref(), i as u64);
                    broken |= out.broken;
                    warm = Some(out.delta);
                    broken
                })
                .collect()
        })
        .collect();
    let n = T::from_count(data.len());
    Ok(budgets
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let intact = per_point.iter().filter(|b| !b[j]).count();
            (c, T::from_count(intact) / n)
        })
        .collect())
}

/// Robust accuracy of `robust` minus that of `nominal` at each budget.
pub fn improvement_curve<T: Scalar>(
    nominal: &ModelParams<T>,
    robust: &ModelParams<T>,
    data: &Dataset<T>,
    budgets: &[T],
    attack: &AttackConfig<T>,
) -> Result<Vec<(T, T)>> {
    if nominal.dim() != robust.dim() || nominal.classes() != robust.classes() {
        return Err(Error::Consistency("models do not share arity".into()));
    }
    let a = robust_accuracy_curve(nominal, data, budgets, attack)?;
    let b = robust_accuracy_curve(robust, data, budgets, attack)?;
    Ok(a.iter().zip(&b).map(|((c, an), (_, ar))| (*c, *ar - *an)).collect())
}

/// Worst-case perturbation of a multi-class example and the attacked logits.
#[derive(Debug, Clone)]
pub struct WorstCase<T> {
    pub delta: Vec<T>,
    pub logits: Vec<T>,
}

/// Inner maximiser for multi-class adversarial training.
///
/// Repeats `δ ← argmax_{‖δ‖ ≤ c} ∇ᵀδ` at the current point. Cross-entropy is
/// convex in `δ`, so every step raises the loss. The ℓ2 iteration runs in
/// logit space using `G = W Wᵀ`; pass `gram` to reuse it across examples.
pub fn multiclass_worst_case<T: Scalar>(
    w: &[T],
    classes: usize,
    d: usize,
    gram: Option<&[T]>,
    x: &[T],
    class: usize,
    spec: &LossSpec<T>,
) -> WorstCase<T> {
    let c = spec.budget;
    let z: Vec<T> = w.chunks_exact(d).map(|wk| dot(wk, x)).collect();
    if c == T::zero() {
        return WorstCase {
            delta: vec![T::zero(); d],
            logits: z,
        };
    }
    let tol = |scale: T| T::epsilon() * T::lit(64.0) * (T::one() + scale);
    match spec.norm {
        PerturbationNorm::L2 => {
            let owned;
            let g = match gram {
                Some(g) => g,
                None => {
                    owned = gram_matrix(w, classes, d);
                    &owned
                }
            };
            let mut s = vec![T::zero(); classes];
            let mut a = vec![T::zero(); classes];
            let mut zs = z.clone();
            for _ in 0..500 {
                let (_, q) = cross_entropy(&zs, class);
                let gq: Vec<T> = g.chunks_exact(classes).map(|row| dot(row, &q)).collect();
                let qgq = dot(&q, &gq);
                if !(qgq > T::zero()) {
                    a.iter_mut().for_each(|v| *v = T::zero());
                    s.iter_mut().for_each(|v| *v = T::zero());
                    break;
                }
                let k = c / qgq.sqrt();
                let mut diff = T::zero();
                for j in 0..classes {
                    let sj = k * gq[j];
                    diff = diff.max((sj - s[j]).abs());
                    s[j] = sj;
                    a[j] = k * q[j];
                }
                for j in 0..classes {
                    zs[j] = z[j] + s[j];
                }
                if diff <= tol(norm_inf(&s)) {
                    break;
                }
            }
            let mut delta = vec![T::zero(); d];
            for (aj, wj) in a.iter().zip(w.chunks_exact(d)) {
                for (di, wi) in delta.iter_mut().zip(wj) {
                    *di += *aj * *wi;
                }
            }
            WorstCase { delta, logits: zs }
        }
        PerturbationNorm::Linf => {
            let mut delta = vec![T::zero(); d];
            let mut zs = z.clone();
            for _ in 0..200 {
                let (_, q) = cross_entropy(&zs, class);
                let mut next = vec![T::zero(); d];
                for (qk, wk) in q.iter().zip(w.chunks_exact(d)) {
                    for (ni, wi) in next.iter_mut().zip(wk) {
                        *ni += *qk * *wi;
                    }
                }
                for v in next.iter_mut() {
                    *v = if *v > T::zero() {
                        c
                    } else if *v < T::zero() {
                        -c
                    } else {
                        T::zero()
                    };
                }
                if next == delta {
                    break;
                }
                delta = next;
                for (j, wk) in w.chunks_exact(d).enumerate() {
                    zs[j] = z[j] + dot(wk, &delta);
                }
            }
            WorstCase { delta, logits: zs }
        }
    }
}
