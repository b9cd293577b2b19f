//! Logistic and adversarial logistic losses, gradients and Hessian-vector products.
//!
//! Binary models use the closed-form worst case
//! `log(1 + exp(-y xᵀθ + c‖θ‖_q))` with `q` dual to the perturbation norm.
//! Multi-class models use softmax cross-entropy; their adversarial loss is
//! the loss at the perturbation found by
//! [`multiclass_worst_case`](crate::attacks::multiclass_worst_case).

use serde::{Deserialize, Serialize};

use crate::attacks::multiclass_worst_case;
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm1, norm2, CompensatedSum};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Norm bounding the adversarial perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationNorm {
    #[default]
    L2,
    Linf,
}

impl PerturbationNorm {
    /// `‖θ‖_q` for the dual exponent `q`.
    pub fn dual_norm<T: Scalar>(self, theta: &[T]) -> T {
        match self {
            PerturbationNorm::L2 => norm2(theta),
            PerturbationNorm::Linf => norm1(theta),
        }
    }

    /// A subgradient of the dual norm; the zero vector at `θ = 0`.
    pub fn dual_subgradient<T: Scalar>(self, theta: &[T], out: &mut [T]) {
        match self {
            PerturbationNorm::L2 => {
                let n = norm2(theta);
                for (o, t) in out.iter_mut().zip(theta) {
                    *o = if n > T::zero() { *t / n } else { T::zero() };
                }
            }
            PerturbationNorm::Linf => {
                for (o, t) in out.iter_mut().zip(theta) {
                    *o = if *t > T::zero() {
                        T::one()
                    } else if *t < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2" | "l2" => Ok(PerturbationNorm::L2),
            "inf" | "linf" | "l-inf" => Ok(PerturbationNorm::Linf),
            other => Err(Error::invalid(format!("unknown norm `{other}` (use l2 or linf)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Nominal,
    Adversarial,
}

/// Adversarial budget `c` and perturbation norm; `c = 0` is the nominal loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LossSpec<T> {
    pub budget: T,
    #[serde(default)]
    pub norm: PerturbationNorm,
}

impl<T: Scalar> Default for LossSpec<T> {
    fn default() -> Self {
        Self::nominal()
    }
}

impl<T: Scalar> LossSpec<T> {
    pub fn nominal() -> Self {
        Self {
            budget: T::zero(),
            norm: PerturbationNorm::L2,
        }
    }

    pub fn adversarial(budget: T, norm: PerturbationNorm) -> Result<Self> {
        if !(budget >= T::zero()) || !budget.is_finite() {
            return Err(Error::invalid(format!("budget {budget} must be finite and >= 0")));
        }
        Ok(Self { budget, norm })
    }

    pub fn kind(&self) -> LossKind {
        if self.budget > T::zero() {
            LossKind::Adversarial
        } else {
            LossKind::Nominal
        }
    }

    pub fn is_adversarial(&self) -> bool {
        self.kind() == LossKind::Adversarial
    }
}

/// Weight vector (binary) or row-major `classes × dim` matrix (multi-class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelParams<T> {
    dim: usize,
    /// 1 for a binary model.
    outputs: usize,
    weights: Vec<T>,
    #[serde(skip)]
    norm_cache: Option<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn binary(weights: Vec<T>) -> Self {
        Self {
            dim: weights.len(),
            outputs: 1,
            weights,
            norm_cache: None,
        }
    }

    pub fn multiclass(classes: usize, dim: usize, weights: Vec<T>) -> Result<Self> {
        if classes < 2 || weights.len() != classes * dim {
            return Err(Error::Consistency(format!(
                "{} weights for a {classes}x{dim} model",
                weights.len()
            )));
        }
        Ok(Self {
            dim,
            outputs: classes,
            weights,
            norm_cache: None,
        })
    }

    /// Zero parameters with the arity matching `data`.
    pub fn zeros_for(data: &Dataset<T>) -> Self {
        if data.is_binary() {
            Self::binary(vec![T::zero(); data.dim()])
        } else {
            Self {
                dim: data.dim(),
                outputs: data.classes(),
                weights: vec![T::zero(); data.classes() * data.dim()],
                norm_cache: None,
            }
        }
    }

    pub fn is_binary(&self) -> bool {
        self.outputs == 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of classes; 2 for a binary model.
    pub fn classes(&self) -> usize {
        if self.outputs == 1 {
            2
        } else {
            self.outputs
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        self.norm_cache = None;
        &mut self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Stores `‖θ‖` so later [`norm`](Self::norm) calls are free.
    pub fn with_norm_cache(mut self) -> Self {
        self.norm_cache = Some(norm2(&self.weights));
        self
    }

    /// Euclidean (Frobenius for matrices) norm.
    pub fn norm(&self) -> T {
        self.norm_cache.unwrap_or_else(|| norm2(&self.weights))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
    }

    pub fn matches(&self, data: &Dataset<T>) -> bool {
        self.dim == data.dim() && self.is_binary() == data.is_binary() && (self.is_binary() || self.outputs == data.classes())
    }

    pub(crate) fn with_weights(&self, weights: Vec<T>) -> Self {
        Self {
            dim: self.dim,
            outputs: self.outputs,
            weights,
            norm_cache: None,
        }
    }

    /// Writes the model as TOML (`dim`, `outputs`, `weights`).
    pub fn save_toml(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_toml(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: Self = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if p.dim == 0 || p.outputs == 0 || p.weights.len() != p.dim * p.outputs || p.outputs == 2 {
            return Err(Error::Consistency("model shape does not match its weights".into()));
        }
        if !p.is_finite() {
            return Err(Error::Format("model has non-finite weights".into()));
        }
        Ok(p)
    }

    /// Class scores; a single margin score `θᵀx` for binary models.
    pub fn logits(&self, x: &[T]) -> Vec<T> {
        self.weights.chunks_exact(self.dim).map(|w| dot(w, x)).collect()
    }

    /// Predicted label.
    pub fn predict(&self, x: &[T]) -> Label {
        if self.is_binary() {
            Label::Binary(if dot(&self.weights, x) > T::zero() { 1 } else { -1 })
        } else {
            let z = self.logits(x);
            let mut best = 0;
            for (k, v) in z.iter().enumerate() {
                if *v > z[best] {
                    best = k;
                }
            }
            Label::Class(best)
        }
    }
}

/// `log(1 + exp(-y xᵀθ))`.
pub fn logistic_loss<T: Scalar>(theta: &[T], x: &[T], y: T) -> T {
    softplus(-y * dot(x, theta))
}

/// `log(1 + exp(-y xᵀθ + c‖θ‖_q))`, the loss at the worst perturbation of norm `c`.
pub fn adversarial_logistic_loss<T: Scalar>(theta: &[T], x: &[T], y: T, spec: &LossSpec<T>) -> T {
    softplus(-y * dot(x, theta) + spec.budget * spec.norm.dual_norm(theta))
}

/// Softmax cross-entropy `-log softmax(Wx)[class]` and its gradient with respect to `W`.
pub fn multiclass_loss<T: Scalar>(weights: &[T], classes: usize, x: &[T], class: usize) -> (T, Vec<T>) {
    let d = x.len();
    let z: Vec<T> = weights.chunks_exact(d).map(|w| dot(w, x)).collect();
    debug_assert_eq!(z.len(), classes);
    let (loss, q) = cross_entropy(&z, class);
    let mut grad = vec![T::zero(); classes * d];
    for (k, gk) in grad.chunks_exact_mut(d).enumerate() {
        for (g, xi) in gk.iter_mut().zip(x) {
            *g = q[k] * *xi;
        }
    }
    (loss, grad)
}

/// Cross-entropy of logits `z` at `class` and `softmax(z) - e_class`.
pub(crate) fn cross_entropy<T: Scalar>(z: &[T], class: usize) -> (T, Vec<T>) {
    let zmax = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut q: Vec<T> = z.iter().map(|v| (*v - zmax).exp()).collect();
    let s: T = q.iter().copied().sum();
    let lse = zmax + s.ln();
    for v in q.iter_mut() {
        *v /= s;
    }
    q[class] -= T::one();
    (lse - z[class], q)
}

/// Examples a loss or gradient is averaged over.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    data: &'a Dataset<T>,
    indices: Option<&'a [usize]>,
}

impl<'a, T: Scalar> Batch<'a, T> {
    pub fn full(data: &'a Dataset<T>) -> Self {
        Self { data, indices: None }
    }

    pub fn subset(data: &'a Dataset<T>, indices: &'a [usize]) -> Self {
        Self {
            data,
            indices: Some(indices),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.map_or(self.data.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &'a Dataset<T> {
        self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [T], Label)> + '_ {
        let data = self.data;
        let n = self.len();
        (0..n).map(move |j| {
            let i = self.indices.map_or(j, |ix| ix[j]);
            (data.row(i), data.label(i))
        })
    }
}

/// Quantities shared by every example when evaluating at a fixed `θ`.
pub(crate) struct EvalContext<T> {
    dual_norm: T,
    dual_grad: Vec<T>,
    /// `W Wᵀ` for multi-class ℓ2 attacks.
    gram: Option<Vec<T>>,
}

impl<T: Scalar> EvalContext<T> {
    pub(crate) fn new(params: &ModelParams<T>, spec: &LossSpec<T>) -> Self {
        if params.is_binary() {
            let mut dual_grad = vec![T::zero(); params.dim()];
            spec.norm.dual_subgradient(params.weights(), &mut dual_grad);
            Self {
                dual_norm: spec.norm.dual_norm(params.weights()),
                dual_grad,
                gram: None,
            }
        } else {
            let gram = (spec.is_adversarial() && spec.norm == PerturbationNorm::L2)
                .then(|| gram_matrix(params.weights(), params.classes(), params.dim()));
            Self {
                dual_norm: T::zero(),
                dual_grad: Vec::new(),
                gram,
            }
        }
    }

    pub(crate) fn gram(&self) -> Option<&[T]> {
        self.gram.as_deref()
    }
}

pub(crate) fn gram_matrix<T: Scalar>(w: &[T], classes: usize, d: usize) -> Vec<T> {
    let mut g = vec![T::zero(); classes * classes];
    for a in 0..classes {
        for b in a..classes {
            let v = dot(&w[a * d..(a + 1) * d], &w[b * d..(b + 1) * d]);
            g[a * classes + b] = v;
            g[b * classes + a] = v;
        }
    }
    g
}

/// Loss of one example; accumulates `scale * gradient` into `grad` when given.
pub(crate) fn example_loss_grad<T: Scalar>(
    params: &ModelParams<T>,
    ctx: &EvalContext<T>,
    x: &[T],
    label: Label,
    spec: &LossSpec<T>,
    grad: Option<(&mut [T], T)>,
) -> T {
    match label {
        Label::Binary(_) => {
            let y: T = label.sign();
            let theta = params.weights();
            let m = -y * dot(x, theta) + spec.budget * ctx.dual_norm;
            if let Some((g, s)) = grad {
                // ∇ = σ(m)·r,  r = -y x + c ∂‖θ‖_q  (r's dual part is 0 at θ = 0)
                let w = s * sigmoid(m);
                let cb = spec.budget;
                for ((gi, xi), di) in g.iter_mut().zip(x).zip(&ctx.dual_grad) {
                    *gi += w * (-y * *xi + cb * *di);
                }
            }
            softplus(m)
        }
        Label::Class(class) => {
            let classes = params.classes();
            let d = params.dim();
            let w = params.weights();
            if spec.is_adversarial() {
                let adv = multiclass_worst_case(w, classes, d, ctx.gram(), x, class, spec);
                let (loss, q) = cross_entropy(&adv.logits, class);
                if let Some((g, s)) = grad {
                    for (k, gk) in g.chunks_exact_mut(d).enumerate() {
                        let a = s * q[k];
                        for ((gi, xi), di) in gk.iter_mut().zip(x).zip(&adv.delta) {
                            *gi += a * (*xi + *di);
                        }
                    }
                }
                loss
            } else {
                let z = params.logits(x);
                let (loss, q) = cross_entropy(&z, class);
                if let Some((g, s)) = grad {
                    for (k, gk) in g.chunks_exact_mut(d).enumerate() {
                        let a = s * q[k];
                        if a != T::zero() {
                            for (gi, xi) in gk.iter_mut().zip(x) {
                                *gi += a * *xi;
                            }
                        }
                    }
                }
                loss
            }
        }
    }
}

fn check_arity<T: Scalar>(params: &ModelParams<T>, batch: &Batch<'_, T>) -> Result<()> {
    if !params.matches(batch.data()) {
        return Err(Error::Consistency("model arity does not match dataset".into()));
    }
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Mean loss over the batch.
pub fn batch_loss<T: Scalar>(params: &ModelParams<T>, batch: Batch<'_, T>, spec: &LossSpec<T>) -> Result<T> {
    check_arity(params, &batch)?;
    let ctx = EvalContext::new(params, spec);
    let total = crate::linalg::compensated_sum(
        batch
            .iter()
            .map(|(x, y)| example_loss_grad(params, &ctx, x, y, spec, None)),
    );
    Ok(total / T::from_count(batch.len()))
}

/// Mean loss and mean gradient over the batch.
///
/// At `θ = 0` with `c > 0` the subgradient uses `r = -y x`, i.e. each example
/// contributes `-y x / 2`.
pub fn loss_and_gradient<T: Scalar>(
    params: &ModelParams<T>,
    batch: Batch<'_, T>,
    spec: &LossSpec<T>,
) -> Result<(T, Vec<T>)> {
    check_arity(params, &batch)?;
    let ctx = EvalContext::new(params, spec);
    let n = T::from_count(batch.len());
    let mut acc = CompensatedSum::new(params.len());
    let mut tmp = vec![T::zero(); params.len()];
    let mut losses = Vec::with_capacity(batch.len());
    for (x, y) in batch.iter() {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        losses.push(example_loss_grad(params, &ctx, x, y, spec, Some((&mut tmp, T::one()))));
        acc.add(&tmp);
    }
    let mut g = acc.finish();
    g.iter_mut().for_each(|v| *v /= n);
    Ok((crate::linalg::compensated_sum(losses) / n, g))
}

pub fn gradient<T: Scalar>(params: &ModelParams<T>, batch: Batch<'_, T>, spec: &LossSpec<T>) -> Result<Vec<T>> {
    loss_and_gradient(params, batch, spec).map(|(_, g)| g)
}

/// Per-example gradients, one vector per batch member.
pub fn per_example_gradients<T: Scalar>(
    params: &ModelParams<T>,
    batch: Batch<'_, T>,
    spec: &LossSpec<T>,
) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    check_arity(params, &batch)?;
    let ctx = EvalContext::new(params, spec);
    let mut losses = Vec::with_capacity(batch.len());
    let grads = batch
        .iter()
        .map(|(x, y)| {
            let mut g = vec![T::zero(); params.len()];
            losses.push(example_loss_grad(params, &ctx, x, y, spec, Some((&mut g, T::one()))));
            g
        })
        .collect();
    Ok((losses, grads))
}

/// Hessian-vector product `∇²L(θ)·v` of the mean batch loss.
///
/// Binary models use the analytic Hessian `σ(1-σ) r rᵀ + σ r'` with
/// `r' = c (I/‖θ‖ - θθᵀ/‖θ‖³)` for ℓ2 budgets (the ℓ1 dual norm has zero
/// curvature away from the coordinate hyperplanes). Multi-class models use a
/// central difference of the gradient along `v`.
pub fn hessian_vector_product<T: Scalar>(
    params: &ModelParams<T>,
    batch: Batch<'_, T>,
    spec: &LossSpec<T>,
    v: &[T],
) -> Result<Vec<T>> {
    check_arity(params, &batch)?;
    if v.len() != params.len() {
        return Err(Error::Consistency("direction length does not match parameters".into()));
    }
    let theta_norm = params.norm();
    if spec.is_adversarial() && theta_norm == T::zero() {
        return Err(Error::Singularity(
            "adversarial Hessian is undefined at theta = 0".into(),
        ));
    }
    if params.is_binary() {
        Ok(binary_hvp(params, batch, spec, v))
    } else {
        let vnorm = norm2(v);
        if vnorm == T::zero() {
            return Ok(vec![T::zero(); v.len()]);
        }
        let eps = T::lit(1e-5) * theta_norm.max(T::one()) / vnorm.max(T::one());
        let shifted = |sign: T| {
            let w: Vec<T> = params
                .weights()
                .iter()
                .zip(v)
                .map(|(t, vi)| *t + sign * eps * *vi)
                .collect();
            gradient(&params.with_weights(w), batch, spec)
        };
        let gp = shifted(T::one())?;
        let gm = shifted(-T::one())?;
        let two_eps = eps + eps;
        Ok(gp.iter().zip(&gm).map(|(a, b)| (*a - *b) / two_eps).collect())
    }
}

fn binary_hvp<T: Scalar>(params: &ModelParams<T>, batch: Batch<'_, T>, spec: &LossSpec<T>, v: &[T]) -> Vec<T> {
    let theta = params.weights();
    let ctx = EvalContext::new(params, spec);
    let c = spec.budget;
    let tn = norm2(theta);
    let curved = spec.is_adversarial() && spec.norm == PerturbationNorm::L2;
    let (tv, inv_tn) = if curved {
        (dot(theta, v), T::one() / tn)
    } else {
        (T::zero(), T::zero())
    };
    let mut acc = CompensatedSum::new(v.len());
    let mut r = vec![T::zero(); v.len()];
    let mut term = vec![T::zero(); v.len()];
    for (x, label) in batch.iter() {
        let y: T = label.sign();
        let m = -y * dot(x, theta) + c * ctx.dual_norm;
        let s = sigmoid(m);
        for ((ri, xi), di) in r.iter_mut().zip(x).zip(&ctx.dual_grad) {
            *ri = -y * *xi + c * *di;
        }
        let a = s * (T::one() - s) * dot(&r, v);
        for (t, ri) in term.iter_mut().zip(&r) {
            *t = a * *ri;
        }
        if curved {
            // σ · c (v/‖θ‖ - θ (θ·v)/‖θ‖³)
            let k = s * c * inv_tn;
            let k2 = k * tv * inv_tn * inv_tn;
            for ((t, vi), ti) in term.iter_mut().zip(v).zip(theta) {
                *t += k * *vi - k2 * *ti;
            }
        }
        acc.add(&term);
    }
    let n = T::from_count(batch.len());
    let mut out = acc.finish();
    out.iter_mut().for_each(|o| *o /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_separable, Labels};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(x: Vec<f64>, y: i8) -> Dataset<f64> {
        let d = x.len();
        Dataset::new(x, d, Labels::Binary(vec![y]), "one").unwrap()
    }

    #[test]
    fn logistic_at_zero_is_log2() {
        assert!((logistic_loss(&[0.0, 0.0], &[0.3, 0.4], 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let spec = LossSpec::adversarial(0.3, PerturbationNorm::L2).unwrap();
        assert_eq!(adversarial_logistic_loss(&[0.0, 0.0], &[0.3, 0.4], 1.0, &spec), 2f64.ln());
    }

    #[test]
    fn logistic_saturates() {
        let v = logistic_loss(&[50.0], &[1.0], 1.0);
        assert!(v > 0.0 && v < 1e-20);
    }

    #[test]
    fn logistic_direct_value() {
        let v = logistic_loss(&[1.0, 0.0], &[0.5, 0.0], -1.0);
        assert!((v - (1.0 + 0.5f64.exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_budget_matches_nominal() {
        let spec = LossSpec::adversarial(0.0, PerturbationNorm::Linf).unwrap();
        let t = [0.4, -1.2, 0.7];
        let x = [0.1, 0.2, -0.3];
        assert_eq!(adversarial_logistic_loss(&t, &x, -1.0, &spec), logistic_loss(&t, &x, -1.0));
    }

    #[test]
    fn subgradient_at_origin_is_half_example() {
        let ds = single(vec![0.3, -0.4], -1);
        let spec = LossSpec::adversarial(0.2, PerturbationNorm::L2).unwrap();
        let g = gradient(&ModelParams::zeros_for(&ds), Batch::full(&ds), &spec).unwrap();
        assert!((g[0] - 0.15).abs() < 1e-15 && (g[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn adversarial_hvp_singular_at_origin() {
        let ds = single(vec![0.3, -0.4], 1);
        let spec = LossSpec::adversarial(0.2, PerturbationNorm::L2).unwrap();
        let err = hessian_vector_product(&ModelParams::zeros_for(&ds), Batch::full(&ds), &spec, &[1.0, 0.0]);
        assert!(matches!(err, Err(Error::Singularity(_))));
    }

    #[test]
    fn nominal_hvp_matches_symbolic_form() {
        let x = vec![0.3, -0.5, 0.2];
        let ds = single(x.clone(), -1);
        let theta = ModelParams::binary(vec![0.7, 0.1, -1.3]);
        let v = [0.2, 1.0, -0.4];
        let hv = hessian_vector_product(&theta, Batch::full(&ds), &LossSpec::nominal(), &v).unwrap();
        let z = -dot(&x, theta.weights());
        let s = sigmoid(z);
        let xv = dot(&x, &v);
        for (h, xi) in hv.iter().zip(&x) {
            assert!((h - s * (1.0 - s) * xv * xi).abs() < 1e-15);
        }
        let zero = hessian_vector_product(&theta, Batch::full(&ds), &LossSpec::nominal(), &[0.0; 3]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn multiclass_uniform_at_zero() {
        let (l, _) = multiclass_loss(&[0.0; 12], 4, &[0.1, 0.2, 0.3], 2);
        assert!((l - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_class_reduces_to_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            let theta: Vec<f64> = (0..3).map(|j| w[3 + j] - w[j]).collect();
            for class in 0..2 {
                let (l, _) = multiclass_loss(&w, 2, &x, class);
                let y = if class == 1 { 1.0 } else { -1.0 };
                assert!((l - logistic_loss(&theta, &x, y)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nominal_gradient_and_hessian_are_bounded() {
        let ds = generate_separable::<f64>(4, 30, 0.2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = ModelParams::binary(theta);
            for i in 0..ds.len() {
                let one = ds.subset(&[i]);
                let g = gradient(&p, Batch::full(&one), &LossSpec::nominal()).unwrap();
                assert!(norm2(&g) <= 1.0);
                // spectral norm of a rank-one PSD Hessian = value along x
                let x = one.row(0).to_vec();
                let hx = hessian_vector_product(&p, Batch::full(&one), &LossSpec::nominal(), &x).unwrap();
                let nx = norm2(&x);
                if nx > 0.0 {
                    assert!(dot(&hx, &x) / (nx * nx) <= 0.25 + 1e-15);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn adversarial_dominates_and_is_monotone(
            theta in prop::collection::vec(-4.0f64..4.0, 3),
            x in prop::collection::vec(-0.57f64..0.57, 3),
            pos in any::<bool>(),
            c1 in 0.0f64..1.0,
            dc in 0.0f64..1.0,
            linf in any::<bool>(),
        ) {
            let y = if pos { 1.0 } else { -1.0 };
            let norm = if linf { PerturbationNorm::Linf } else { PerturbationNorm::L2 };
            let s1 = LossSpec::adversarial(c1, norm).unwrap();
            let s2 = LossSpec::adversarial(c1 + dc, norm).unwrap();
            let l0 = logistic_loss(&theta, &x, y);
            let l1 = adversarial_logistic_loss(&theta, &x, y, &s1);
            let l2 = adversarial_logistic_loss(&theta, &x, y, &s2);
            prop_assert!(l1 >= l0);
            prop_assert!(l2 >= l1);
        }
    }
}
