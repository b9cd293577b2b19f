//! Gradient descent with optional adversarial training, per-example clipping
//! and Gaussian gradient noise.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{clip_to_norm, dot, norm2, CompensatedSum};
use crate::losses::{
    batch_loss, example_loss_grad, loss_and_gradient, Batch, EvalContext, LossSpec, ModelParams,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Noise of std `σ` added to the (optionally clipped) mean gradient.
    #[default]
    Theory,
    /// Per-example clipping to `k`, noise of std `σk` added to the sum.
    Dpsgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    Size(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimizerConfig<T> {
    pub eta: T,
    pub steps: usize,
    #[serde(flatten)]
    pub spec: LossSpec<T>,
    /// Per-example clip threshold; `None` means no clipping.
    #[serde(default)]
    pub clip_k: Option<T>,
    #[serde(default)]
    pub sigma: T,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    /// First-step rate. Defaults to `4η` for adversarial training and `η` otherwise.
    #[serde(default)]
    pub first_step_eta: Option<T>,
    /// Minibatch size; `None` is full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// RNG stream, so concurrent runs sharing a seed stay independent.
    #[serde(default)]
    pub run_id: u64,
    /// Record a trace row every this many steps (the final step is always recorded).
    #[serde(default = "one")]
    pub trace_every: usize,
    /// Stop once the full-batch gradient norm at a recorded row falls below this.
    #[serde(default)]
    pub stop_grad_norm: Option<T>,
}

fn one() -> usize {
    1
}

impl<T: Scalar> OptimizerConfig<T> {
    pub fn new(eta: T, steps: usize) -> Self {
        Self {
            eta,
            steps,
            spec: LossSpec::nominal(),
            clip_k: None,
            sigma: T::zero(),
            noise_mode: NoiseMode::Theory,
            first_step_eta: None,
            batch_size: None,
            seed: 0,
            run_id: 0,
            trace_every: 1,
            stop_grad_norm: None,
        }
    }

    pub fn batch(&self) -> BatchMode {
        self.batch_size.map_or(BatchMode::Full, BatchMode::Size)
    }

    /// `η₀` actually used for the first update.
    pub fn resolved_first_step_eta(&self) -> T {
        match self.first_step_eta {
            Some(v) => v,
            None if self.spec.is_adversarial() => T::lit(4.0) * self.eta,
            None => self.eta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub severity: Severity,
    pub message: String,
}

impl ConfigIssue {
    fn warn(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    fn error(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            message: message.into(),
        }
    }
}

/// Field errors plus advisory warnings when the convergence bounds do not apply.
pub fn validate_config<T: Scalar>(config: &OptimizerConfig<T>, gamma: Option<T>) -> Vec<ConfigIssue> {
    let mut out = Vec::new();
    let eta = config.eta;
    let c = config.spec.budget;
    if !(eta > T::zero()) || !eta.is_finite() {
        out.push(ConfigIssue::error(format!("eta = {eta} must be > 0")));
    }
    if config.steps == 0 {
        out.push(ConfigIssue::error("steps must be >= 1"));
    }
    if !(c >= T::zero()) || !c.is_finite() {
        out.push(ConfigIssue::error(format!("budget c = {c} must be >= 0")));
    }
    if let Some(k) = config.clip_k {
        if !(k > T::zero()) {
            out.push(ConfigIssue::error(format!("clip_k = {k} must be > 0")));
        }
    }
    if !(config.sigma >= T::zero()) || !config.sigma.is_finite() {
        out.push(ConfigIssue::error(format!("sigma = {} must be >= 0", config.sigma)));
    }
    if let Some(e0) = config.first_step_eta {
        if !(e0 / T::lit(2.0) > eta) {
            out.push(ConfigIssue::error(format!("first_step_eta = {e0} must exceed 2 * eta = {}", eta * T::lit(2.0))));
        }
    }
    if config.noise_mode == NoiseMode::Dpsgd && config.clip_k.map_or(true, |k| k.is_infinite()) {
        out.push(ConfigIssue::error("dpsgd noise mode requires a finite clip_k"));
    }
    if config.batch_size == Some(0) {
        out.push(ConfigIssue::error("batch_size must be >= 1"));
    }
    if config.trace_every == 0 {
        out.push(ConfigIssue::error("trace_every must be >= 1"));
    }
    if eta >= T::lit(4.0) {
        out.push(ConfigIssue::warn(format!("eta = {eta} >= 4: nominal bound does not apply")));
    }
    if let (Some(g), true) = (gamma, c > T::zero()) {
        if c >= g / T::lit(2.0) {
            out.push(ConfigIssue::warn(format!("c = {c} >= gamma/2 = {}: robust bound does not apply", g / T::lit(2.0))));
        }
        let limit = T::lit(4.0) * (g - T::lit(2.0) * c) / (g * (T::one() + c).powi(2));
        if eta >= limit {
            out.push(ConfigIssue::warn(format!(
                "eta = {eta} >= 4(gamma - 2c)/(gamma (1+c)^2) = {limit}: robust bound does not apply"
            )));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TraceRow<T> {
    pub t: usize,
    pub nominal_loss: T,
    pub adversarial_loss: T,
    pub theta_norm: T,
    pub grad_norm: T,
}

#[derive(Debug, Clone)]
pub struct TrainTrace<T> {
    pub rows: Vec<TraceRow<T>>,
    pub params: ModelParams<T>,
    pub config: OptimizerConfig<T>,
    pub seed: u64,
}

impl<T: Scalar> TrainTrace<T> {
    pub fn final_row(&self) -> &TraceRow<T> {
        self.rows.last().expect("trace has at least one row")
    }

    /// Writes `t,nominal_loss,adversarial_loss,theta_norm,grad_norm`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Effective noise applied to the mean gradient and the replace-one
/// sensitivity of that mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration<T> {
    pub mean_grad_std: T,
    pub sensitivity: T,
}

/// Noise actually added to the mean of `n` per-example gradients whose norm is at most `lipschitz`.
pub fn noise_calibration<T: Scalar>(config: &OptimizerConfig<T>, n: usize, lipschitz: T) -> Result<NoiseCalibration<T>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let nn = T::from_count(n);
    let two = T::lit(2.0);
    match config.noise_mode {
        NoiseMode::Theory => {
            let bound = config.clip_k.map_or(lipschitz, |k| k.min(lipschitz));
            Ok(NoiseCalibration {
                mean_grad_std: config.sigma,
                sensitivity: two * bound / nn,
            })
        }
        NoiseMode::Dpsgd => {
            let k = config
                .clip_k
                .filter(|k| k.is_finite())
                .ok_or_else(|| Error::invalid("dpsgd noise mode requires a finite clip_k"))?;
            Ok(NoiseCalibration {
                mean_grad_std: config.sigma * k / nn,
                sensitivity: two * k.min(lipschitz) / nn,
            })
        }
    }
}

/// `sqrt(‖θ - η∇‖² + d η² σ²)`, the root second moment of `‖θ - η(∇ + b)‖` for `b ~ N(0, σ²I)`.
pub fn expected_norm_bound<T: Scalar>(theta: &[T], grad: &[T], eta: T, d: usize, sigma: T) -> T {
    let mean_sq: T = theta
        .iter()
        .zip(grad)
        .map(|(t, g)| {
            let v = *t - eta * *g;
            v * v
        })
        .sum();
    (mean_sq + T::from_count(d) * eta * eta * sigma * sigma).sqrt()
}

/// Mean of per-example gradients, each clipped to norm `k`.
fn clipped_mean_gradient<T: Scalar>(params: &ModelParams<T>, batch: Batch<'_, T>, spec: &LossSpec<T>, k: T) -> Vec<T> {
    let ctx = EvalContext::new(params, spec);
    let mut acc = CompensatedSum::new(params.len());
    let mut tmp = vec![T::zero(); params.len()];
    for (x, y) in batch.iter() {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        example_loss_grad(params, &ctx, x, y, spec, Some((&mut tmp, T::one())));
        clip_to_norm(&mut tmp, k);
        acc.add(&tmp);
    }
    let n = T::from_count(batch.len());
    let mut g = acc.finish();
    g.iter_mut().for_each(|v| *v /= n);
    g
}

fn divergence(step: usize, what: &str) -> Error {
    Error::Divergence {
        step,
        detail: format!("non-finite {what}"),
    }
}

/// Runs the configured optimiser from `θ⁰ = 0`.
///
/// The update is `θ^{t+1} = θ^t - η_t (g_t + b_t)` where `g_t` is the
/// (adversarial, clipped) batch gradient, `b_t` Gaussian noise per
/// [`NoiseMode`], and `η_0` the first-step rate.
pub fn train<T: Scalar>(data: &Dataset<T>, config: &OptimizerConfig<T>) -> Result<TrainTrace<T>> {
    train_observed(data, config, |_, _| Ok(()))
}

/// [`train`], calling `observe(t, θ^t)` at every recorded step.
pub fn train_observed<T: Scalar>(
    data: &Dataset<T>,
    config: &OptimizerConfig<T>,
    mut observe: impl FnMut(usize, &ModelParams<T>) -> Result<()>,
) -> Result<TrainTrace<T>> {
    let issues = validate_config(config, data.margin());
    if let Some(e) = issues.iter().find(|i| i.severity == Severity::Error) {
        return Err(Error::InvalidArgument(e.message.clone()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = config.spec;
    let nominal = LossSpec::nominal();
    let full = Batch::full(data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.run_id);
    let clip = config.clip_k.filter(|k| k.is_finite());
    let batch_mode = config.batch();
    let reuse_full = batch_mode == BatchMode::Full || config.batch_size.is_some_and(|b| b >= data.len());
    let reuse_full = reuse_full && clip.is_none();

    let mut params = ModelParams::zeros_for(data);
    let mut rows = Vec::with_capacity(config.steps / config.trace_every + 2);
    let mut idx: Vec<usize>;
    let mut direction = vec![T::zero(); params.len()];
    let mut noise_out = vec![T::zero(); params.len()];

    for t in 0..=config.steps {
        let record = t % config.trace_every == 0 || t == config.steps;
        let full_eval = if record || reuse_full {
            Some(loss_and_gradient(&params, full, &spec)?)
        } else {
            None
        };
        let mut stop = t == config.steps;
        if record {
            let (adv, g) = full_eval.as_ref().expect("evaluated on record steps");
            let nom = if spec.is_adversarial() {
                batch_loss(&params, full, &nominal)?
            } else {
                *adv
            };
            let row = TraceRow {
                t,
                nominal_loss: nom,
                adversarial_loss: *adv,
                theta_norm: params.norm(),
                grad_norm: norm2(g),
            };
            if !(row.nominal_loss.is_finite() && row.adversarial_loss.is_finite() && row.grad_norm.is_finite()) {
                return Err(divergence(t, "loss or gradient"));
            }
            if config.stop_grad_norm.is_some_and(|tol| row.grad_norm < tol) {
                stop = true;
            }
            rows.push(row);
            observe(t, &params)?;
        }
        if stop {
            break;
        }

        if reuse_full {
            direction.copy_from_slice(&full_eval.expect("full batch evaluated").1);
        } else {
            let batch = match batch_mode {
                BatchMode::Size(b) if b < data.len() => {
                    idx = sample(&mut rng, data.len(), b).into_vec();
                    Batch::subset(data, &idx)
                }
                _ => full,
            };
            direction = match clip {
                Some(k) => clipped_mean_gradient(&params, batch, &spec, k),
                None => loss_and_gradient(&params, batch, &spec)?.1,
            };
        }
        let bsize = match batch_mode {
            BatchMode::Size(b) => b.min(data.len()),
            BatchMode::Full => data.len(),
        };
        let std = match config.noise_mode {
            NoiseMode::Theory => config.sigma,
            NoiseMode::Dpsgd => config.sigma * clip.unwrap_or(T::zero()) / T::from_count(bsize),
        };
        if std > T::zero() {
            for v in noise_out.iter_mut() {
                *v = std * T::standard_normal(&mut rng);
            }
        }
        let eta = if t == 0 { config.resolved_first_step_eta() } else { config.eta };
        let noisy = std > T::zero();
        for ((w, g), b) in params.weights_mut().iter_mut().zip(&direction).zip(&noise_out) {
            let step = if noisy { *g + *b } else { *g };
            *w -= eta * step;
        }
        if !params.is_finite() {
            return Err(divergence(t + 1, "parameters"));
        }
    }
    Ok(TrainTrace {
        rows,
        params,
        config: config.clone(),
        seed: config.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StronglyConvexConfig<T> {
    pub lambda: T,
    pub steps: usize,
    pub sigma: T,
    pub seed: u64,
    pub run_id: u64,
}

/// Noisy projected SGD on `F(w) = mean ℓ(w) + λ/2 ‖w‖²` with `η_t = 1/(λt)`.
///
/// One uniformly sampled example per step; iterates are projected onto
/// `‖w‖ ≤ 1/λ`, which contains the minimiser and on which `F` is
/// 2-Lipschitz for rows of norm at most one.
pub fn noisy_sgd_strongly_convex<T: Scalar>(data: &Dataset<T>, cfg: &StronglyConvexConfig<T>) -> Result<ModelParams<T>> {
    if !data.is_binary() {
        return Err(Error::Unsupported("strongly convex SGD needs binary labels".into()));
    }
    if !(cfg.lambda > T::zero()) || cfg.steps == 0 || !(cfg.sigma >= T::zero()) {
        return Err(Error::invalid("need lambda > 0, steps >= 1, sigma >= 0"));
    }
    let d = data.dim();
    let radius = T::one() / cfg.lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.run_id);
    let mut w = vec![T::zero(); d];
    for t in 1..=cfg.steps {
        let i = sample(&mut rng, data.len(), 1).index(0);
        let (x, y) = (data.row(i), data.label(i).sign::<T>());
        let s = crate::scalar::sigmoid(-y * dot(x, &w));
        let eta = T::one() / (cfg.lambda * T::from_count(t));
        for (wi, xi) in w.iter_mut().zip(x) {
            let g = -y * s * *xi + cfg.lambda * *wi + cfg.sigma * T::standard_normal(&mut rng);
            *wi -= eta * g;
        }
        clip_to_norm(&mut w, radius);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(divergence(t, "parameters"));
        }
    }
    Ok(ModelParams::binary(w))
}

/// `mean ℓ(w) + λ/2 ‖w‖²`.
pub fn regularized_objective<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>, lambda: T) -> Result<T> {
    let n2 = params.norm();
    Ok(batch_loss(params, Batch::full(data), &LossSpec::nominal())? + lambda / T::lit(2.0) * n2 * n2)
}

/// Minimiser of the regularised objective by gradient descent with step `1/(1/4 + λ)`.
pub fn regularized_minimizer<T: Scalar>(data: &Dataset<T>, lambda: T, tol: T, max_iters: usize) -> Result<ModelParams<T>> {
    let mut p = ModelParams::zeros_for(data);
    let step = T::one() / (T::lit(0.25) + lambda);
    for _ in 0..max_iters {
        let (_, mut g) = loss_and_gradient(&p, Batch::full(data), &LossSpec::nominal())?;
        for (gi, wi) in g.iter_mut().zip(p.weights()) {
            *gi += lambda * *wi;
        }
        if norm2(&g) < tol {
            return Ok(p);
        }
        for (wi, gi) in p.weights_mut().iter_mut().zip(&g) {
            *wi -= step * *gi;
        }
    }
    Ok(p)
}
