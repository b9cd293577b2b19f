//! Hessian spectra: power iteration, the optimum-curvature formula, and sweeps
//! relating adversarial budget, clipping and privacy to curvature.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::clean_accuracy;
use crate::bounds::{accountant_sigma, Sensitivity};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::losses::{hessian_vector_product, Batch, LossSpec, ModelParams, PerturbationNorm};
use crate::optimizer::{train, NoiseMode, OptimizerConfig};
use crate::scalar::Scalar;

/// Symmetric linear map applied by matrix-vector products.
pub trait LinearOperator<T> {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[T]) -> Result<Vec<T>>;
}

/// Hessian of the mean batch loss at fixed parameters.
pub struct HessianOperator<'a, T> {
    pub params: &'a ModelParams<T>,
    pub batch: Batch<'a, T>,
    pub spec: LossSpec<T>,
}

impl<T: Scalar> LinearOperator<T> for HessianOperator<'_, T> {
    fn dim(&self) -> usize {
        self.params.len()
    }

    fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        hessian_vector_product(self.params, self.batch, &self.spec, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    Power,
    /// Krylov refinement of the power sequence; handles clustered top eigenvalues.
    #[default]
    Lanczos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EigenConfig<T> {
    pub tol: T,
    /// Cap on operator applications.
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: EigenMethod,
}

impl<T: Scalar> Default for EigenConfig<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iters: 1000,
            seed: 0,
            method: EigenMethod::Lanczos,
        }
    }
}

fn random_unit<T: Scalar>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<T> = (0..n).map(|_| T::standard_normal(&mut rng)).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

fn residual_of<T: Scalar>(av: &[T], v: &[T], lambda: T) -> T {
    norm2(&av.iter().zip(v).map(|(a, b)| *a - lambda * *b).collect::<Vec<_>>())
}

/// Dominant eigenpair with the configured method.
pub fn dominant_eigenpair<T: Scalar>(op: &dyn LinearOperator<T>, cfg: &EigenConfig<T>) -> Result<PowerResult<T>> {
    match cfg.method {
        EigenMethod::Power => power_iteration(op, cfg),
        EigenMethod::Lanczos => lanczos(op, cfg),
    }
}

/// Largest eigenpair by Lanczos with full reorthogonalisation.
///
/// The Ritz estimate is accepted when it moves by less than `tol` relative
/// and the true residual `‖Av - λv‖` is at most `tol · max(1, |λ|)`.
pub fn lanczos<T: Scalar>(op: &dyn LinearOperator<T>, cfg: &EigenConfig<T>) -> Result<PowerResult<T>> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::invalid("operator has dimension 0"));
    }
    let mut basis: Vec<Vec<T>> = vec![random_unit(n, cfg.seed)];
    let mut alpha: Vec<T> = Vec::new();
    let mut beta: Vec<T> = Vec::new();
    let mut applied = 0;
    let mut last = T::nan();
    let budget = cfg.max_iters.max(1);
    loop {
        let j = alpha.len();
        let mut w = op.apply(&basis[j])?;
        applied += 1;
        let a = dot(&basis[j], &w);
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let h = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= h * *qi;
                }
            }
        }
        let b = norm2(&w);
        let m = alpha.len();
        let mut tri = vec![T::zero(); m * m];
        for i in 0..m {
            tri[i * m + i] = alpha[i];
            if i + 1 < m {
                tri[i * m + i + 1] = beta[i];
                tri[(i + 1) * m + i] = beta[i];
            }
        }
        let (vals, vecs) = crate::linalg::symmetric_eigen(&tri, m);
        let theta = vals[0];
        let y = &vecs[0];
        let estimate = b * y[m - 1].abs();
        let exhausted = m == n || b <= T::epsilon() * theta.abs().max(T::one());
        let change = (theta - last).abs() / theta.abs().max(T::min_positive_value());
        let scale = cfg.tol * theta.abs().max(T::one());
        let out_of_budget = applied >= budget;
        if (estimate <= scale && change < cfg.tol) || exhausted || out_of_budget {
            let mut x = vec![T::zero(); n];
            for (q, yi) in basis.iter().zip(y) {
                for (xi, qi) in x.iter_mut().zip(q) {
                    *xi += *yi * *qi;
                }
            }
            let nx = norm2(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            let ax = op.apply(&x)?;
            let lambda = dot(&x, &ax);
            let residual = residual_of(&ax, &x, lambda);
            let converged = residual <= cfg.tol * lambda.abs().max(T::one());
            if !(converged || exhausted || out_of_budget) {
                last = theta;
                beta.push(b);
                basis.push(w.into_iter().map(|v| v / b).collect());
                continue;
            }
            return Ok(PowerResult {
                eigenvalue: lambda,
                eigenvector: x,
                iterations: applied,
                residual,
                converged,
            });
        }
        last = theta;
        beta.push(b);
        basis.push(w.into_iter().map(|v| v / b).collect());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerResult<T> {
    pub eigenvalue: T,
    pub eigenvector: Vec<T>,
    pub iterations: usize,
    pub residual: T,
    /// `false` when `max_iters` ran out first.
    pub converged: bool,
}

/// Dominant eigenpair by power iteration with Rayleigh-quotient estimates.
///
/// Stops once the estimate changes by less than `tol` relative and
/// `‖Av - λv‖ ≤ tol · max(1, |λ|)`.
pub fn power_iteration<T: Scalar>(op: &dyn LinearOperator<T>, cfg: &EigenConfig<T>) -> Result<PowerResult<T>> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::invalid("operator has dimension 0"));
    }
    let mut v = random_unit(n, cfg.seed);
    let mut lambda = T::zero();
    let mut residual = T::infinity();
    for it in 1..=cfg.max_iters {
        let w = op.apply(&v)?;
        let next = dot(&v, &w);
        residual = residual_of(&w, &v, next);
        let change = (next - lambda).abs() / next.abs().max(T::min_positive_value());
        lambda = next;
        let nw = norm2(&w);
        if residual <= cfg.tol * lambda.abs().max(T::one()) && (change < cfg.tol || nw == T::zero()) {
            return Ok(PowerResult {
                eigenvalue: lambda,
                eigenvector: v,
                iterations: it,
                residual,
                converged: true,
            });
        }
        if nw == T::zero() {
            break;
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Ok(PowerResult {
        eigenvalue: lambda,
        eigenvector: v,
        iterations: cfg.max_iters,
        residual,
        converged: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport<T> {
    pub lambda_max: T,
    pub iterations: usize,
    pub residual: T,
    pub converged: bool,
    /// `c/(2‖θ‖)` for binary ℓ2-robust models.
    pub predicted: Option<T>,
    pub theta_norm: T,
}

/// Largest Hessian eigenvalue of the mean loss over `data` at `params`.
pub fn max_eigenvalue<T: Scalar>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    spec: &LossSpec<T>,
    cfg: &EigenConfig<T>,
) -> Result<SpectrumReport<T>> {
    if !params.is_finite() {
        return Err(Error::invalid("parameters are not finite"));
    }
    let op = HessianOperator {
        params,
        batch: Batch::full(data),
        spec: *spec,
    };
    let r = dominant_eigenpair(&op, cfg)?;
    let theta_norm = params.norm();
    let predicted = (params.is_binary() && spec.is_adversarial() && spec.norm == PerturbationNorm::L2)
        .then(|| optimum_curvature(spec.budget, theta_norm))
        .transpose()?;
    Ok(SpectrumReport {
        lambda_max: r.eigenvalue,
        iterations: r.iterations,
        residual: r.residual,
        converged: r.converged,
        predicted,
        theta_norm,
    })
}

/// `c/(2‖θ*‖)`, the nonzero Hessian eigenvalue at a binary robust optimum.
pub fn optimum_curvature<T: Scalar>(c: T, theta_norm: T) -> Result<T> {
    if !(theta_norm > T::zero()) {
        return Err(Error::Singularity("optimum curvature needs a nonzero parameter norm".into()));
    }
    Ok(c / (T::lit(2.0) * theta_norm))
}

/// Eigenstructure of `c/(2‖θ‖) (I - θθᵀ/‖θ‖²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimumSpectrum<T> {
    /// Eigenvalue on the orthogonal complement of `θ`, multiplicity `d - 1`.
    pub eigenvalue: T,
    /// Unit vector along `θ`; its eigenvalue is zero.
    pub null_direction: Vec<T>,
    pub multiplicity: usize,
}

pub fn optimum_spectrum<T: Scalar>(c: T, theta: &[T]) -> Result<OptimumSpectrum<T>> {
    let n = norm2(theta);
    let eigenvalue = optimum_curvature(c, n)?;
    Ok(OptimumSpectrum {
        eigenvalue,
        null_direction: theta.iter().map(|t| *t / n).collect(),
        multiplicity: theta.len() - 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SweepConfig<T> {
    /// Training settings shared by every cell; `spec.budget` and clipping are overridden per cell.
    pub base: OptimizerConfig<T>,
    pub power: EigenConfig<T>,
    /// Worker threads; 0 uses the global pool.
    #[serde(default)]
    pub workers: usize,
    /// Privacy sweeps only.
    #[serde(default = "default_delta")]
    pub delta: T,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: usize,
}

fn default_delta<T: Scalar>() -> T {
    T::lit(1e-5)
}

fn default_lambda_max() -> usize {
    1024
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SweepRow<T> {
    pub c: T,
    pub k_or_epsilon: T,
    pub lambda_max: T,
    pub test_accuracy: T,
    pub theta_norm: T,
    /// Power iteration met its tolerance.
    pub converged: bool,
    pub diverged: bool,
}

/// Per-cell seed derived from the base seed and grid position.
pub fn cell_seed(seed: u64, i: usize, j: usize) -> u64 {
    let mut z = seed ^ ((i as u64) << 32 | j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_cell<T: Scalar>(train_set: &Dataset<T>, test: &Dataset<T>, cfg: &OptimizerConfig<T>, power: &EigenConfig<T>, x: T) -> Result<SweepRow<T>> {
    let c = cfg.spec.budget;
    match train(train_set, cfg) {
        Ok(trace) => {
            let acc = clean_accuracy(&trace.params, test)?;
            let spec = max_eigenvalue(&trace.params, train_set, &cfg.spec, power)?;
            Ok(SweepRow {
                c,
                k_or_epsilon: x,
                lambda_max: spec.lambda_max,
                test_accuracy: acc,
                theta_norm: spec.theta_norm,
                converged: spec.converged,
                diverged: false,
            })
        }
        Err(Error::Divergence { .. }) => Ok(SweepRow {
            c,
            k_or_epsilon: x,
            lambda_max: T::nan(),
            test_accuracy: T::nan(),
            theta_norm: T::nan(),
            converged: false,
            diverged: true,
        }),
        Err(e) => Err(e),
    }
}

fn run_grid<T: Scalar>(
    cfg: &SweepConfig<T>,
    cells: Vec<(usize, usize, OptimizerConfig<T>, T)>,
    train_set: &Dataset<T>,
    test: &Dataset<T>,
) -> Result<Vec<SweepRow<T>>> {
    let work = || -> Result<Vec<SweepRow<T>>> {
        cells
            .par_iter()
            .map(|(i, j, oc, x)| {
                let mut power = cfg.power;
                power.seed = cell_seed(cfg.power.seed, *i, *j);
                run_cell(train_set, test, oc, &power, *x)
                    .map_err(|e| e.in_stage(&format!("sweep cell ({i}, {j})")))
            })
            .collect()
    };
    if cfg.workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?
            .install(work)
    }
}

fn check_grids<T: Scalar>(train_set: &Dataset<T>, test: &Dataset<T>, a: &[T], b: &[T]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("sweep grids must be nonempty"));
    }
    if train_set.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// One model per `(c, k)` cell trained with clipping and no noise.
///
/// `k = ∞` disables clipping.
pub fn clipping_smoothness_curve<T: Scalar>(
    train_set: &Dataset<T>,
    test: &Dataset<T>,
    c_grid: &[T],
    k_grid: &[T],
    cfg: &SweepConfig<T>,
) -> Result<Vec<SweepRow<T>>> {
    check_grids(train_set, test, c_grid, k_grid)?;
    let mut cells = Vec::new();
    for (i, &c) in c_grid.iter().enumerate() {
        for (j, &k) in k_grid.iter().enumerate() {
            let mut oc = cfg.base.clone();
            oc.spec = LossSpec::adversarial(c, cfg.base.spec.norm)?;
            oc.clip_k = k.is_finite().then_some(k);
            oc.sigma = T::zero();
            oc.noise_mode = NoiseMode::Theory;
            oc.seed = cell_seed(cfg.base.seed, i, j);
            cells.push((i, j, oc, k));
        }
    }
    run_grid(cfg, cells, train_set, test)
}

/// One model per `(c, ε)` cell trained with private SGD, `σ` calibrated by the accountant.
///
/// `σ` is a noise multiplier on the clip threshold, so the accountant runs with unit sensitivity scale.
pub fn privacy_smoothness_curve<T: Scalar>(
    train_set: &Dataset<T>,
    test: &Dataset<T>,
    c_grid: &[T],
    epsilon_grid: &[T],
    cfg: &SweepConfig<T>,
) -> Result<Vec<SweepRow<T>>> {
    check_grids(train_set, test, c_grid, epsilon_grid)?;
    if cfg.base.clip_k.map_or(true, |k| !k.is_finite()) {
        return Err(Error::invalid("privacy sweep needs a finite clip_k in the base config"));
    }
    let sens = Sensitivity::nominal(T::one());
    let sigmas: Vec<T> = epsilon_grid
        .iter()
        .map(|&e| accountant_sigma(e, cfg.delta, cfg.base.steps, &sens, cfg.lambda_max).map(|s| s.sigma))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (i, &c) in c_grid.iter().enumerate() {
        for (j, (&e, &s)) in epsilon_grid.iter().zip(&sigmas).enumerate() {
            let mut oc = cfg.base.clone();
            oc.spec = LossSpec::adversarial(c, cfg.base.spec.norm)?;
            oc.sigma = s;
            oc.noise_mode = NoiseMode::Dpsgd;
            oc.seed = cell_seed(cfg.base.seed, i, j);
            cells.push((i, j, oc, e));
        }
    }
    run_grid(cfg, cells, train_set, test)
}

/// Writes `c,k_or_epsilon,lambda_max,test_accuracy,theta_norm,converged,diverged`.
pub fn write_sweep_csv<T: Scalar>(rows: &[SweepRow<T>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
