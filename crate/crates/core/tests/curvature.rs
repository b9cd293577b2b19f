//! Dominant eigenvalues against dense symmetric eigendecompositions.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpopt_core::curvature::{
    clipping_smoothness_curve, dominant_eigenpair, max_eigenvalue, optimum_spectrum, read_sweep_csv, write_sweep_csv,
    EigenConfig, EigenMethod, LinearOperator, SweepConfig,
};
use rpopt_core::data::generate_separable;
use rpopt_core::losses::{LossSpec, ModelParams, PerturbationNorm};
use rpopt_core::optimizer::OptimizerConfig;
use rpopt_core::Result;

struct Dense(DMatrix<f64>);

impl LinearOperator<f64> for Dense {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok((&self.0 * DMatrix::from_column_slice(v.len(), 1, v)).as_slice().to_vec())
    }
}

fn top_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean of `σ'(m) r rᵀ + σ(m) c (I/‖θ‖ - θθᵀ/‖θ‖³)` with `r = -y x + c θ/‖θ‖`.
fn dense_binary_hessian(theta: &[f64], data: &rpopt_core::Dataset64, c: f64) -> DMatrix<f64> {
    let d = theta.len();
    let t = DMatrix::from_column_slice(d, 1, theta);
    let nt = t.norm();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..data.len() {
        let y = data.label(i).sign::<f64>();
        let x = DMatrix::from_column_slice(d, 1, data.row(i));
        let r = -y * &x + c / nt * &t;
        let m = c * nt - y * x.dot(&t);
        let s = sigmoid(m);
        h += s * (1.0 - s) * &r * r.transpose();
        h += s * c * (DMatrix::identity(d, d) / nt - &t * t.transpose() / nt.powi(3));
    }
    h / data.len() as f64
}

#[test]
fn hessian_spectrum_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..10 {
        let d = 2 + trial % 7;
        let data = generate_separable::<f64>(d, 40, 0.1, trial as u64).unwrap();
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = rng.random_range(0.0..0.4);
        let want = top_eigenvalue(&dense_binary_hessian(&theta, &data, c));
        for method in [EigenMethod::Lanczos, EigenMethod::Power] {
            let cfg = EigenConfig {
                tol: 1e-10,
                max_iters: 20_000,
                seed: trial as u64,
                method,
            };
            let spec = LossSpec::adversarial(c, PerturbationNorm::L2).unwrap();
            let got = max_eigenvalue(&ModelParams::binary(theta.clone()), &data, &spec, &cfg).unwrap();
            assert!(
                (got.lambda_max - want).abs() <= 1e-7 * want.max(1e-3),
                "{method:?} d={d}: {} vs {want}",
                got.lambda_max
            );
        }
    }
}

#[test]
fn lanczos_matches_dense_on_random_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for n in [5usize, 30, 80] {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = (&a + a.transpose()) / 2.0;
        // shift so the top eigenvalue is also the largest in magnitude
        let shifted = &m + DMatrix::identity(n, n) * (2.0 * n as f64).sqrt() * 2.0;
        let want = top_eigenvalue(&shifted);
        let r = dominant_eigenpair(&Dense(shifted.clone()), &EigenConfig { tol: 1e-12, ..EigenConfig::default() }).unwrap();
        assert!(r.converged);
        assert!((r.eigenvalue - want).abs() < 1e-9 * want, "{} vs {want}", r.eigenvalue);
        let v = DMatrix::from_column_slice(n, 1, &r.eigenvector);
        assert!((&shifted * &v - want * &v).norm() < 1e-6);
    }
}

#[test]
fn optimum_spectrum_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for d in 2..8 {
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = rng.random_range(0.01..1.0);
        let t = DMatrix::from_column_slice(d, 1, &theta);
        let nt = t.norm();
        let m = c / (2.0 * nt) * (DMatrix::identity(d, d) - &t * t.transpose() / (nt * nt));
        let mut vals: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        let s = optimum_spectrum(c, &theta).unwrap();
        assert_eq!(s.multiplicity, d - 1);
        assert!(vals[0].abs() < 1e-12);
        for v in &vals[1..] {
            assert!((v - s.eigenvalue).abs() < 1e-12);
        }
        let dir = DMatrix::from_column_slice(d, 1, &s.null_direction);
        assert!((dir.norm() - 1.0).abs() < 1e-12 && (dir.dot(&t) - nt).abs() < 1e-9);
    }
    assert!(optimum_spectrum(0.1, &[0.0, 0.0]).is_err());
}

fn small_sweep(workers: usize) -> Vec<rpopt_core::curvature::SweepRow<f64>> {
    let data = generate_separable::<f64>(6, 120, 0.1, 5).unwrap();
    let (train, test) = data.split(0.25, 1).unwrap();
    let mut base = OptimizerConfig::new(0.5, 30);
    base.spec = LossSpec::adversarial(0.01, PerturbationNorm::L2).unwrap();
    base.batch_size = Some(30);
    base.first_step_eta = Some(1.25);
    base.trace_every = usize::MAX;
    let cfg = SweepConfig {
        base,
        power: EigenConfig { tol: 1e-8, max_iters: 200, seed: 3, method: EigenMethod::Lanczos },
        workers,
        delta: 1e-5,
        lambda_max: 256,
    };
    clipping_smoothness_curve(&train, &test, &[0.005, 0.02, 0.05], &[0.01, 0.1, f64::INFINITY], &cfg).unwrap()
}

#[test]
fn sweeps_are_deterministic_and_roundtrip() {
    let a = small_sweep(0);
    let b = small_sweep(1);
    assert_eq!(a.len(), 9);
    assert_eq!(a, b);
    for r in &a {
        assert!(!r.diverged && r.lambda_max > 0.0 && (0.0..=1.0).contains(&r.test_accuracy));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&a, &path).unwrap();
    let back = read_sweep_csv(&path).unwrap();
    assert_eq!(back.len(), a.len());
    for (x, y) in back.iter().zip(&a) {
        assert_eq!(x.lambda_max, y.lambda_max);
        assert_eq!(x.k_or_epsilon, y.k_or_epsilon);
    }
}
