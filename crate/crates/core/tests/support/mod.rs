//! Independent reference formulas shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rpopt_core::data::{Dataset, Labels};
use rpopt_core::losses::PerturbationNorm;

pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn dual(theta: &[f64], norm: PerturbationNorm) -> f64 {
    match norm {
        PerturbationNorm::L2 => theta.iter().map(|t| t * t).sum::<f64>().sqrt(),
        PerturbationNorm::Linf => theta.iter().map(|t| t.abs()).sum(),
    }
}

/// Mean binary loss over rows of `xs`.
pub fn binary_oracle(theta: &[f64], xs: &[Vec<f64>], ys: &[f64], c: f64, norm: PerturbationNorm) -> f64 {
    let pen = c * dual(theta, norm);
    xs.iter()
        .zip(ys)
        .map(|(x, y)| softplus(-y * x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + pen))
        .sum::<f64>()
        / xs.len() as f64
}

/// Mean softmax cross-entropy; `w` is `classes × d` row-major.
pub fn multiclass_oracle(w: &[f64], classes: usize, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let d = xs[0].len();
    xs.iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z: Vec<f64> = (0..classes)
                .map(|k| (0..d).map(|j| w[k * d + j] * x[j]).sum())
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[y]
        })
        .sum::<f64>()
        / xs.len() as f64
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut p = at.to_vec();
            let mut m = at.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-2);
    diff / scale
}

pub fn ball_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = dual(&v, PerturbationNorm::L2);
    let r: f64 = rng.random_range(0.1..1.0);
    v.iter().map(|x| x * r / n.max(1.0)).collect()
}

/// Parameter vector with every coordinate away from zero, so ℓ1 kinks sit outside the stencil.
pub fn theta_away_from_kinks(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

pub fn binary_set(rng: &mut ChaCha8Rng, d: usize, n: usize) -> (Dataset<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| ball_point(rng, d)).collect();
    let ys: Vec<i8> = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    let ds = Dataset::new(xs.concat(), d, Labels::Binary(ys.clone()), "fd").unwrap();
    (ds, xs, ys.iter().map(|&y| y as f64).collect())
}

pub fn multiclass_set(rng: &mut ChaCha8Rng, d: usize, n: usize, classes: usize) -> (Dataset<f64>, Vec<Vec<f64>>, Vec<usize>) {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| ball_point(rng, d)).collect();
    let ys: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let ds = Dataset::new(xs.concat(), d, Labels::Classes { labels: ys.clone(), classes }, "fd").unwrap();
    (ds, xs, ys)
}

/// Dense Hessian by central differences of an independent gradient.
pub fn fd_hessian(grad: impl Fn(&[f64]) -> Vec<f64>, at: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = at.len();
    let mut hess = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut p = at.to_vec();
        let mut m = at.to_vec();
        p[j] += h;
        m[j] -= h;
        let (gp, gm) = (grad(&p), grad(&m));
        for i in 0..n {
            hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    hess
}

pub fn binary_grad_oracle(theta: &[f64], xs: &[Vec<f64>], ys: &[f64], c: f64) -> Vec<f64> {
    let nt = dual(theta, PerturbationNorm::L2);
    let mut g = vec![0.0; theta.len()];
    for (x, y) in xs.iter().zip(ys) {
        let m = -y * x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + c * nt;
        let s = 1.0 / (1.0 + (-m).exp());
        for j in 0..theta.len() {
            g[j] += s * (-y * x[j] + c * theta[j] / nt) / xs.len() as f64;
        }
    }
    g
}

/// Nominal loss of one example.
pub fn point_loss(theta: &[f64], x: &[f64], y: f64) -> f64 {
    softplus(-y * x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn random_case(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let c = rng.random_range(0.01..1.0);
    (theta, x, y, c)
}

/// Largest loss over 10⁴ perturbations: the circle for ℓ2 (a linear
/// objective peaks on the boundary), a 100×100 grid for ℓ∞.
pub fn brute_force(theta: &[f64], x: &[f64], y: f64, c: f64, norm: PerturbationNorm) -> f64 {
    let mut best = f64::NEG_INFINITY;
    match norm {
        PerturbationNorm::L2 => {
            for k in 0..10_000 {
                let a = std::f64::consts::TAU * k as f64 / 10_000.0;
                best = best.max(point_loss(theta, &add(x, &[c * a.cos(), c * a.sin()]), y));
            }
        }
        PerturbationNorm::Linf => {
            for i in 0..100 {
                for j in 0..100 {
                    let u = -c + 2.0 * c * i as f64 / 99.0;
                    let v = -c + 2.0 * c * j as f64 / 99.0;
                    best = best.max(point_loss(theta, &add(x, &[u, v]), y));
                }
            }
        }
    }
    best
}

/// A point of a binary linear model survives every attack of budget `c`
/// exactly when its worst-case margin keeps the predicted sign.
pub fn robust_oracle(theta: &[f64], x: &[f64], y: f64, c: f64, norm: PerturbationNorm) -> bool {
    let margin: f64 = y * x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
    let dual = match norm {
        PerturbationNorm::L2 => theta.iter().map(|t| t * t).sum::<f64>().sqrt(),
        PerturbationNorm::Linf => theta.iter().map(|t| t.abs()).sum(),
    };
    let worst = margin - c * dual;
    // the classifier breaks ties towards -1
    if y > 0.0 {
        worst > 0.0
    } else {
        worst >= 0.0
    }
}
