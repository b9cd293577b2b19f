//! Checks over a finished artifact directory. Nothing is re-run.

use std::fmt;
use std::path::Path;

use super::table::Table;
use super::{ExperimentKind, MANIFEST};
use crate::stats::spearman;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub kind: Option<String>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, measured: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            measured: measured.into(),
        });
    }

    fn fail(&mut self, name: impl Into<String>, why: impl fmt::Display) {
        self.push(name, false, why.to_string());
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.measured)?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

struct Manifest {
    kind: ExperimentKind,
    params: toml::Table,
    results: toml::Table,
    seeds: usize,
}

fn num(t: &toml::Table, key: &str) -> Option<f64> {
    match t.get(key)? {
        toml::Value::Float(v) => Some(*v),
        toml::Value::Integer(v) => Some(*v as f64),
        _ => None,
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest, String> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).map_err(|e| format!("cannot read manifest: {e}"))?;
    let m: toml::Table = text.parse().map_err(|e| format!("manifest is not valid TOML: {e}"))?;
    let kind = m
        .get("kind")
        .and_then(|v| v.as_str())
        .ok_or("manifest has no kind")
        .and_then(|k| ExperimentKind::parse(k).map_err(|_| "manifest kind is unknown"))?;
    let table = |k: &str| m.get(k).and_then(|v| v.as_table()).cloned().unwrap_or_default();
    Ok(Manifest {
        kind,
        params: table("params"),
        results: table("results"),
        seeds: m.get("seeds").and_then(|v| v.as_array()).map_or(0, |a| a.len()),
    })
}

/// Evaluates every check applicable to the artifact kind in `dir`.
///
/// Unreadable inputs become failed checks, never errors.
pub fn verify_report(dir: impl AsRef<Path>) -> VerifyReport {
    let dir = dir.as_ref();
    let mut r = VerifyReport::default();
    let m = match read_manifest(dir) {
        Ok(m) => m,
        Err(e) => {
            r.fail("manifest", e);
            return r;
        }
    };
    r.kind = Some(m.kind.name().to_string());
    r.push("manifest", true, format!("kind {}, {} seeds", m.kind.name(), m.seeds));
    let table = match Table::read(dir.join(m.kind.csv_name())) {
        Ok(t) => t,
        Err(e) => {
            r.fail(format!("{}.csv", m.kind.name()), e);
            return r;
        }
    };
    let outcome = match m.kind {
        ExperimentKind::Fig1Convergence => check_fig1(&m, &table, &mut r),
        ExperimentKind::Fig2Gap => check_fig2(&table, &mut r),
        ExperimentKind::Fig3RobustCompare => check_fig3(&m, &table, &mut r),
        ExperimentKind::Fig8Sweep => check_sweep(&table, "k", &mut r),
        ExperimentKind::Fig9Sweep => check_sweep(&table, "epsilon", &mut r),
        ExperimentKind::BoundsOnly => check_bounds(&table, &mut r),
        ExperimentKind::AttackEval => check_attack(&m, &table, &mut r),
    };
    if let Err(e) = outcome {
        r.fail("schema", e);
    }
    r
}

/// Largest `a - b` over rows where both are finite, with the `t` it occurs at.
fn max_excess(t: &[f64], a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    t.iter()
        .zip(a.iter().zip(b))
        .filter(|(_, (x, y))| x.is_finite() && y.is_finite())
        .map(|(t, (x, y))| (x - y, *t))
        .max_by(|p, q| p.0.total_cmp(&q.0))
}

fn dominance(r: &mut VerifyReport, name: &str, t: &[f64], below: &[f64], above: &[f64]) {
    match max_excess(t, below, above) {
        Some((excess, at)) => r.push(
            name,
            excess <= 0.0,
            if excess <= 0.0 {
                format!("min slack {:.4e} at t={at}", -excess)
            } else {
                format!("violation {excess:.4e} at t={at}")
            },
        ),
        None => r.fail(name, "no comparable rows"),
    }
}

fn check_fig1(m: &Manifest, table: &Table, r: &mut VerifyReport) -> crate::Result<()> {
    let t = table.column("t")?;
    for prefix in ["nominal", "private", "robust", "robust_private"] {
        let mean = table.column(&format!("{prefix}_mean"))?;
        let se = table.column(&format!("{prefix}_se"))?;
        let bound = table.column(&format!("{prefix}_bound"))?;
        let lower: Vec<f64> = mean.iter().zip(&se).map(|(m, s)| m - 2.0 * s).collect();
        dominance(r, &format!("fig1.{prefix}.below-bound"), &t, &lower, &bound);
    }
    let sigma = num(&m.params, "sigma").unwrap_or(0.0);
    if sigma > 0.0 {
        let runs = num(&m.results, "private_runs").unwrap_or(0.0) as usize;
        r.push("fig1.noisy-seed-count", runs >= 20, format!("{runs} runs per noisy setting"));
    }
    Ok(())
}

fn value_at(t: &[f64], v: &[f64], at: f64) -> Option<f64> {
    t.iter().position(|x| *x == at).map(|i| v[i])
}

fn check_fig2(table: &Table, r: &mut VerifyReport) -> crate::Result<()> {
    let t = table.column("t")?;
    let t_end = *t.last().unwrap_or(&f64::NAN);
    let nonprivate = table.column("nonprivate_gap")?;
    let mut private: Vec<(usize, Vec<f64>)> = Vec::new();
    for h in &table.headers {
        if let Some(d) = h.strip_prefix("private_gap_d").and_then(|d| d.parse::<usize>().ok()) {
            private.push((d, table.column(h)?));
        }
    }
    private.sort_by_key(|p| p.0);
    let mut series = vec![("nonprivate_gap".to_string(), nonprivate.clone())];
    series.extend(private.iter().map(|(d, v)| (format!("private_gap_d{d}"), v.clone())));
    for (name, v) in &series {
        let check = format!("fig2.{name}.vanishes");
        match (value_at(&t, v, 10.0), v.last()) {
            (Some(g10), Some(&g_end)) => {
                let ratio = g_end.abs() / g10.abs();
                r.push(
                    check,
                    ratio < 0.1,
                    format!("|gap(t={t_end})| / |gap(10)| = {ratio:.4e} (gap(10) = {g10:.4e}, gap(t={t_end}) = {g_end:.4e})"),
                );
            }
            _ => r.fail(check, "no row at t=10"),
        }
    }
    if private.len() >= 2 {
        let at100: Vec<Option<f64>> = private.iter().map(|(_, v)| value_at(&t, v, 100.0)).collect();
        let name = "fig2.private-gap-increases-with-d";
        if at100.iter().all(Option::is_some) {
            let g: Vec<f64> = at100.into_iter().flatten().collect();
            let ok = g.windows(2).all(|w| w[1] > w[0]);
            let shown: Vec<String> = private.iter().zip(&g).map(|((d, _), v)| format!("d={d}: {v:.6e}")).collect();
            r.push(name, ok, format!("gap(t=100) {}", shown.join(", ")));
        } else {
            r.fail(name, "no row at t=100");
        }
    }
    for (d, v) in &private {
        let diff: Vec<f64> = nonprivate.iter().zip(v).map(|(a, b)| b - a).collect();
        let (worst, at) = t
            .iter()
            .zip(&diff)
            .map(|(t, x)| (*x, *t))
            .min_by(|p, q| p.0.total_cmp(&q.0))
            .unwrap_or((f64::NAN, f64::NAN));
        r.push(
            format!("fig2.private-above-nonprivate.d{d}"),
            worst >= 0.0,
            format!("min(private - nonprivate) = {worst:.4e} at t={at}"),
        );
    }
    Ok(())
}

fn check_fig3(m: &Manifest, table: &Table, r: &mut VerifyReport) -> crate::Result<()> {
    let t = table.column("t")?;
    let standard = table.column("standard_robust_loss")?;
    let adversarial = table.column("adversarial_robust_loss")?;
    let robust = table.column("robust_bound")?;
    let under_standard = table.column("robust_under_standard_bound")?;
    dominance(r, "fig3.adversarial-below-robust-bound", &t, &adversarial, &robust);
    dominance(r, "fig3.standard-below-robust-under-standard-bound", &t, &standard, &under_standard);

    let last_not_below = robust
        .iter()
        .zip(&under_standard)
        .rposition(|(a, b)| !(a.is_finite() && b.is_finite()) || a >= b);
    let t_end = *t.last().unwrap_or(&f64::NAN);
    match last_not_below {
        Some(i) if i + 1 < t.len() => r.push(
            "fig3.crossover",
            true,
            format!("robust bound below robust-under-standard bound for all t >= {} up to {t_end}", t[i + 1]),
        ),
        Some(_) => r.fail("fig3.crossover", format!("no crossover up to t={t_end}")),
        None => r.push("fig3.crossover", true, format!("below at every t up to {t_end}")),
    }

    let (c, eta) = (num(&m.params, "c").unwrap_or(f64::NAN), num(&m.params, "eta").unwrap_or(f64::NAN));
    let n = t.len();
    if n >= 4 && under_standard[n / 2].is_finite() {
        let slope = (under_standard[n - 1] - under_standard[n / 2]) / (t[n - 1] - t[n / 2]);
        let rel = (slope - c * eta).abs() / (c * eta);
        r.push(
            "fig3.linear-divergence",
            rel < 0.01,
            format!("tail slope {slope:.6e}, c*eta = {:.6e}", c * eta),
        );
    } else {
        r.fail("fig3.linear-divergence", "too few rows");
    }
    Ok(())
}

fn sign_check(r: &mut VerifyReport, name: &str, a: &[f64], b: &[f64], positive: bool) {
    let rho = spearman(a, b);
    let ok = if positive { rho > 0.0 } else { rho < 0.0 };
    r.push(name, ok, format!("spearman = {rho:.4} (expected {})", if positive { "> 0" } else { "< 0" }));
}

fn check_sweep(table: &Table, axis: &str, r: &mut VerifyReport) -> crate::Result<()> {
    let c = table.column("c")?;
    let x = table.column("k_or_epsilon")?;
    let lambda = table.column("lambda_max")?;
    let acc = table.column("test_accuracy")?;
    let diverged = table.column("diverged")?;
    let keep: Vec<usize> = (0..c.len())
        .filter(|&i| diverged[i] == 0.0 && lambda[i].is_finite() && acc[i].is_finite())
        .collect();
    let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    r.push(
        "sweep.cells",
        keep.len() >= 3,
        format!("{} of {} cells trained without divergence", keep.len(), c.len()),
    );
    let (c, x, lambda, acc) = (pick(&c), pick(&x), pick(&lambda), pick(&acc));
    sign_check(r, "sweep.lambda-vs-c", &lambda, &c, true);
    sign_check(r, &format!("sweep.lambda-vs-{axis}"), &lambda, &x, false);
    sign_check(r, "sweep.accuracy-vs-lambda", &acc, &lambda, false);
    Ok(())
}

fn check_bounds(table: &Table, r: &mut VerifyReport) -> crate::Result<()> {
    let t = table.column("t")?;
    for (below, above) in [
        ("nominal", "private"),
        ("robust", "robust_private"),
        ("nominal", "robust_under_standard"),
    ] {
        let a = table.column(below)?;
        let b = table.column(above)?;
        dominance(r, &format!("bounds.{below}-below-{above}"), &t, &a, &b);
    }
    Ok(())
}

fn check_attack(m: &Manifest, table: &Table, r: &mut VerifyReport) -> crate::Result<()> {
    let c = table.column("c")?;
    let acc = table.column("robust_accuracy")?;
    let worst = acc.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    r.push(
        "attack.nonincreasing",
        acc.len() < 2 || worst <= 0.0,
        format!("largest increase between budgets {:.4e}", worst.max(0.0)),
    );
    if let (Some(&c0), Some(clean)) = (c.first(), num(&m.results, "clean_accuracy")) {
        if c0 == 0.0 {
            let diff = (acc[0] - clean).abs();
            r.push("attack.zero-budget-is-clean", diff < 1e-12, format!("|robust(0) - clean| = {diff:.3e}"));
        }
    }
    Ok(())
}
