//! Experiment configuration, orchestration and artifact checks.
//!
//! An experiment is described by a TOML file:
//!
//! ```toml
//! kind = "fig1-convergence"
//! seeds = [0, 1, 2]
//! output_dir = "out/fig1"
//!
//! [params]
//! sigma = 0.25
//! ```
//!
//! Keys missing from `[params]` take the kind's defaults, which are listed in
//! the `[defaults]` table of the produced `manifest.toml`.

mod plot;
mod table;
mod verify;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{clean_accuracy, improvement_curve, robust_accuracy_curve, AttackConfig};
use crate::bounds::{
    accountant_sigma, bound_robust, bound_robust_under_standard, gap_curve, robust_crossover, BoundForm,
    BoundInputs, BoundSetting, GapSetting, Sensitivity,
};
use crate::curvature::{
    clipping_smoothness_curve, privacy_smoothness_curve, write_sweep_csv, EigenConfig, EigenMethod, SweepConfig,
};
use crate::data::{generate_separable, load_csv, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::losses::{batch_loss, Batch, LossSpec, ModelParams, PerturbationNorm};
use crate::optimizer::{train, train_observed, validate_config, OptimizerConfig, Severity};
use crate::stats::{mean, standard_error};

pub use plot::{render_plot, render_svg, PlotSpec};
pub use table::{format_value, Table};
pub use verify::{verify_report, Check, VerifyReport};

pub const SOFTWARE: &str = concat!("rpopt ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Fig1Convergence,
    Fig2Gap,
    Fig3RobustCompare,
    Fig8Sweep,
    Fig9Sweep,
    BoundsOnly,
    AttackEval,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Fig1Convergence,
        ExperimentKind::Fig2Gap,
        ExperimentKind::Fig3RobustCompare,
        ExperimentKind::Fig8Sweep,
        ExperimentKind::Fig9Sweep,
        ExperimentKind::BoundsOnly,
        ExperimentKind::AttackEval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fig1Convergence => "fig1-convergence",
            ExperimentKind::Fig2Gap => "fig2-gap",
            ExperimentKind::Fig3RobustCompare => "fig3-robust-compare",
            ExperimentKind::Fig8Sweep => "fig8-sweep",
            ExperimentKind::Fig9Sweep => "fig9-sweep",
            ExperimentKind::BoundsOnly => "bounds-only",
            ExperimentKind::AttackEval => "attack-eval",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind `{s}`")))
    }

    /// Name of the main CSV the kind produces.
    pub fn csv_name(self) -> &'static str {
        match self {
            ExperimentKind::Fig1Convergence => "fig1.csv",
            ExperimentKind::Fig2Gap => "fig2.csv",
            ExperimentKind::Fig3RobustCompare => "fig3.csv",
            ExperimentKind::Fig8Sweep => "fig8.csv",
            ExperimentKind::Fig9Sweep => "fig9.csv",
            ExperimentKind::BoundsOnly => "bounds.csv",
            ExperimentKind::AttackEval => "attack.csv",
        }
    }
}

/// A list of values, or `points` values from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Range(GridRange),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub from: f64,
    pub to: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: GridScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GridScale {
    #[default]
    Log,
    Linear,
}

impl Grid {
    pub fn log(from: f64, to: f64, points: usize) -> Self {
        Grid::Range(GridRange {
            from,
            to,
            points,
            scale: GridScale::Log,
        })
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Grid::Values(v) => v.clone(),
            Grid::Range(r) => {
                if r.points == 0 {
                    return Err(Error::Config("grid needs at least one point".into()));
                }
                if r.scale == GridScale::Log && !(r.from > 0.0 && r.to > 0.0) {
                    return Err(Error::Config("log grid endpoints must be positive".into()));
                }
                let m = (r.points - 1).max(1) as f64;
                (0..r.points)
                    .map(|i| {
                        let f = i as f64 / m;
                        match r.scale {
                            GridScale::Log => r.from * (r.to / r.from).powf(f),
                            GridScale::Linear => r.from + (r.to - r.from) * f,
                        }
                    })
                    .collect()
            }
        };
        if v.is_empty() || v.iter().any(|x| x.is_nan()) {
            return Err(Error::Config("grid is empty or contains NaN".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum DataSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "label_column")]
        label_column: String,
    },
    Synthetic {
        d: usize,
        n: usize,
        gamma: f64,
        seed: u64,
    },
}

fn label_column() -> String {
    "label".into()
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset<f64>> {
        match self {
            DataSource::Idx { images, labels, limit } => load_idx(images, labels, limit.unwrap_or(usize::MAX)),
            DataSource::Csv { path, label_column } => load_csv(path, label_column),
            DataSource::Synthetic { d, n, gamma, seed } => generate_separable(*d, *n, *gamma, *seed),
        }
    }

    fn files(&self) -> Vec<&Path> {
        match self {
            DataSource::Idx { images, labels, .. } => vec![images, labels],
            DataSource::Csv { path, .. } => vec![path],
            DataSource::Synthetic { .. } => vec![],
        }
    }

    fn files_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            DataSource::Idx { images, labels, .. } => vec![images, labels],
            DataSource::Csv { path, .. } => vec![path],
            DataSource::Synthetic { .. } => vec![],
        }
    }
}

/// Fig. 1: loss curves of the four training settings against their bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig1Params {
    pub d: usize,
    pub n: usize,
    pub gamma: f64,
    pub c: f64,
    pub eta: f64,
    pub sigma: f64,
    pub steps: usize,
    pub data_seed: u64,
    pub norm: PerturbationNorm,
    pub form: BoundForm,
    /// First-step rate; `None` uses the optimizer default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_step_eta: Option<f64>,
}

impl Default for Fig1Params {
    fn default() -> Self {
        Self {
            d: 10,
            n: 100,
            gamma: 1.0,
            c: 0.1,
            eta: 0.1,
            sigma: 0.25,
            steps: 1000,
            data_seed: 7,
            norm: PerturbationNorm::L2,
            form: BoundForm::Appendix,
            first_step_eta: None,
        }
    }
}

/// Fig. 2: bound gaps between robust and standard training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig2Params {
    pub eta: f64,
    pub gamma: f64,
    pub c: f64,
    pub sigma: f64,
    pub dims: Vec<usize>,
    pub t_max: f64,
    pub points_per_decade: usize,
    pub form: BoundForm,
}

impl Default for Fig2Params {
    fn default() -> Self {
        Self {
            eta: 0.1,
            gamma: 1.0,
            c: 0.1,
            sigma: 0.25,
            dims: vec![10, 100, 1000],
            t_max: 1e5,
            points_per_decade: 20,
            form: BoundForm::Appendix,
        }
    }
}

/// Fig. 3: robust loss under standard and adversarial training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig3Params {
    pub d: usize,
    pub n: usize,
    pub gamma: f64,
    pub c: f64,
    pub eta: f64,
    pub steps: usize,
    pub data_seed: u64,
    /// Bound curves extend to this horizon.
    pub t_max: usize,
    pub norm: PerturbationNorm,
    pub form: BoundForm,
}

impl Default for Fig3Params {
    fn default() -> Self {
        Self {
            d: 10,
            n: 100,
            gamma: 1.0,
            c: 0.1,
            eta: 0.1,
            steps: 1000,
            data_seed: 7,
            t_max: 10_000,
            norm: PerturbationNorm::L2,
            form: BoundForm::Appendix,
        }
    }
}

/// Figs. 8 and 9: curvature of trained models over a hyper-parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    pub train: DataSource,
    pub test: DataSource,
    pub c_grid: Grid,
    /// Clip thresholds (fig8) or privacy budgets ε (fig9).
    pub grid: Grid,
    pub eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// First-step rate as a multiple of `eta`.
    pub first_step_factor: f64,
    pub norm: PerturbationNorm,
    /// Clip threshold of private training (fig9 only).
    pub clip_k: f64,
    pub delta: f64,
    pub lambda_max: usize,
    pub eigen_tol: f64,
    pub eigen_iters: usize,
    pub workers: usize,
}

impl SweepParams {
    fn fixtures() -> (DataSource, DataSource) {
        let dir = PathBuf::from("data");
        (
            DataSource::Idx {
                images: dir.join("mnist-train-2000-images-idx3-ubyte"),
                labels: dir.join("mnist-train-2000-labels-idx1-ubyte"),
                limit: None,
            },
            DataSource::Idx {
                images: dir.join("mnist-test-500-images-idx3-ubyte"),
                labels: dir.join("mnist-test-500-labels-idx1-ubyte"),
                limit: None,
            },
        )
    }

    pub fn fig8() -> Self {
        let (train, test) = Self::fixtures();
        Self {
            train,
            test,
            c_grid: Grid::log(0.005, 0.2, 10),
            grid: Grid::log(0.001, 1.0, 10),
            eta: 0.5,
            steps: 200,
            batch_size: 100,
            first_step_factor: 2.5,
            norm: PerturbationNorm::L2,
            clip_k: 0.1,
            delta: 1e-5,
            lambda_max: 1024,
            eigen_tol: 1e-6,
            eigen_iters: 100,
            workers: 0,
        }
    }

    pub fn fig9() -> Self {
        Self {
            grid: Grid::log(10.0, 1000.0, 10),
            steps: 50,
            batch_size: 400,
            ..Self::fig8()
        }
    }

    fn sweep_config(&self, seed: u64) -> SweepConfig<f64> {
        let mut base = OptimizerConfig::new(self.eta, self.steps);
        base.spec = LossSpec {
            budget: 0.0,
            norm: self.norm,
        };
        base.batch_size = Some(self.batch_size);
        base.first_step_eta = Some(self.first_step_factor * self.eta);
        base.clip_k = Some(self.clip_k);
        base.seed = seed;
        base.trace_every = usize::MAX;
        SweepConfig {
            base,
            power: EigenConfig {
                tol: self.eigen_tol,
                max_iters: self.eigen_iters,
                seed,
                method: EigenMethod::Lanczos,
            },
            workers: self.workers,
            delta: self.delta,
            lambda_max: self.lambda_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsParams {
    pub t_max: usize,
    pub eta: f64,
    pub gamma: f64,
    pub c: f64,
    pub d: usize,
    pub sigma: f64,
    pub form: BoundForm,
}

impl Default for BoundsParams {
    fn default() -> Self {
        Self {
            t_max: 1000,
            eta: 0.1,
            gamma: 1.0,
            c: 0.1,
            d: 10,
            sigma: 0.25,
            form: BoundForm::Appendix,
        }
    }
}

impl BoundsParams {
    fn inputs(&self) -> BoundInputs<f64> {
        BoundInputs::new(1.0, self.eta, self.gamma)
            .with_budget(self.c)
            .with_noise(self.d, self.sigma)
            .with_form(self.form)
    }
}

/// Robust accuracy of saved models under PGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Optional robustly trained model; adds an improvement column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust_model: Option<PathBuf>,
    pub data: DataSource,
    pub budgets: Grid,
    pub norm: PerturbationNorm,
    pub steps: usize,
    pub restarts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            model: None,
            robust_model: None,
            data: SweepParams::fixtures().1,
            budgets: Grid::Values(vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5]),
            norm: PerturbationNorm::L2,
            steps: 100,
            restarts: 1,
            step_size: None,
        }
    }
}

/// Parameter block of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Fig1(Fig1Params),
    Fig2(Fig2Params),
    Fig3(Fig3Params),
    Sweep(SweepParams),
    Bounds(BoundsParams),
    Attack(AttackParams),
}

impl Params {
    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Fig1Convergence => Params::Fig1(Fig1Params::default()),
            ExperimentKind::Fig2Gap => Params::Fig2(Fig2Params::default()),
            ExperimentKind::Fig3RobustCompare => Params::Fig3(Fig3Params::default()),
            ExperimentKind::Fig8Sweep => Params::Sweep(SweepParams::fig8()),
            ExperimentKind::Fig9Sweep => Params::Sweep(SweepParams::fig9()),
            ExperimentKind::BoundsOnly => Params::Bounds(BoundsParams::default()),
            ExperimentKind::AttackEval => Params::Attack(AttackParams::default()),
        }
    }

    fn to_toml(&self) -> Result<toml::Table> {
        let v = match self {
            Params::Fig1(p) => toml::Table::try_from(p),
            Params::Fig2(p) => toml::Table::try_from(p),
            Params::Fig3(p) => toml::Table::try_from(p),
            Params::Sweep(p) => toml::Table::try_from(p),
            Params::Bounds(p) => toml::Table::try_from(p),
            Params::Attack(p) => toml::Table::try_from(p),
        };
        v.map_err(|e| Error::Config(e.to_string()))
    }

    fn from_toml(kind: ExperimentKind, t: toml::Table) -> Result<Self> {
        fn de<P: serde::de::DeserializeOwned>(t: toml::Table) -> Result<P> {
            t.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
        }
        Ok(match kind {
            ExperimentKind::Fig1Convergence => Params::Fig1(de(t)?),
            ExperimentKind::Fig2Gap => Params::Fig2(de(t)?),
            ExperimentKind::Fig3RobustCompare => Params::Fig3(de(t)?),
            ExperimentKind::Fig8Sweep | ExperimentKind::Fig9Sweep => Params::Sweep(de(t)?),
            ExperimentKind::BoundsOnly => Params::Bounds(de(t)?),
            ExperimentKind::AttackEval => Params::Attack(de(t)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub params: Params,
    /// Parameter keys filled from defaults rather than given explicitly.
    pub defaulted: BTreeSet<String>,
}

fn overlay(base: &mut toml::Table, user: &toml::Table, prefix: &str, explicit: &mut BTreeSet<String>) {
    for (k, v) in user {
        let key = format!("{prefix}{k}");
        match (base.get_mut(k), v) {
            // a tagged data source is replaced whole so variant fields do not mix
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !u.contains_key("format") => {
                overlay(b, u, &format!("{key}."), explicit)
            }
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
        explicit.insert(key);
    }
}

fn leaf_keys(t: &toml::Table, prefix: &str, out: &mut BTreeSet<String>) {
    for (k, v) in t {
        let key = format!("{prefix}{k}");
        match v {
            toml::Value::Table(sub) if !sub.contains_key("format") => leaf_keys(sub, &format!("{key}."), out),
            _ => {
                out.insert(key);
            }
        }
    }
}

impl ExperimentConfig {
    /// Config with every parameter at its default.
    pub fn new(kind: ExperimentKind, seeds: Vec<u64>, output_dir: impl Into<PathBuf>) -> Self {
        let params = Params::default_for(kind);
        let mut defaulted = BTreeSet::new();
        if let Ok(t) = params.to_toml() {
            leaf_keys(&t, "", &mut defaulted);
        }
        Self {
            kind,
            seeds,
            output_dir: output_dir.into(),
            params,
            defaulted,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for key in raw.keys() {
            if !["kind", "seeds", "output_dir", "params"].contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown top-level key `{key}`")));
            }
        }
        let kind = ExperimentKind::parse(
            raw.get("kind")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Config("`kind` is required".into()))?,
        )?;
        let seeds = match raw.get("seeds") {
            None => Vec::new(),
            Some(v) => v
                .as_array()
                .ok_or_else(|| Error::Config("`seeds` must be an array".into()))?
                .iter()
                .map(|s| {
                    s.as_integer()
                        .filter(|i| *i >= 0)
                        .map(|i| i as u64)
                        .ok_or_else(|| Error::Config("seeds must be non-negative integers".into()))
                })
                .collect::<Result<_>>()?,
        };
        let output_dir = raw
            .get("output_dir")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Config("`output_dir` is required".into()))?
            .into();
        let user = match raw.get("params") {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => return Err(Error::Config("`params` must be a table".into())),
        };
        let mut merged = Params::default_for(kind).to_toml()?;
        let mut all = BTreeSet::new();
        leaf_keys(&merged, "", &mut all);
        let mut explicit = BTreeSet::new();
        overlay(&mut merged, &user, "", &mut explicit);
        let params = Params::from_toml(kind, merged)?;
        let defaulted = all
            .into_iter()
            .filter(|k| !explicit.iter().any(|e| e == k || k.starts_with(&format!("{e}."))))
            .collect();
        Ok(Self {
            kind,
            seeds,
            output_dir,
            params,
            defaulted,
        })
    }

    /// Reads a config file; relative paths inside it resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.params {
            Params::Sweep(p) => {
                p.train.files_mut().into_iter().for_each(fix);
                p.test.files_mut().into_iter().for_each(fix);
            }
            Params::Attack(p) => {
                p.data.files_mut().into_iter().for_each(fix);
                p.model.iter_mut().for_each(fix);
                p.robust_model.iter_mut().for_each(fix);
            }
            _ => {}
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let mut t = toml::Table::new();
        t.insert("kind".into(), self.kind.name().into());
        t.insert(
            "seeds".into(),
            toml::Value::Array(self.seeds.iter().map(|s| toml::Value::Integer(*s as i64)).collect()),
        );
        t.insert("output_dir".into(), self.output_dir.display().to_string().into());
        t.insert("params".into(), toml::Value::Table(self.params.to_toml()?));
        toml::to_string(&t).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks the config without running anything; returns warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds list is empty".into()));
        }
        let kind_matches = matches!(
            (self.kind, &self.params),
            (ExperimentKind::Fig1Convergence, Params::Fig1(_))
                | (ExperimentKind::Fig2Gap, Params::Fig2(_))
                | (ExperimentKind::Fig3RobustCompare, Params::Fig3(_))
                | (ExperimentKind::Fig8Sweep | ExperimentKind::Fig9Sweep, Params::Sweep(_))
                | (ExperimentKind::BoundsOnly, Params::Bounds(_))
                | (ExperimentKind::AttackEval, Params::Attack(_))
        );
        if !kind_matches {
            return Err(Error::Config(format!("parameter block does not match kind {}", self.kind.name())));
        }
        let mut warnings = Vec::new();
        let mut check_opt = |cfg: &OptimizerConfig<f64>, gamma: Option<f64>, what: &str| -> Result<()> {
            for issue in validate_config(cfg, gamma) {
                match issue.severity {
                    Severity::Error => return Err(Error::Config(format!("{what}: {}", issue.message))),
                    Severity::Warning => warnings.push(format!("{what}: {}", issue.message)),
                }
            }
            Ok(())
        };
        match &self.params {
            Params::Fig1(p) => {
                for (name, cfg) in fig1_configs(p, 0)? {
                    check_opt(&cfg, Some(p.gamma), name)?;
                }
                let bi = fig1_inputs(p);
                for s in FIG1_SETTINGS {
                    s.evaluate(&bi)?;
                }
                if p.sigma > 0.0 && self.seeds.len() < 20 {
                    warnings.push(format!("{} seeds for noisy settings; 20 or more recommended", self.seeds.len()));
                }
            }
            Params::Fig2(p) => {
                if p.dims.is_empty() || !(p.t_max >= 10.0) || p.points_per_decade == 0 {
                    return Err(Error::Config("fig2 needs dims, t_max >= 10 and points_per_decade > 0".into()));
                }
                for &d in &p.dims {
                    let bi = BoundInputs::new(1.0, p.eta, p.gamma)
                        .with_budget(p.c)
                        .with_noise(d, p.sigma)
                        .with_form(p.form);
                    gap_curve(&bi, GapSetting::Private, &[1.0])?;
                }
            }
            Params::Fig3(p) => {
                for (name, cfg) in fig3_configs(p)? {
                    check_opt(&cfg, Some(p.gamma), name)?;
                }
                let bi = fig3_inputs(p);
                bound_robust(&bi)?;
                bound_robust_under_standard(&bi)?;
            }
            Params::Sweep(p) => {
                for f in p.train.files().into_iter().chain(p.test.files()) {
                    if !f.is_file() {
                        return Err(Error::Config(format!("data file {} does not exist", f.display())));
                    }
                }
                let c_grid = p.c_grid.values()?;
                let grid = p.grid.values()?;
                if c_grid.iter().chain(&grid).any(|v| *v < 0.0) {
                    return Err(Error::Config("grid values must be non-negative".into()));
                }
                let mut cfg = p.sweep_config(0).base;
                if self.kind == ExperimentKind::Fig9Sweep {
                    cfg.noise_mode = crate::optimizer::NoiseMode::Dpsgd;
                    if grid.iter().any(|e| *e <= 0.0) {
                        return Err(Error::Config("privacy budgets must be positive".into()));
                    }
                }
                check_opt(&cfg, None, "sweep")?;
                if p.eigen_iters == 0 || !(p.eigen_tol > 0.0) {
                    return Err(Error::Config("eigen_iters and eigen_tol must be positive".into()));
                }
            }
            Params::Bounds(p) => {
                if p.t_max == 0 {
                    return Err(Error::Config("t_max must be at least 1".into()));
                }
                let bi = p.inputs();
                for s in BoundSetting::ALL {
                    if let Err(e) = s.evaluate(&bi) {
                        warnings.push(format!("{}: {e}", s.name()));
                    }
                }
            }
            Params::Attack(p) => {
                let model = p
                    .model
                    .as_ref()
                    .ok_or_else(|| Error::Config("attack-eval needs params.model".into()))?;
                for f in p.data.files().into_iter().chain([model.as_path()]).chain(p.robust_model.as_deref()) {
                    if !f.is_file() {
                        return Err(Error::Config(format!("file {} does not exist", f.display())));
                    }
                }
                let budgets = p.budgets.values()?;
                if budgets.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::Config("budgets must be sorted".into()));
                }
                let mut attack = AttackConfig::new(budgets[budgets.len() - 1], p.norm, p.steps);
                attack.restarts = p.restarts;
                attack.step_size = p.step_size;
                warnings.extend(attack.validate()?);
            }
        }
        Ok(warnings)
    }
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
    results: toml::Table,
}

impl Output {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        let p = self.path(name);
        t.write(p)
    }

    fn plot(&mut self, csv: &str, name: &str, spec: &PlotSpec) -> Result<()> {
        let src = self.dir.join(csv);
        let p = self.path(name);
        render_plot(src, spec, p)
    }

    fn result(&mut self, key: &str, v: impl Into<toml::Value>) {
        self.results.insert(key.to_string(), v.into());
    }

    fn cleanup(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

/// Validates `config`, runs it and writes CSVs, plots and `manifest.toml`
/// into its output directory. On failure every file it wrote is removed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Artifacts> {
    let warnings = config.validate().map_err(|e| e.in_stage("validate"))?;
    let dir = config.output_dir.clone();
    let created = !dir.exists();
    fs::create_dir_all(&dir).map_err(|e| Error::from(e).in_stage("setup"))?;
    let mut out = Output {
        dir: dir.clone(),
        written: Vec::new(),
        results: toml::Table::new(),
    };
    let run = match &config.params {
        Params::Fig1(p) => run_fig1(p, &config.seeds, &mut out),
        Params::Fig2(p) => run_fig2(p, &mut out),
        Params::Fig3(p) => run_fig3(p, &mut out),
        Params::Sweep(p) => run_sweep(config.kind, p, config.seeds[0], &mut out),
        Params::Bounds(p) => run_bounds(p, &mut out),
        Params::Attack(p) => run_attack(p, config.seeds[0], &mut out),
    };
    let done = run.and_then(|()| write_manifest(config, &warnings, &mut out).map_err(|e| e.in_stage("manifest")));
    if let Err(e) = done {
        out.cleanup();
        if created {
            let _ = fs::remove_dir(&dir);
        }
        return Err(e);
    }
    let manifest = dir.join(MANIFEST);
    let files = out.written.into_iter().filter(|p| *p != manifest).collect();
    Ok(Artifacts { dir, files, manifest })
}

fn write_manifest(config: &ExperimentConfig, warnings: &[String], out: &mut Output) -> Result<()> {
    let params = config.params.to_toml()?;
    let mut defaults = toml::Table::new();
    for key in &config.defaulted {
        let mut v = toml::Value::Table(params.clone());
        for part in key.split('.') {
            v = match v.get(part) {
                Some(x) => x.clone(),
                None => break,
            };
        }
        defaults.insert(key.clone(), v);
    }
    let names: Vec<toml::Value> = out
        .written
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned().into()))
        .collect();
    let mut m = toml::Table::new();
    m.insert("kind".into(), config.kind.name().into());
    m.insert("software".into(), SOFTWARE.into());
    m.insert(
        "seeds".into(),
        toml::Value::Array(config.seeds.iter().map(|s| toml::Value::Integer(*s as i64)).collect()),
    );
    m.insert("outputs".into(), toml::Value::Array(names));
    m.insert(
        "warnings".into(),
        toml::Value::Array(warnings.iter().map(|w| w.clone().into()).collect()),
    );
    m.insert("params".into(), toml::Value::Table(params));
    m.insert("defaults".into(), toml::Value::Table(defaults));
    m.insert("results".into(), toml::Value::Table(out.results.clone()));
    let text = toml::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
    let p = out.path(MANIFEST);
    fs::write(p, text)?;
    Ok(())
}

const FIG1_SETTINGS: [BoundSetting; 4] = [
    BoundSetting::Nominal,
    BoundSetting::Private,
    BoundSetting::Robust,
    BoundSetting::RobustPrivate,
];

fn column_prefix(s: BoundSetting) -> &'static str {
    match s {
        BoundSetting::Nominal => "nominal",
        BoundSetting::Private => "private",
        BoundSetting::Robust => "robust",
        BoundSetting::RobustPrivate => "robust_private",
        BoundSetting::RobustUnderStandard => "robust_under_standard",
    }
}

fn fig1_inputs(p: &Fig1Params) -> BoundInputs<f64> {
    BoundInputs::new(1.0, p.eta, p.gamma)
        .with_budget(p.c)
        .with_noise(p.d, p.sigma)
        .with_form(p.form)
}

fn fig1_configs(p: &Fig1Params, seed: u64) -> Result<Vec<(&'static str, OptimizerConfig<f64>)>> {
    FIG1_SETTINGS
        .iter()
        .map(|&s| {
            let mut cfg = OptimizerConfig::new(p.eta, p.steps);
            if matches!(s, BoundSetting::Robust | BoundSetting::RobustPrivate) {
                cfg.spec = LossSpec::adversarial(p.c, p.norm)?;
            }
            if matches!(s, BoundSetting::Private | BoundSetting::RobustPrivate) {
                cfg.sigma = p.sigma;
            }
            cfg.first_step_eta = p.first_step_eta;
            cfg.seed = seed;
            Ok((column_prefix(s), cfg))
        })
        .collect()
}

fn run_fig1(p: &Fig1Params, seeds: &[u64], out: &mut Output) -> Result<()> {
    let data = generate_separable(p.d, p.n, p.gamma, p.data_seed).map_err(|e| e.in_stage("data"))?;
    let bi = fig1_inputs(p);
    let mut headers = vec!["t".to_string()];
    let mut curves: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for (k, &setting) in FIG1_SETTINGS.iter().enumerate() {
        let prefix = column_prefix(setting);
        headers.extend(["mean", "se", "bound"].iter().map(|s| format!("{prefix}_{s}")));
        // deterministic settings give identical runs, so one suffices
        let run_seeds: &[u64] = if p.sigma > 0.0 && matches!(setting, BoundSetting::Private | BoundSetting::RobustPrivate) {
            seeds
        } else {
            &seeds[..1]
        };
        let runs: Vec<Vec<f64>> = run_seeds
            .par_iter()
            .map(|&seed| {
                let (_, cfg) = fig1_configs(p, seed)?.swap_remove(k);
                let trace = train(&data, &cfg)?;
                let robust = cfg.spec.is_adversarial();
                Ok(trace
                    .rows
                    .iter()
                    .map(|r| if robust { r.adversarial_loss } else { r.nominal_loss })
                    .collect())
            })
            .collect::<Result<_>>()
            .map_err(|e: Error| e.in_stage(&format!("train:{prefix}")))?;
        let mut means = Vec::with_capacity(p.steps);
        let mut ses = Vec::with_capacity(p.steps);
        let mut bounds = Vec::with_capacity(p.steps);
        for t in 1..=p.steps {
            let v: Vec<f64> = runs.iter().map(|r| r[t]).collect();
            means.push(mean(&v));
            ses.push(if v.len() > 1 { standard_error(&v) } else { 0.0 });
            // bound(t) controls θ^{t+1}
            bounds.push(if t >= 2 {
                setting.evaluate(&bi.at((t - 1) as f64)).map_err(|e| e.in_stage("bounds"))?
            } else {
                f64::NAN
            });
        }
        out.result(&format!("{prefix}_runs"), run_seeds.len() as i64);
        curves.push((means, ses, bounds));
    }
    let hs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut table = Table::new(&hs);
    for i in 0..p.steps {
        let mut row = vec![(i + 1) as f64];
        for (m, s, b) in &curves {
            row.extend([m[i], s[i], b[i]]);
        }
        table.push(row);
    }
    out.table("fig1.csv", &table).map_err(|e| e.in_stage("write"))?;
    let series: Vec<String> = FIG1_SETTINGS
        .iter()
        .flat_map(|s| [format!("{}_mean", column_prefix(*s)), format!("{}_bound", column_prefix(*s))])
        .collect();
    let spec = PlotSpec {
        y: series,
        title: "Training loss and bounds".into(),
        y_label: Some("loss".into()),
        ..PlotSpec::new("t", &[])
    };
    out.plot("fig1.csv", "fig1.svg", &spec).map_err(|e| e.in_stage("plot"))
}

fn log_grid(t_max: f64, per_decade: usize) -> Vec<f64> {
    let decades = t_max.log10();
    let n = (decades * per_decade as f64).floor() as usize;
    let mut ts: Vec<f64> = (0..=n)
        .map(|k| {
            if k % per_decade == 0 {
                10f64.powi((k / per_decade) as i32)
            } else {
                10f64.powf(k as f64 / per_decade as f64)
            }
        })
        .collect();
    if ts.last().is_some_and(|l| *l < t_max) {
        ts.push(t_max);
    }
    ts
}

fn run_fig2(p: &Fig2Params, out: &mut Output) -> Result<()> {
    let ts = log_grid(p.t_max, p.points_per_decade);
    let base = BoundInputs::new(1.0, p.eta, p.gamma).with_budget(p.c).with_form(p.form);
    let nonprivate = gap_curve(&base, GapSetting::Nonprivate, &ts).map_err(|e| e.in_stage("bounds"))?;
    let mut headers = vec!["t".to_string(), "nonprivate_gap".to_string()];
    let mut cols = vec![nonprivate.iter().map(|x| x.1).collect::<Vec<_>>()];
    for &d in &p.dims {
        let bi = base.with_noise(d, p.sigma);
        let g = gap_curve(&bi, GapSetting::Private, &ts).map_err(|e| e.in_stage("bounds"))?;
        headers.push(format!("private_gap_d{d}"));
        cols.push(g.iter().map(|x| x.1).collect());
    }
    let hs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut table = Table::new(&hs);
    for (i, t) in ts.iter().enumerate() {
        let mut row = vec![*t];
        row.extend(cols.iter().map(|c| c[i]));
        table.push(row);
    }
    out.table("fig2.csv", &table).map_err(|e| e.in_stage("write"))?;
    let spec = PlotSpec {
        log_x: true,
        log_y: false,
        title: "Bound gap, robust minus standard".into(),
        y_label: Some("gap".into()),
        ..PlotSpec::new("t", &[])
    };
    out.plot("fig2.csv", "fig2.svg", &spec).map_err(|e| e.in_stage("plot"))
}

fn fig3_inputs(p: &Fig3Params) -> BoundInputs<f64> {
    BoundInputs::new(1.0, p.eta, p.gamma).with_budget(p.c).with_form(p.form)
}

fn fig3_configs(p: &Fig3Params) -> Result<Vec<(&'static str, OptimizerConfig<f64>)>> {
    let standard = OptimizerConfig::new(p.eta, p.steps);
    let mut adversarial = standard.clone();
    adversarial.spec = LossSpec::adversarial(p.c, p.norm)?;
    Ok(vec![("standard", standard), ("adversarial", adversarial)])
}

fn run_fig3(p: &Fig3Params, out: &mut Output) -> Result<()> {
    let data = generate_separable(p.d, p.n, p.gamma, p.data_seed).map_err(|e| e.in_stage("data"))?;
    let robust = LossSpec::adversarial(p.c, p.norm)?;
    let mut curves = Vec::new();
    for (name, cfg) in fig3_configs(p)? {
        let mut la = vec![f64::NAN; p.steps + 1];
        train_observed(&data, &cfg, |t, params| {
            la[t] = batch_loss(params, Batch::full(&data), &robust)?;
            Ok(())
        })
        .map_err(|e| e.in_stage(&format!("train:{name}")))?;
        curves.push(la);
    }
    let bi = fig3_inputs(p);
    let horizon = p.t_max.max(p.steps);
    let mut table = Table::new(&[
        "t",
        "standard_robust_loss",
        "adversarial_robust_loss",
        "robust_bound",
        "robust_under_standard_bound",
    ]);
    for t in 1..=horizon {
        let (rb, rs) = if t >= 2 {
            let at = bi.at((t - 1) as f64);
            (
                bound_robust(&at).map_err(|e| e.in_stage("bounds"))?,
                bound_robust_under_standard(&at).map_err(|e| e.in_stage("bounds"))?,
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        let emp = |c: &Vec<f64>| c.get(t).copied().unwrap_or(f64::NAN);
        table.push(vec![t as f64, emp(&curves[0]), emp(&curves[1]), rb, rs]);
    }
    out.table("fig3.csv", &table).map_err(|e| e.in_stage("write"))?;
    match robust_crossover(&bi, horizon).map_err(|e| e.in_stage("bounds"))? {
        Some(t) => out.result("crossover_t", t as i64),
        None => out.result("crossover_t", -1i64),
    }
    let spec = PlotSpec {
        log_x: true,
        title: "Robust loss under standard and adversarial training".into(),
        y_label: Some("robust loss".into()),
        ..PlotSpec::new("t", &[])
    };
    out.plot("fig3.csv", "fig3.svg", &spec).map_err(|e| e.in_stage("plot"))
}

fn run_sweep(kind: ExperimentKind, p: &SweepParams, seed: u64, out: &mut Output) -> Result<()> {
    let train_set = p.train.load().map_err(|e| e.in_stage("data:train"))?;
    let test = p.test.load().map_err(|e| e.in_stage("data:test"))?;
    let c_grid = p.c_grid.values()?;
    let grid = p.grid.values()?;
    let cfg = p.sweep_config(seed);
    out.result("train_examples", train_set.len() as i64);
    out.result("test_examples", test.len() as i64);
    let rows = if kind == ExperimentKind::Fig9Sweep {
        let sens = Sensitivity::nominal(1.0);
        let sigmas = grid
            .iter()
            .map(|&e| accountant_sigma(e, p.delta, p.steps, &sens, p.lambda_max).map(|s| toml::Value::Float(s.sigma)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("accountant"))?;
        out.result("noise_multipliers", toml::Value::Array(sigmas));
        privacy_smoothness_curve(&train_set, &test, &c_grid, &grid, &cfg)
    } else {
        clipping_smoothness_curve(&train_set, &test, &c_grid, &grid, &cfg)
    }
    .map_err(|e| e.in_stage("sweep"))?;
    out.result("diverged_cells", rows.iter().filter(|r| r.diverged).count() as i64);
    let name = kind.csv_name();
    let path = out.path(name);
    write_sweep_csv(&rows, path).map_err(|e| e.in_stage("write"))?;
    let spec = PlotSpec {
        log_x: true,
        title: "Test accuracy against curvature".into(),
        x_label: Some("lambda_max".into()),
        log_y: false,
        ..PlotSpec::new("lambda_max", &["test_accuracy"])
    };
    out.plot(name, &name.replace(".csv", ".svg"), &spec).map_err(|e| e.in_stage("plot"))
}

fn run_bounds(p: &BoundsParams, out: &mut Output) -> Result<()> {
    let bi = p.inputs();
    let headers: Vec<String> = std::iter::once("t".to_string())
        .chain(BoundSetting::ALL.iter().map(|s| column_prefix(*s).to_string()))
        .collect();
    let hs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut table = Table::new(&hs);
    for t in 1..=p.t_max {
        let at = bi.at(t as f64);
        let mut row = vec![t as f64];
        // settings outside their regime are left blank
        row.extend(BoundSetting::ALL.iter().map(|s| s.evaluate(&at).unwrap_or(f64::NAN)));
        table.push(row);
    }
    out.table("bounds.csv", &table).map_err(|e| e.in_stage("write"))?;
    let spec = PlotSpec {
        log_x: true,
        title: "Loss bounds".into(),
        ..PlotSpec::new("t", &[])
    };
    out.plot("bounds.csv", "bounds.svg", &spec).map_err(|e| e.in_stage("plot"))
}

fn run_attack(p: &AttackParams, seed: u64, out: &mut Output) -> Result<()> {
    let data = p.data.load().map_err(|e| e.in_stage("data"))?;
    let model_path = p.model.as_ref().ok_or_else(|| Error::Config("attack-eval needs params.model".into()))?;
    let model = ModelParams::load_toml(model_path).map_err(|e| e.in_stage("model"))?;
    if !model.matches(&data) {
        return Err(Error::Consistency("model does not match the data".into()).in_stage("model"));
    }
    let budgets = p.budgets.values()?;
    let mut attack = AttackConfig::new(budgets[budgets.len() - 1], p.norm, p.steps).with_restarts(p.restarts, seed);
    attack.step_size = p.step_size;
    let clean = clean_accuracy(&model, &data).map_err(|e| e.in_stage("attack"))?;
    out.result("clean_accuracy", clean);
    let curve = robust_accuracy_curve(&model, &data, &budgets, &attack).map_err(|e| e.in_stage("attack"))?;
    let improvement = match &p.robust_model {
        Some(rp) => {
            let robust = ModelParams::load_toml(rp).map_err(|e| e.in_stage("model"))?;
            Some(improvement_curve(&model, &robust, &data, &budgets, &attack).map_err(|e| e.in_stage("attack"))?)
        }
        None => None,
    };
    let mut headers = vec!["c", "robust_accuracy"];
    if improvement.is_some() {
        headers.push("improvement");
    }
    let mut table = Table::new(&headers);
    for (i, (c, acc)) in curve.iter().enumerate() {
        let mut row = vec![*c, *acc];
        if let Some(imp) = &improvement {
            row.push(imp[i].1);
        }
        table.push(row);
    }
    out.table("attack.csv", &table).map_err(|e| e.in_stage("write"))?;
    let spec = PlotSpec {
        log_y: false,
        title: "Robust accuracy under PGD".into(),
        ..PlotSpec::new("c", &["robust_accuracy"])
    };
    out.plot("attack.csv", "attack.svg", &spec).map_err(|e| e.in_stage("plot"))
}
