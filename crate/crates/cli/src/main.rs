//! `rpopt`: data generation, training, bounds, attacks and experiments.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure,
//! 3 `verify` found violations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rpopt_core::attacks::{clean_accuracy, improvement_curve, robust_accuracy_curve, AttackConfig};
use rpopt_core::bounds::{
    accountant_epsilon, accountant_sigma, BoundForm, BoundInputs, BoundSetting, Sensitivity,
};
use rpopt_core::data::{generate_separable, load_csv, load_idx};
use rpopt_core::losses::{LossSpec, ModelParams, PerturbationNorm};
use rpopt_core::optimizer::{train, validate_config, NoiseMode, OptimizerConfig, Severity};
use rpopt_core::report::{
    render_plot, run_experiment, verify_report, DataSource, ExperimentConfig, ExperimentKind, Grid, Params, PlotSpec,
    SweepParams, Table,
};
use rpopt_core::{Dataset64, Error};

const SEED_ENV: &str = "RPOPT_SEED";

#[derive(Parser)]
#[command(name = "rpopt", version, about = "Robust and private optimisation of logistic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a linearly separable dataset and write it as CSV.
    GenData(GenDataArgs),
    /// Train a model and write its loss trace.
    Train(TrainArgs),
    /// Evaluate loss bounds over a range of iterations.
    Bounds(BoundsArgs),
    /// Robust accuracy of a saved model under PGD.
    AttackEval(AttackArgs),
    /// Curvature sweep over (c, k) or (c, ε) on IDX data.
    Sweep(SweepArgs),
    /// Run an experiment from a TOML config.
    Experiment(ExperimentArgs),
    /// Render CSV columns as an SVG line plot.
    Plot(PlotArgs),
    /// Check an experiment's artifacts.
    Verify(VerifyArgs),
    /// Privacy accounting: σ to ε or ε to σ.
    Dp(DpArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    Linf,
}

impl From<NormArg> for PerturbationNorm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L2 => PerturbationNorm::L2,
            NormArg::Linf => PerturbationNorm::Linf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Appendix,
    Table,
}

impl From<FormArg> for BoundForm {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Appendix => BoundForm::Appendix,
            FormArg::Table => BoundForm::Table,
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Data from a CSV file or an IDX image/label pair.
#[derive(Args)]
struct DataArgs {
    /// CSV with a header row.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Use at most this many IDX examples.
    #[arg(long)]
    limit: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset64, Error> {
        match (&self.data, &self.images, &self.labels) {
            (Some(p), _, _) => load_csv(p, &self.label_column),
            (None, Some(i), Some(l)) => load_idx(i, l, self.limit.unwrap_or(usize::MAX)),
            _ => Err(Error::InvalidArgument("give --data or --images with --labels".into())),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Adversarial budget; 0 trains on the standard loss.
    #[arg(long, default_value_t = 0.0)]
    c: f64,
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    norm: NormArg,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long)]
    clip_k: Option<f64>,
    /// Scale noise by the clip threshold over the batch size.
    #[arg(long)]
    dpsgd: bool,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    first_step_eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    run_id: u64,
    #[arg(long, default_value_t = 1)]
    trace_every: usize,
    #[arg(long)]
    stop_grad_norm: Option<f64>,
    /// Trace CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also save the final model as TOML.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// One setting, or all when omitted.
    #[arg(long)]
    setting: Option<String>,
    #[arg(long, default_value_t = 1000)]
    t_max: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    c: f64,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, value_enum, default_value_t = FormArg::Appendix)]
    form: FormArg,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    /// Adds an improvement column relative to `--model`.
    #[arg(long)]
    robust_model: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated nondecreasing budgets.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2, 0.3])]
    budgets: Vec<f64>,
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    norm: NormArg,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    /// Clipping threshold grid.
    Clip,
    /// Privacy budget grid.
    Privacy,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    mode: SweepMode,
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    /// `from:to:points` on a log scale.
    #[arg(long, value_parser = parse_grid)]
    c_grid: Option<Grid>,
    /// Clip thresholds or budgets ε, `from:to:points`.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<Grid>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, n] => Ok(Grid::log(
            a.parse().map_err(|_| format!("bad grid start `{a}`"))?,
            b.parse().map_err(|_| format!("bad grid end `{b}`"))?,
            n.parse().map_err(|_| format!("bad point count `{n}`"))?,
        )),
        _ => s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad grid value `{v}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(Grid::Values),
    }
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Validate only.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct PlotArgs {
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    x: String,
    /// Series columns; all non-x columns when omitted.
    #[arg(long)]
    y: Vec<String>,
    #[arg(long)]
    log_x: bool,
    /// Linear y axis instead of the default log axis.
    #[arg(long)]
    linear_y: bool,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long)]
    x_label: Option<String>,
    #[arg(long)]
    y_label: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    dir: PathBuf,
}

#[derive(Args)]
struct DpArgs {
    #[arg(long, conflicts_with = "epsilon", required_unless_present = "epsilon")]
    sigma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long)]
    steps: usize,
    /// Per-example gradient norm bound.
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    /// Adversarial radius; 0 gives the standard sensitivity.
    #[arg(long, default_value_t = 0.0)]
    radius: f64,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    norm: NormArg,
    #[arg(long, default_value_t = 1024)]
    lambda_max: usize,
}

enum Failure {
    Validation(String),
    Runtime(String),
    Violations,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult = Result<(), Failure>;

fn seed_override() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Validation(format!("{SEED_ENV}={v} is not a non-negative integer"))),
        Err(_) => Ok(None),
    }
}

fn seed_or(default: u64) -> Result<u64, Failure> {
    Ok(seed_override()?.unwrap_or(default))
}

fn gen_data(a: GenDataArgs) -> CliResult {
    let ds = generate_separable::<f64>(a.d, a.n, a.gamma, seed_or(a.seed)?)?;
    parent_dir(&a.out)?;
    ds.save_csv(&a.out)?;
    eprintln!("wrote {} points in {} dimensions to {}", ds.len(), ds.dim(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let data = a.data.load()?;
    let mut cfg = OptimizerConfig::new(a.eta, a.steps);
    if a.c > 0.0 {
        cfg.spec = LossSpec::adversarial(a.c, a.norm.into())?;
    } else {
        cfg.spec.norm = a.norm.into();
    }
    cfg.sigma = a.sigma;
    cfg.clip_k = a.clip_k;
    cfg.noise_mode = if a.dpsgd { NoiseMode::Dpsgd } else { NoiseMode::Theory };
    cfg.batch_size = a.batch_size;
    cfg.first_step_eta = a.first_step_eta;
    cfg.seed = seed_or(a.seed)?;
    cfg.run_id = a.run_id;
    cfg.trace_every = a.trace_every;
    cfg.stop_grad_norm = a.stop_grad_norm;
    for issue in validate_config(&cfg, data.margin()) {
        match issue.severity {
            Severity::Error => return Err(Failure::Validation(issue.message)),
            Severity::Warning => eprintln!("warning: {}", issue.message),
        }
    }
    let trace = train(&data, &cfg)?;
    parent_dir(&a.out)?;
    trace.write_csv(&a.out)?;
    if let Some(p) = &a.model_out {
        parent_dir(p)?;
        trace.params.save_toml(p)?;
    }
    let last = trace.final_row();
    println!(
        "t={} loss={:.6} adversarial_loss={:.6} theta_norm={:.6} grad_norm={:.3e}",
        last.t, last.nominal_loss, last.adversarial_loss, last.theta_norm, last.grad_norm
    );
    Ok(())
}

fn bounds_cmd(a: BoundsArgs) -> CliResult {
    if a.t_max == 0 {
        return Err(Failure::Validation("t-max must be at least 1".into()));
    }
    let settings = match &a.setting {
        Some(s) => vec![BoundSetting::parse(s)?],
        None => BoundSetting::ALL.to_vec(),
    };
    let inputs = BoundInputs::new(1.0, a.eta, a.gamma)
        .with_budget(a.c)
        .with_noise(a.d, a.sigma)
        .with_form(a.form.into());
    let mut live = Vec::new();
    let mut first_err = None;
    for s in settings {
        match s.evaluate(&inputs) {
            Ok(_) => live.push(s),
            Err(e) => {
                eprintln!("skipping {}: {e}", s.name());
                first_err.get_or_insert(e);
            }
        }
    }
    if live.is_empty() {
        return Err(first_err.map_or_else(|| Failure::Validation("no bound settings".into()), Failure::from));
    }
    let headers: Vec<String> = std::iter::once("t".to_string())
        .chain(live.iter().map(|s| s.name().replace('-', "_")))
        .collect();
    let hs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut table = Table::new(&hs);
    for t in 1..=a.t_max {
        let at = inputs.at(t as f64);
        let mut row = vec![t as f64];
        for s in &live {
            row.push(s.evaluate(&at)?);
        }
        table.push(row);
    }
    write_table(&table, a.out.as_deref())
}

/// Creates the parent directory of an output file.
fn parent_dir(path: &Path) -> Result<(), Error> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(std::fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

fn write_table(table: &Table, out: Option<&Path>) -> CliResult {
    match out {
        Some(p) => {
            parent_dir(p)?;
            table.write(p)?
        }
        None => {
            println!("{}", table.headers.join(","));
            for r in &table.rows {
                let cells: Vec<String> = r.iter().map(|v| rpopt_core::report::format_value(*v)).collect();
                println!("{}", cells.join(","));
            }
        }
    }
    Ok(())
}

fn attack_cmd(a: AttackArgs) -> CliResult {
    let data = a.data.load()?;
    let model = ModelParams::<f64>::load_toml(&a.model)?;
    if !model.matches(&data) {
        return Err(Failure::Validation("model does not match the data".into()));
    }
    if a.budgets.is_empty() {
        return Err(Failure::Validation("no budgets given".into()));
    }
    let mut attack = AttackConfig::new(a.budgets[a.budgets.len() - 1], a.norm.into(), a.steps)
        .with_restarts(a.restarts, seed_or(a.seed)?);
    attack.step_size = a.step_size;
    for w in attack.validate()? {
        eprintln!("warning: {w}");
    }
    eprintln!("clean accuracy {:.4}", clean_accuracy(&model, &data)?);
    let curve = robust_accuracy_curve(&model, &data, &a.budgets, &attack)?;
    let improvement = match &a.robust_model {
        Some(p) => {
            let robust = ModelParams::<f64>::load_toml(p)?;
            Some(improvement_curve(&model, &robust, &data, &a.budgets, &attack)?)
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
    write_table(&table, a.out.as_deref())
}

fn sweep_cmd(a: SweepArgs) -> CliResult {
    let (kind, mut p) = match a.mode {
        SweepMode::Clip => (ExperimentKind::Fig8Sweep, SweepParams::fig8()),
        SweepMode::Privacy => (ExperimentKind::Fig9Sweep, SweepParams::fig9()),
    };
    p.train = DataSource::Idx {
        images: a.train_images,
        labels: a.train_labels,
        limit: None,
    };
    p.test = DataSource::Idx {
        images: a.test_images,
        labels: a.test_labels,
        limit: None,
    };
    if let Some(g) = a.c_grid {
        p.c_grid = g;
    }
    if let Some(g) = a.grid {
        p.grid = g;
    }
    if let Some(s) = a.steps {
        p.steps = s;
    }
    p.workers = a.workers;
    let mut cfg = ExperimentConfig::new(kind, vec![seed_or(a.seed)?], a.out_dir);
    cfg.params = Params::Sweep(p);
    let art = run_experiment(&cfg)?;
    report_artifacts(&art);
    Ok(())
}

fn report_artifacts(art: &rpopt_core::report::Artifacts) {
    for f in &art.files {
        println!("{}", f.display());
    }
    println!("{}", art.manifest.display());
}

fn experiment_cmd(a: ExperimentArgs) -> CliResult {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(seed) = seed_override()? {
        let n = cfg.seeds.len().max(1) as u64;
        cfg.seeds = (seed..seed + n).collect();
    }
    if a.check {
        for w in cfg.validate()? {
            eprintln!("warning: {w}");
        }
        println!("config ok");
        return Ok(());
    }
    let art = run_experiment(&cfg)?;
    report_artifacts(&art);
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> CliResult {
    let spec = PlotSpec {
        y: a.y,
        log_x: a.log_x,
        log_y: !a.linear_y,
        title: a.title,
        x_label: a.x_label,
        y_label: a.y_label,
        ..PlotSpec::new(&a.x, &[])
    };
    parent_dir(&a.out)?;
    render_plot(&a.csv, &spec, &a.out)?;
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> CliResult {
    let report = verify_report(&a.dir);
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Violations)
    }
}

fn dp_cmd(a: DpArgs) -> CliResult {
    let sens = Sensitivity::robust(a.lipschitz, a.radius, a.d, a.norm.into());
    println!("sensitivity {}", sens.value());
    match (a.sigma, a.epsilon) {
        (Some(sigma), _) => {
            let r = accountant_epsilon(sigma, a.steps, &sens, a.delta, a.lambda_max)?;
            println!("epsilon {} (order {})", r.epsilon, r.lambda);
        }
        (None, Some(eps)) => {
            let r = accountant_sigma(eps, a.delta, a.steps, &sens, a.lambda_max)?;
            println!("sigma {} (achieved epsilon {} at order {})", r.sigma, r.achieved.epsilon, r.achieved.lambda);
            println!("closed-form sigma {}", r.closed_form_sigma);
        }
        (None, None) => return Err(Failure::Validation("give --sigma or --epsilon".into())),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Bounds(a) => bounds_cmd(a),
        Command::AttackEval(a) => attack_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
        Command::Plot(a) => plot_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Dp(a) => dp_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Violations) => ExitCode::from(3),
    }
}
