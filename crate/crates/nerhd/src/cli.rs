//! Command-line front end. Every command writes tidy CSV tables and a JSON
//! manifest of its settings into the output directory, or prints its main
//! table to stdout when no directory is given.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nerhd_core::gee::{self, FitControl, GeeConfig};
use nerhd_core::mle;
use nerhd_core::mq::{estimate_taus, TauEstimates, TauGrid};
use nerhd_core::predict::{self, MqTau};
use nerhd_core::sim::{
    self, DesignOptions, EstimationOptions, Predictor, RmseEstimator, ScenarioConfig, ScenarioKind, TauMode,
};
use nerhd_core::uncertainty::{self, GeeEbp, MeasureSpec, UncertaintyEstimate};
use nerhd_core::{Error as CoreError, FitResult, PsiBase, Sample};

use crate::diagnostics::{cv_ratio, direct_variances, wald_gof};
use crate::io::{self, fmt_num, IoError};

#[derive(Debug, Parser)]
#[command(name = "nerhd", version, about = "Small-area estimation with area-specific slopes and sampling variances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model and write per-area parameters.
    Fit(FitArgs),
    /// Compute every small-area predictor.
    Predict(FitArgs),
    /// Estimate an uncertainty measure of the EBP.
    Uncertainty(UncertaintyArgs),
    /// Run a model-based scenario or a design-based study on a population file.
    Simulate(SimulateArgs),
    /// Goodness-of-fit and CV-ratio diagnostics of the EBP against direct estimates.
    Diagnose(UncertaintyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PsiArg {
    Huber,
    Identity,
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MeasureArg {
    Rmse,
    Rrmse,
    Mse,
    LogMse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Naive,
    Bootstrap,
    Mcjack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScenarioArg {
    S00,
    Sbeta0,
    Sbetasigma,
    Outlier,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ModelArgs {
    /// Base influence function.
    #[arg(long, value_enum, default_value = "huber")]
    psi: PsiArg,
    /// Huber tuning constant (GEE and M-quantile fits).
    #[arg(long, default_value_t = nerhd_core::influence::HUBER_C)]
    c: f64,
    /// Area tilts: `fixed:<v>` or `elb`.
    #[arg(long, default_value = "elb")]
    tau: String,
    /// M-quantile grid `min:max:step`.
    #[arg(long, default_value = "0.02:0.98:0.02")]
    grid: String,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 200)]
    max_iter: usize,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct DataArgs {
    /// Unit file: area_id, y, x1..xp, optional k.
    #[arg(long)]
    units: PathBuf,
    /// Area file: area_id, N, Xbar1..Xbarp, optional h.
    #[arg(long)]
    areas: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct UncertaintyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "rmse")]
    measure: MeasureArg,
    #[arg(long, value_enum, default_value = "bootstrap")]
    method: MethodArg,
    /// Bootstrap replicates.
    #[arg(long = "R", default_value_t = 100)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "s00")]
    scenario: ScenarioArg,
    /// Fixed population file (area_id, y, x1..xp) for a design-based study.
    #[arg(long)]
    population: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Population size per area.
    #[arg(long = "N", default_value_t = 100)]
    big_n: usize,
    /// Sample size(s) per area, comma separated.
    #[arg(long = "n", value_delimiter = ',', default_value = "4")]
    n: Vec<usize>,
    /// Monte Carlo replicates.
    #[arg(long = "T", default_value_t = 200)]
    t: usize,
    /// RMSE estimators to evaluate, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    method: Vec<MethodArg>,
    #[arg(long = "R", default_value_t = 100)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Core(#[from] CoreError),
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Io(IoError::Write(_)) => 3,
            AppError::Io(_) => 2,
            AppError::Core(e) => match e {
                CoreError::Config(_) => 1,
                CoreError::Invalid(_) | CoreError::Unsupported(_) => 2,
                _ => 3,
            },
        }
    }
}

type AppResult<T> = Result<T, AppError>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage, 2 data validation, 3 numerical
/// failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let workers = match &cli.command {
        Command::Fit(a) | Command::Predict(a) => a.model.workers,
        Command::Uncertainty(a) | Command::Diagnose(a) => a.model.workers,
        Command::Simulate(a) => a.model.workers,
    };
    let result = match workers {
        Some(0) => Err(AppError::Usage("--workers must be at least 1".into())),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(AppError::Usage(format!("cannot start {k} workers: {e}"))),
        },
        None => dispatch(&cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let AppError::Core(CoreError::Invalid(v)) = &e {
                for x in v {
                    eprintln!("  {x}");
                }
            }
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command) -> AppResult<()> {
    match cmd {
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Uncertainty(a) => uncertainty_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Diagnose(a) => diagnose_cmd(a),
    }
}

/// Parsed estimation settings.
struct Settings {
    psi: PsiBase,
    c: f64,
    tau: TauMode,
    grid: TauGrid,
    control: FitControl,
}

impl Settings {
    fn gee(&self) -> GeeConfig {
        GeeConfig { psi: self.psi, control: self.control }
    }
}

fn settings(m: &ModelArgs) -> AppResult<Settings> {
    if !(m.c > 0.0 && m.c.is_finite()) {
        return Err(AppError::Usage(format!("--c must be positive, got {}", m.c)));
    }
    let psi = match m.psi {
        PsiArg::Huber => PsiBase::Huber { c: m.c },
        PsiArg::Identity => PsiBase::Identity,
        PsiArg::Sign => PsiBase::Sign,
    };
    let tau = match m.tau.as_str() {
        "elb" => TauMode::Elb,
        s => {
            let v = s
                .strip_prefix("fixed:")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| AppError::Usage(format!("--tau must be `fixed:<v>` or `elb`, got `{s}`")))?;
            if !(v > 0.0 && v < 1.0) {
                return Err(AppError::Usage(format!("fixed tau must lie in (0, 1), got {v}")));
            }
            TauMode::Fixed(v)
        }
    };
    let parts: Vec<f64> = m.grid.split(':').map(str::parse).collect::<Result<_, _>>().map_err(|_| bad_grid(&m.grid))?;
    let [lo, hi, step] = parts[..] else {
        return Err(bad_grid(&m.grid));
    };
    let grid = TauGrid::from_range(lo, hi, step).map_err(|e| AppError::Usage(e.to_string()))?;
    let control = FitControl { tol: m.tol, max_iter: m.max_iter, ..FitControl::default() };
    control.check().map_err(|e| AppError::Usage(e.to_string()))?;
    Ok(Settings { psi, c: m.c, tau, grid, control })
}

fn bad_grid(s: &str) -> AppError {
    AppError::Usage(format!("--grid must be `min:max:step`, got `{s}`"))
}

fn load(d: &DataArgs) -> AppResult<Sample> {
    let ds = io::read_unit_csv(&d.units, &d.areas)?;
    Ok(Sample::from_dataset(&ds)?)
}

/// Tilts and (when estimated) the M-quantile summaries behind them.
fn taus(sample: &Sample, s: &Settings) -> AppResult<(Vec<f64>, Option<TauEstimates>)> {
    match s.tau {
        TauMode::Fixed(v) => Ok((vec![v; sample.m()], None)),
        TauMode::Elb => {
            let te = estimate_taus(sample, &s.grid, s.c)?;
            Ok((te.elb_tau.clone(), Some(te)))
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a C,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

/// Where a command's tables go: files in a directory, or stdout for the main
/// table only.
struct Sink {
    dir: Option<PathBuf>,
    written: Vec<String>,
}

impl Sink {
    fn new(dir: &Option<PathBuf>) -> AppResult<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| IoError::Write(format!("{}: {e}", d.display())))?;
        }
        Ok(Self { dir: dir.clone(), written: Vec::new() })
    }

    /// Writes `name`; `main` tables go to stdout when there is no directory.
    fn table<F>(&mut self, name: &str, main: bool, f: F) -> AppResult<()>
    where
        F: FnOnce(&mut dyn Write) -> io::Result<()>,
    {
        match &self.dir {
            Some(d) => {
                let path = d.join(name);
                let file = File::create(&path).map_err(|e| IoError::Write(format!("{}: {e}", path.display())))?;
                let mut w = BufWriter::new(file);
                f(&mut w)?;
                w.flush().map_err(|e| IoError::Write(e.to_string()))?;
                self.written.push(name.to_string());
            }
            None if main => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                f(&mut lock)?;
            }
            None => {}
        }
        Ok(())
    }

    fn manifest<C: Serialize>(self, command: &str, config: &C, summary: serde_json::Value) -> AppResult<()> {
        let Some(d) = &self.dir else {
            return Ok(());
        };
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            outputs: self.written.clone(),
            summary,
        };
        let path = d.join("manifest.json");
        let text = serde_json::to_string_pretty(&m).map_err(|e| IoError::Write(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| IoError::Write(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

fn fit_summary(fit: &FitResult) -> serde_json::Value {
    serde_json::json!({
        "iterations": fit.iterations,
        "converged": fit.converged,
        "max_param_delta": fit.max_param_delta,
        "bracket_warnings": fit.bracket_warnings,
        "beta0": fit.beta0(),
        "sigma2_gamma": fit.sigma2_gamma(),
    })
}

fn warn_fit(fit: &FitResult) {
    if !fit.converged {
        eprintln!("warning: GEE fit stopped after {} iterations (change {:.3e})", fit.iterations, fit.max_param_delta);
    }
    if fit.bracket_warnings > 0 {
        eprintln!("warning: {} variance solve(s) found no root and were clamped", fit.bracket_warnings);
    }
}

fn fit_cmd(a: &FitArgs) -> AppResult<()> {
    let s = settings(&a.model)?;
    let sample = load(&a.data)?;
    let (tau, _) = taus(&sample, &s)?;
    let fit = gee::fit(&sample, &s.gee(), &tau)?;
    warn_fit(&fit);
    let mut sink = Sink::new(&a.model.out)?;
    sink.table("fit.csv", true, |w| io::write_fit(w, &sample, &fit))?;
    sink.manifest("fit", a, fit_summary(&fit))
}

fn predict_cmd(a: &FitArgs) -> AppResult<()> {
    let s = settings(&a.model)?;
    let sample = load(&a.data)?;
    let (tau, te) = taus(&sample, &s)?;
    let te = match te {
        Some(te) => te,
        None => estimate_taus(&sample, &s.grid, s.c)?,
    };
    let fit = gee::fit(&sample, &s.gee(), &tau)?;
    warn_fit(&fit);
    // The likelihood fit needs unit multipliers and two units per area.
    let mle_fit = if sample.unit_multipliers() && sample.areas().iter().all(|x| x.n() >= 2) {
        Some(mle::fit_mle(&sample, &s.control)?)
    } else {
        None
    };
    let bhf = mle::fit_bhf_reml(&sample)?;
    let set = predict::predictor_set(&sample, &fit, mle_fit.as_ref(), &bhf, &te, MqTau::Elb, s.c)?;
    let mut sink = Sink::new(&a.model.out)?;
    sink.table("predictions.csv", true, |w| io::write_predictions(w, &set))?;
    sink.table("fit.csv", false, |w| io::write_fit(w, &sample, &fit))?;
    sink.manifest("predict", a, fit_summary(&fit))
}

fn measure(m: MeasureArg) -> MeasureSpec {
    match m {
        MeasureArg::Rmse => MeasureSpec::RMSE,
        MeasureArg::Rrmse => MeasureSpec::RRMSE,
        MeasureArg::Mse => MeasureSpec::MSE,
        MeasureArg::LogMse => MeasureSpec::LOG_MSE,
    }
}

fn estimate(sample: &Sample, fit: &FitResult, s: &Settings, a: &UncertaintyArgs, spec: MeasureSpec) -> AppResult<UncertaintyEstimate> {
    let proc = GeeEbp { config: s.gee() };
    Ok(match a.method {
        MethodArg::Naive => {
            if spec != MeasureSpec::RMSE && spec != MeasureSpec::MSE {
                return Err(AppError::Usage("the naive method estimates only rmse or mse".into()));
            }
            let mut est = uncertainty::naive_measure(sample, fit, &predict::ebp(sample, fit));
            if spec == MeasureSpec::MSE {
                est.values.iter_mut().for_each(|v| *v *= *v);
                est.measure = spec;
            }
            est
        }
        MethodArg::Bootstrap => uncertainty::bootstrap_measure(sample, fit, &proc, spec, a.r, a.seed)?,
        MethodArg::Mcjack => uncertainty::mcjack_measure(sample, fit, &proc, spec, a.r, a.seed)?,
    })
}

fn uncertainty_cmd(a: &UncertaintyArgs) -> AppResult<()> {
    let s = settings(&a.model)?;
    let sample = load(&a.data)?;
    let (tau, _) = taus(&sample, &s)?;
    let fit = gee::fit(&sample, &s.gee(), &tau)?;
    warn_fit(&fit);
    let est = estimate(&sample, &fit, &s, a, measure(a.measure))?;
    let ids: Vec<String> = sample.areas().iter().map(|x| x.id.clone()).collect();
    let point = predict::ebp(&sample, &fit);
    let mut sink = Sink::new(&a.model.out)?;
    sink.table("uncertainty.csv", true, |w| io::write_uncertainty(w, &ids, &point, &est))?;
    let summary = serde_json::json!({ "fit": fit_summary(&fit), "failed_replicates": est.failed, "seed": est.seed });
    sink.manifest("uncertainty", a, summary)
}

fn diagnose_cmd(a: &UncertaintyArgs) -> AppResult<()> {
    let s = settings(&a.model)?;
    let sample = load(&a.data)?;
    let (tau, _) = taus(&sample, &s)?;
    let fit = gee::fit(&sample, &s.gee(), &tau)?;
    warn_fit(&fit);
    let est = estimate(&sample, &fit, &s, a, MeasureSpec::RMSE)?;
    let direct = predict::direct(&sample);
    let ebp = predict::ebp(&sample, &fit);
    let var_direct = direct_variances(&sample);
    let mse: Vec<f64> = est.values.iter().map(|r| r * r).collect();
    let wald = wald_gof(&direct, &ebp, &var_direct, &mse);
    let cv = cv_ratio(&direct, &var_direct, &ebp, &est.values);
    let excluded_ids = |idx: &[usize]| idx.iter().map(|&i| sample.area(i).id.clone()).collect::<Vec<_>>();

    let mut sink = Sink::new(&a.model.out)?;
    sink.table("diagnostics.csv", true, |w| {
        let mut out = csv::Writer::from_writer(w);
        let wr = |out: &mut csv::Writer<_>, row: Vec<String>| out.write_record(row).map_err(|e| IoError::Write(e.to_string()));
        wr(&mut out, ["area_id", "n", "direct", "var_direct", "ebp", "rmse_ebp", "cv_ratio"].map(String::from).to_vec())?;
        for (i, area) in sample.areas().iter().enumerate() {
            wr(
                &mut out,
                vec![
                    area.id.clone(),
                    area.n().to_string(),
                    fmt_num(direct[i]),
                    var_direct[i].map(fmt_num).unwrap_or_default(),
                    fmt_num(ebp[i]),
                    fmt_num(est.values[i]),
                    cv.ratios[i].map(fmt_num).unwrap_or_default(),
                ],
            )?;
        }
        out.flush().map_err(|e| IoError::Write(e.to_string()))
    })?;
    match &wald {
        Some(w) => eprintln!(
            "Wald W = {:.4} on {} df, 0.95 critical value {:.4}: {}",
            w.statistic,
            w.df,
            w.critical,
            if w.consistent() { "not statistically different from the direct estimates" } else { "significantly different from the direct estimates" }
        ),
        None => eprintln!("Wald statistic unavailable: no area has a direct variance"),
    }
    eprintln!("mean CV ratio (direct / EBP) = {:.4}", cv.mean);
    let summary = serde_json::json!({
        "wald": wald.as_ref().map(|w| serde_json::json!({
            "statistic": w.statistic,
            "df": w.df,
            "critical_95": w.critical,
            "consistent": w.consistent(),
            "excluded": excluded_ids(&w.excluded),
        })),
        "cv_ratio": { "mean": cv.mean, "excluded": excluded_ids(&cv.excluded) },
        "method": a.method,
        "seed": a.seed,
    });
    sink.manifest("diagnose", a, summary)
}

fn estimation_options(a: &SimulateArgs, s: &Settings) -> EstimationOptions {
    EstimationOptions {
        predictors: Predictor::ALL.to_vec(),
        rmse_estimators: a
            .method
            .iter()
            .map(|m| match m {
                MethodArg::Naive => RmseEstimator::Naive,
                MethodArg::Bootstrap => RmseEstimator::Bootstrap,
                MethodArg::Mcjack => RmseEstimator::McJack,
            })
            .collect(),
        bootstrap_replicates: a.r,
        psi: s.psi,
        mq_c: s.c,
        tau: s.tau,
        grid: s.grid.clone(),
        control: s.control,
        record_parameters: true,
    }
}

fn simulate_cmd(a: &SimulateArgs) -> AppResult<()> {
    let s = settings(&a.model)?;
    if a.n.is_empty() {
        return Err(AppError::Usage("--n needs at least one sample size".into()));
    }
    let mut opts = estimation_options(a, &s);
    let mut sink = Sink::new(&a.model.out)?;
    if let Some(path) = &a.population {
        let pop = io::read_population_csv(path)?;
        if !opts.rmse_estimators.is_empty() {
            return Err(AppError::Usage("RMSE estimators are evaluated only in model-based runs".into()));
        }
        opts.record_parameters = false;
        let tables = sim::run_design_based(&pop, &DesignOptions { sample_sizes: a.n.clone(), replicates: a.t, seed: a.seed, estimation: opts })?;
        sink.table("design.csv", true, |w| io::write_design(w, &tables))?;
        let failed: usize = tables.iter().map(|t| t.failed).sum();
        return sink.manifest("simulate", a, serde_json::json!({ "design_based": true, "failed_replicates": failed }));
    }
    let kind = match a.scenario {
        ScenarioArg::S00 => ScenarioKind::S00,
        ScenarioArg::Sbeta0 => ScenarioKind::SBeta0,
        ScenarioArg::Sbetasigma => ScenarioKind::SBetaSigma,
        ScenarioArg::Outlier => ScenarioKind::OutlierMixture,
    };
    let mut runs = Vec::new();
    for &n in &a.n {
        let cfg = ScenarioConfig { kind, m: a.m, pop_size: a.big_n, sample_size: n, replicates: a.t, seed: a.seed };
        let report = sim::run_model_based(&cfg, &opts)?;
        let main = a.n.len() == 1;
        sink.table(&format!("metrics_n{n}.csv"), main, |w| io::write_metrics(w, &report.table))?;
        if let Some(p) = &report.parameters {
            sink.table(&format!("parameters_n{n}.csv"), false, |w| io::write_parameters(w, p))?;
        }
        if !main && a.model.out.is_none() {
            println!("# n = {n}");
            io::write_metrics(std::io::stdout().lock(), &report.table)?;
        }
        runs.push(serde_json::json!({ "n": n, "replicates": report.table.replicates, "failed": report.table.failed }));
    }
    sink.manifest("simulate", a, serde_json::json!({ "design_based": false, "runs": runs }))
}

/// Path helper for tests and callers that want the manifest location.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.json")
}
