//! The `tramkit` command line: argument parsing and the subcommands.

use crate::error::{Error, Result};
use crate::exec::Pool;
use crate::format::{coef_table, copula_rows, model_rows, sig6, test_report, Cell, Dump, Report};
use crate::io::{
    covariate_lookup, exact_number, load_csv, load_records, parse_assignments, Schema, Table,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use tramkit_core::data::{summarize, CensoringKind, Dataset, EventTime};
use tramkit_core::estimate::{
    fit_with, lr_test, score_test_with, BandOptions, FitOptions, FitStatus, FittedModel, Quantity,
};
use tramkit_core::extensions::{fit_copula_with, kendall_tau};
use tramkit_core::formula::parse_formula;
use tramkit_core::model::{bind, BaselineKind, BindOptions, Extension, ModelSpec};
use tramkit_core::nonparam::{group_rows, kaplan_meier, turnbull, TurnbullOptions};
use tramkit_core::simulate::{draw_times, make_censored, shift_intercept, DrawOptions};
use tramkit_core::transform::{Link, DEFAULT_ORDER};
use tramkit_core::tree::{grow_tree, TreeControl, TreeNode};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;

const SUBCOMMANDS: [&str; 7] = [
    "fit", "predict", "npsurv", "simulate", "tree", "test", "summary",
];

#[derive(Debug, Parser)]
#[command(
    name = "tramkit",
    version,
    about = "Transformation survival models from the command line"
)]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "TRAMKIT_THREADS")]
    pub threads: Option<usize>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// JSON file of flag values; flags on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and print its coefficient table.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Curves of a fitted model (or tree) for new covariate rows.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Kaplan-Meier and Turnbull estimates.
    #[command(args_override_self = true)]
    Npsurv(NpsurvArgs),
    /// Simulate a dataset from a fitted model.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Grow a model-based tree.
    #[command(args_override_self = true)]
    Tree(TreeArgs),
    /// Likelihood-ratio, Wald or score tests.
    #[command(args_override_self = true)]
    Test(TestArgs),
    /// Censoring-type counts.
    #[command(args_override_self = true)]
    Summary(SummaryArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Lower (or only) time column.
    #[arg(long, default_value = "time")]
    pub time: String,
    /// Upper time column (two-column interval encoding).
    #[arg(long)]
    pub time2: Option<String>,
    /// Status code column: 0 right, 1 exact, 2 left, 3 interval.
    #[arg(long)]
    pub event_code: Option<String>,
    /// Competing event type column (copula model).
    #[arg(long)]
    pub status: Option<String>,
    /// Left-truncation time column.
    #[arg(long)]
    pub entry: Option<String>,
    /// Right-truncation time column.
    #[arg(long)]
    pub exit: Option<String>,
    /// Columns read as categorical.
    #[arg(long, value_delimiter = ',')]
    pub factor: Vec<String>,
}

impl DataArgs {
    fn schema(&self, covariates: Option<Vec<String>>) -> Schema {
        Schema {
            time: self.time.clone(),
            time2: self.time2.clone(),
            event: self.event_code.clone(),
            status: self.status.clone(),
            entry: self.entry.clone(),
            exit: self.exit.clone(),
            factors: self.factor.clone(),
            covariates,
        }
    }

    /// Reads the data with only the named covariate columns.
    fn load(&self, covariates: Vec<String>) -> Result<Dataset> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| Error::usage("missing required flag --data"))?;
        load_csv(path, &self.schema(Some(covariates)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LinkArg {
    Cloglog,
    Logit,
    Probit,
    Loglog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Weibull,
    Bernstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrailtyArg {
    Gamma,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model formula, e.g. `y | strat ~ arm | age`.
    #[arg(long)]
    pub formula: Option<String>,
    #[arg(long, value_enum, default_value = "cloglog")]
    pub link: LinkArg,
    #[arg(long, value_enum, default_value = "bernstein")]
    pub baseline: BaselineArg,
    /// Order of the Bernstein polynomial.
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
    /// Bernstein basis on the log-time scale.
    #[arg(long)]
    pub log_first: bool,
    /// Variables left of `~` entering as time-varying effects.
    #[arg(long, value_delimiter = ',')]
    pub tv: Vec<String>,
    #[arg(long, value_enum, conflicts_with = "ranef")]
    pub frailty: Option<FrailtyArg>,
    /// Random intercept per level of this column.
    #[arg(long)]
    pub ranef: Option<String>,
    /// Gauss-Hermite nodes for random intercepts.
    #[arg(long, default_value_t = tramkit_core::likelihood::DEFAULT_NODES)]
    pub nodes: usize,
    /// Pin parameters, e.g. `--fix "log(tau2)=-23"`.
    #[arg(long, value_delimiter = ',')]
    pub fix: Vec<String>,
    /// Quasi-Newton iteration limit.
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
}

impl ModelArgs {
    fn formula(&self) -> Result<&str> {
        self.formula
            .as_deref()
            .ok_or_else(|| Error::usage("missing required flag --formula"))
    }

    /// Covariate columns the model refers to.
    fn columns(&self) -> Result<Vec<String>> {
        let f = parse_formula(self.formula()?)?;
        let mut out: Vec<String> = f.left.into_iter().chain(f.shift).chain(f.scale).collect();
        out.extend(self.ranef.iter().cloned());
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn bind_options(&self) -> BindOptions {
        let link = match self.link {
            LinkArg::Cloglog => Link::MinExtremeValue,
            LinkArg::Logit => Link::Logistic,
            LinkArg::Probit => Link::Normal,
            LinkArg::Loglog => Link::MaxExtremeValue,
        };
        let baseline = match self.baseline {
            BaselineArg::Weibull => BaselineKind::LogLinear,
            BaselineArg::Bernstein => BaselineKind::Bernstein { order: self.order },
        };
        let extension = match (&self.frailty, &self.ranef) {
            (Some(FrailtyArg::Gamma), _) => Some(Extension::GammaFrailty),
            (None, Some(group)) => Some(Extension::RandomIntercept {
                group: group.clone(),
            }),
            (None, None) => None,
        };
        BindOptions {
            link,
            baseline,
            log_first: self.log_first,
            time_varying: self.tv.clone(),
            extension,
        }
    }

    fn spec(&self, ds: &Dataset) -> Result<ModelSpec> {
        Ok(bind(
            &parse_formula(self.formula()?)?,
            ds,
            &self.bind_options(),
        )?)
    }

    fn fit_options(&self) -> Result<FitOptions> {
        let fixed =
            self.fix
                .iter()
                .map(|f| {
                    let (name, value) = f.rsplit_once('=').ok_or_else(|| {
                        Error::usage(format!("--fix expects name=value, got `{f}`"))
                    })?;
                    let value: f64 = value.trim().parse().map_err(|_| {
                        Error::usage(format!("--fix value `{value}` is not a number"))
                    })?;
                    Ok((name.trim().to_string(), value))
                })
                .collect::<Result<_>>()?;
        let mut opts = FitOptions {
            fixed,
            nodes: self.nodes,
            ..Default::default()
        };
        opts.bfgs.max_iter = self.max_iter;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Gaussian-copula dependent censoring model (needs --status).
    #[arg(long, requires = "status", conflicts_with_all = ["ranef", "frailty", "tv", "link", "baseline", "order", "log_first"])]
    pub copula: bool,
    /// Write the JSON model dump here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Show baseline coefficients too.
    #[arg(long)]
    pub all: bool,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BandArg {
    None,
    Pointwise,
    Simultaneous,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Comma-separated time points.
    #[arg(long, value_delimiter = ',', conflicts_with = "grid_n")]
    pub grid: Vec<f64>,
    /// Number of equally spaced points over the model support.
    #[arg(long, default_value_t = 50)]
    pub grid_n: usize,
}

impl GridArgs {
    fn points(&self, spec: &ModelSpec) -> Result<Vec<f64>> {
        if !self.grid.is_empty() {
            if self.grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(Error::usage("grid times must be positive and finite"));
            }
            return Ok(self.grid.clone());
        }
        if self.grid_n < 2 {
            return Err(Error::usage("--grid-n must be at least 2"));
        }
        let (lo, hi) = (spec.support.lo, spec.support.hi);
        Ok((0..self.grid_n)
            .map(|k| lo + (hi - lo) * k as f64 / (self.grid_n - 1) as f64)
            .collect())
    }
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// JSON model or tree dump.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// CSV of covariate rows.
    #[arg(long, conflicts_with = "at")]
    pub newdata: Option<PathBuf>,
    /// A single covariate row, e.g. `arm=B,age=50`.
    #[arg(long)]
    pub at: Option<String>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// survivor, distribution, cumhaz, loghaz_cum, density or hazard.
    #[arg(long, default_value = "survivor")]
    pub what: String,
    #[arg(long, value_enum, default_value = "none")]
    pub band: BandArg,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Parameter draws for simultaneous bands.
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimator {
    Km,
    Turnbull,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct NpsurvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Separate curves per level of this column.
    #[arg(long)]
    pub group: Option<String>,
    /// Defaults to Kaplan-Meier when every row is exact or right-censored.
    #[arg(long, value_enum)]
    pub method: Option<Estimator>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON model dump to draw from.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// CSV of covariate rows, used cyclically.
    #[arg(long)]
    pub newdata: Option<PathBuf>,
    /// Number of simulated rows (default: one per covariate row).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Replace coefficients before drawing, e.g. `--set "arm=0.25"`.
    #[arg(long = "set", value_delimiter = ',')]
    pub set: Vec<String>,
    /// Right-censor by a second draw from the model with its intercept
    /// shifted by this amount.
    #[arg(long, allow_hyphen_values = true)]
    pub censor_shift: Option<f64>,
    /// Administrative censoring time.
    #[arg(long)]
    pub admin: Option<f64>,
    /// Grid size used to bracket each draw.
    #[arg(long, default_value_t = 1000)]
    pub grid_size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TreeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Numeric partitioning variables.
    #[arg(long, value_delimiter = ',')]
    pub part: Vec<String>,
    #[arg(long, default_value_t = 40)]
    pub minbucket: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 199)]
    pub permutations: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// JSON tree dump.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of leaf survivor curves at the `--at` covariates.
    #[arg(long, requires = "at")]
    pub curves: Option<PathBuf>,
    #[arg(long)]
    pub at: Option<String>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("kind").required(true).args(["lr", "wald", "score"]))]
pub struct TestArgs {
    /// Likelihood-ratio test of two model dumps: FULL NULL.
    #[arg(long, num_args = 2, value_names = ["FULL", "NULL"])]
    pub lr: Vec<PathBuf>,
    /// Wald test of the named coefficients of --model.
    #[arg(long, value_delimiter = ',')]
    pub wald: Vec<String>,
    /// Score test of the named coefficients, refitting without them.
    #[arg(long, value_delimiter = ',')]
    pub score: Vec<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: ModelArgs,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

/// Splices the flags of a `--config` JSON object right after the subcommand
/// name, so that the same flags given later on the command line override
/// them.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let path = it
                .next()
                .ok_or_else(|| Error::usage("--config needs a file"))?;
            config = Some(PathBuf::from(path));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::usage("config file must hold a JSON object"))?;
    let mut flags: Vec<OsString> = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &serde_json::Value| -> Result<Option<String>> {
            Ok(match v {
                serde_json::Value::String(s) => Some(s.clone()),
                serde_json::Value::Number(n) => Some(n.to_string()),
                serde_json::Value::Bool(_) | serde_json::Value::Null => None,
                _ => {
                    return Err(Error::usage(format!(
                        "config key `{key}` has an unsupported value"
                    )))
                }
            })
        };
        match v {
            serde_json::Value::Bool(true) => flags.push(flag.into()),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                for item in items {
                    if let Some(s) = scalar(item)? {
                        flags.push(flag.clone().into());
                        flags.push(s.into());
                    }
                }
            }
            other => {
                if let Some(s) = scalar(other)? {
                    flags.push(flag.into());
                    flags.push(s.into());
                }
            }
        }
    }
    let at = rest
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .map_or(rest.len(), |i| i + 1);
    rest.splice(at..at, flags);
    Ok(rest)
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run(args: Vec<OsString>) -> u8 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_ERROR,
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) if e.is_broken_pipe() => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn execute(cli: &Cli) -> Result<u8> {
    let pool = Pool::new(cli.threads.unwrap_or(0))?;
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, &pool),
        Command::Predict(a) => cmd_predict(a),
        Command::Npsurv(a) => cmd_npsurv(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Tree(a) => cmd_tree(a, &pool),
        Command::Test(a) => cmd_test(a, &pool),
        Command::Summary(a) => cmd_summary(a),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn emit(report: &Report, format: Format, path: Option<&Path>) -> Result<()> {
    let mut w = output(path)?;
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &report.to_json())?;
            writeln!(w).map_err(|e| Error::io("<output>", e))?;
        }
        Format::Csv | Format::Text => report.write_csv(&mut w)?,
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn status_code(status: FitStatus) -> u8 {
    match status {
        FitStatus::Converged => EXIT_OK,
        FitStatus::NotConverged => {
            log::warn!("optimizer did not converge");
            EXIT_NOT_CONVERGED
        }
    }
}

fn load_model(path: &Option<PathBuf>) -> Result<Dump> {
    let path = path
        .as_ref()
        .ok_or_else(|| Error::usage("missing required flag --model"))?;
    Dump::load(path)
}

pub fn cmd_fit(a: &FitArgs, pool: &Pool) -> Result<u8> {
    let ds = a.data.load(a.model.columns()?)?;
    let opts = a.model.fit_options()?;
    if a.copula {
        let fit = fit_copula_with(&parse_formula(a.model.formula()?)?, &ds, &opts, pool)?;
        let rows = copula_rows(&fit, a.all);
        match a.format {
            Format::Json => print(&format!(
                "{}\n",
                serde_json::to_string_pretty(&serde_json::json!({
                    "coefficients": rows,
                    "loglik": fit.loglik,
                    "kendall_tau": fit.kendall_tau(),
                    "n": fit.n_obs,
                    "converged": fit.convergence.status == FitStatus::Converged,
                }))?
            )),
            _ => {
                let mut text = coef_table(
                    &rows,
                    fit.loglik,
                    fit.n_obs,
                    fit.convergence.status,
                    fit.convergence.iterations,
                );
                text.push_str(&format!("Kendall's tau: {}\n", sig6(kendall_tau(fit.xi()))));
                print(&text);
            }
        }
        let status = fit.convergence.status;
        if let Some(out) = &a.out {
            Dump::Copula { model: fit }.save(out)?;
        }
        return Ok(status_code(status));
    }
    let spec = a.model.spec(&ds)?;
    let fm = fit_with(&spec, &ds, &opts, pool)?;
    let rows = model_rows(&fm, a.all);
    match a.format {
        Format::Json => print(&format!(
            "{}\n",
            serde_json::to_string_pretty(&serde_json::json!({
                "coefficients": rows,
                "loglik": fm.loglik,
                "n": fm.n_obs,
                "converged": fm.convergence.status == FitStatus::Converged,
            }))?
        )),
        _ => print(&coef_table(
            &rows,
            fm.loglik,
            fm.n_obs,
            fm.convergence.status,
            fm.convergence.iterations,
        )),
    }
    let status = fm.convergence.status;
    if let Some(out) = &a.out {
        Dump::Model { model: fm }.save(out)?;
    }
    Ok(status_code(status))
}

fn covariate_rows(
    newdata: &Option<PathBuf>,
    at: &Option<String>,
) -> Result<Vec<HashMap<String, String>>> {
    match (newdata, at) {
        (Some(path), _) => load_records(path),
        (None, Some(text)) => Ok(vec![parse_assignments(text)?]),
        (None, None) => Err(Error::usage("give covariates with --newdata or --at")),
    }
}

pub fn cmd_predict(a: &PredictArgs) -> Result<u8> {
    let dump = load_model(&a.model)?;
    let what = Quantity::from_name(&a.what)?;
    let records = covariate_rows(&a.newdata, &a.at)?;
    let mut report = Report::new(&["row", "node", "time", "estimate", "lower", "upper"]);
    let band = BandOptions {
        level: a.level,
        simultaneous: a.band == BandArg::Simultaneous,
        draws: a.draws,
        seed: a.seed,
    };
    for (i, cells) in records.iter().enumerate() {
        let (node, fm) = match &dump {
            Dump::Model { model } => (None, model),
            Dump::Tree { tree } => {
                let leaf = tree.route(|v| cells.get(v).and_then(|x| x.trim().parse().ok()))?;
                let fm = leaf
                    .model
                    .as_ref()
                    .ok_or_else(|| Error::usage(format!("leaf {} has no fitted model", leaf.id)))?;
                (Some(leaf.id), fm)
            }
            Dump::Copula { .. } => {
                return Err(Error::usage(
                    "prediction from copula dumps is not supported",
                ))
            }
        };
        let enc = fm.spec.encode_with(covariate_lookup(&fm.spec, cells))?;
        let grid = a.grid.points(&fm.spec)?;
        let node_cell = || node.map_or(Cell::Missing, Cell::Int);
        if a.band == BandArg::None {
            for (t, v) in grid.iter().zip(fm.predict(&enc, &grid, what)?) {
                report.push(vec![
                    (i + 1).into(),
                    node_cell(),
                    (*t).into(),
                    v.into(),
                    Cell::Missing,
                    Cell::Missing,
                ]);
            }
        } else {
            let b = fm.confband(&enc, &grid, what, &band)?;
            for k in 0..grid.len() {
                report.push(vec![
                    (i + 1).into(),
                    node_cell(),
                    b.grid[k].into(),
                    b.estimate[k].into(),
                    b.lower[k].into(),
                    b.upper[k].into(),
                ]);
            }
        }
    }
    emit(&report, a.format, a.out.as_deref())?;
    Ok(EXIT_OK)
}

pub fn cmd_npsurv(a: &NpsurvArgs) -> Result<u8> {
    let ds = a.data.load(a.group.iter().cloned().collect())?;
    let groups = match &a.group {
        Some(g) => group_rows(&ds, g)?,
        None => vec![("all".to_string(), (0..ds.len()).collect())],
    };
    let right_only = ds
        .rows()
        .iter()
        .all(|r| matches!(r.time.kind(), CensoringKind::Exact | CensoringKind::Right));
    let method = a.method.unwrap_or(if right_only {
        Estimator::Km
    } else {
        Estimator::Turnbull
    });
    if !right_only && matches!(method, Estimator::Km | Estimator::Both) {
        return Err(Error::usage(
            "Kaplan-Meier needs exact or right-censored times only; use --method turnbull",
        ));
    }
    let opts = TurnbullOptions {
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let mut report = Report::new(&["group", "method", "lower", "knot", "survivor", "n_risk"]);
    for (label, rows) in &groups {
        let times: Vec<EventTime> = rows.iter().map(|&i| ds.rows()[i].time).collect();
        if times.is_empty() {
            continue;
        }
        if matches!(method, Estimator::Km | Estimator::Both) {
            let km = kaplan_meier(&times)?;
            for (k, (&(lo, hi), &s)) in km
                .curve
                .intervals
                .iter()
                .zip(&km.curve.survivor)
                .enumerate()
            {
                report.push(vec![
                    label.as_str().into(),
                    "km".into(),
                    lo.into(),
                    hi.into(),
                    s.into(),
                    km.n_risk[k].into(),
                ]);
            }
        }
        if matches!(method, Estimator::Turnbull | Estimator::Both) {
            let tb = turnbull(&times, &opts)?;
            if !tb.converged {
                log::warn!(
                    "group {label}: Turnbull EM stopped after {} iterations",
                    tb.iterations
                );
            }
            for (&(lo, hi), &s) in tb.curve.intervals.iter().zip(&tb.curve.survivor) {
                report.push(vec![
                    label.as_str().into(),
                    "turnbull".into(),
                    lo.into(),
                    hi.into(),
                    s.into(),
                    Cell::Missing,
                ]);
            }
        }
    }
    emit(&report, a.format, a.out.as_deref())?;
    Ok(EXIT_OK)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<u8> {
    let mut fm = load_model(&a.model)?.into_model()?;
    for assignment in &a.set {
        let (name, value) = assignment
            .rsplit_once('=')
            .ok_or_else(|| Error::usage(format!("--set expects name=value, got `{assignment}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::usage(format!("--set value `{value}` is not a number")))?;
        fm = fm.set_coef(name.trim(), value)?;
    }
    let path = a
        .newdata
        .as_ref()
        .ok_or_else(|| Error::usage("missing required flag --newdata"))?;
    let table = Table::open(path)?;
    if table.rows.is_empty() {
        return Err(tramkit_core::Error::EmptyDataset.into());
    }
    let n = a.n.unwrap_or(table.rows.len());
    let keep: Vec<usize> = (0..table.header.len())
        .filter(|&j| !matches!(table.header[j].as_str(), "time" | "time2"))
        .collect();
    let records: Vec<HashMap<String, String>> = (0..table.rows.len())
        .map(|i| {
            keep.iter()
                .map(|&j| (table.header[j].clone(), table.rows[i][j].clone()))
                .collect()
        })
        .collect();
    let encoded = (0..n)
        .map(|i| {
            fm.spec
                .encode_with(covariate_lookup(&fm.spec, &records[i % records.len()]))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let opts = DrawOptions {
        grid: a.grid_size,
        ..Default::default()
    };
    let event = draw_times(&fm, &encoded, 1, a.seed, &opts)?;
    let mut censoring = vec![f64::INFINITY; n];
    if let Some(delta) = a.censor_shift {
        let c = draw_times(
            &shift_intercept(&fm, delta)?,
            &encoded,
            1,
            a.seed ^ 0x5eed_c0de,
            &opts,
        )?;
        censoring = c.times;
    }
    if let Some(admin) = a.admin {
        if !(admin > 0.0) {
            return Err(Error::usage("--admin must be positive"));
        }
        censoring.iter_mut().for_each(|c| *c = c.min(admin));
    }
    let times = make_censored(&event.times, &censoring)?;

    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    let mut header = vec!["time".to_string(), "time2".to_string()];
    header.extend(keep.iter().map(|&j| table.header[j].clone()));
    w.write_record(&header)?;
    for (i, t) in times.iter().enumerate() {
        let (lo, hi) = t.encode_interval2();
        let mut rec = vec![
            lo.map_or("NA".into(), exact_number),
            hi.map_or("NA".into(), exact_number),
        ];
        rec.extend(
            keep.iter()
                .map(|&j| table.rows[i % table.rows.len()][j].clone()),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(EXIT_OK)
}

fn describe_tree(node: &TreeNode, out: &mut String) {
    let indent = "  ".repeat(node.depth);
    let ll = node.model.as_ref().map_or("NA".into(), |m| sig6(m.loglik));
    out.push_str(&format!(
        "{indent}[{}] n = {}, logLik = {ll}",
        node.id,
        node.n()
    ));
    if node.fit_failed {
        out.push_str(", model fit failed");
    }
    match &node.split {
        Some(s) => {
            let p = node.test.as_ref().map_or("NA".into(), |t| sig6(t.p_value));
            out.push_str(&format!(
                ": split {} <= {} (p = {p}, gain = {})\n",
                s.variable,
                sig6(s.threshold),
                sig6(s.gain)
            ));
        }
        None => {
            let coefs = node
                .model
                .as_ref()
                .map(|m| {
                    model_rows(m, false)
                        .iter()
                        .map(|r| format!("{} = {}", r.name, sig6(r.estimate)))
                        .collect::<Vec<_>>()
                })
                .unwrap_or_default();
            out.push_str(&format!(": leaf {}\n", coefs.join(", ")));
        }
    }
    for c in &node.children {
        describe_tree(c, out);
    }
}

pub fn cmd_tree(a: &TreeArgs, pool: &Pool) -> Result<u8> {
    if a.part.is_empty() {
        return Err(Error::usage("missing required flag --part"));
    }
    let mut columns = a.model.columns()?;
    columns.extend(a.part.iter().cloned());
    let ds = a.data.load(columns)?;
    let spec = a.model.spec(&ds)?;
    let control = TreeControl {
        minbucket: a.minbucket,
        alpha: a.alpha,
        max_depth: a.max_depth.unwrap_or(usize::MAX),
        permutations: a.permutations,
        seed: a.seed,
        ..Default::default()
    };
    let part: Vec<&str> = a.part.iter().map(String::as_str).collect();
    let tree = grow_tree(&spec, &ds, &part, &control, &a.model.fit_options()?, pool)?;
    let mut text = String::new();
    describe_tree(&tree, &mut text);
    let leaf_ll: f64 = tree
        .leaves()
        .iter()
        .filter_map(|l| l.model.as_ref())
        .map(|m| m.loglik)
        .sum();
    text.push_str(&format!(
        "{} nodes, {} leaves, summed leaf logLik = {}\n",
        tree.n_nodes(),
        tree.leaves().len(),
        sig6(leaf_ll)
    ));
    print(&text);
    if let Some(path) = &a.curves {
        let cells = parse_assignments(a.at.as_deref().unwrap_or_default())?;
        let grid = a.grid.points(&spec)?;
        let mut report = Report::new(&["node", "time", "survivor"]);
        for leaf in tree.leaves() {
            let Some(fm) = &leaf.model else { continue };
            let enc = fm.spec.encode_with(covariate_lookup(&fm.spec, &cells))?;
            for (t, s) in grid
                .iter()
                .zip(fm.predict(&enc, &grid, Quantity::Survivor)?)
            {
                report.push(vec![leaf.id.into(), (*t).into(), s.into()]);
            }
        }
        emit(&report, Format::Csv, Some(path))?;
    }
    if let Some(out) = &a.out {
        Dump::Tree { tree }.save(out)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_test(a: &TestArgs, pool: &Pool) -> Result<u8> {
    let (label, result) = if !a.lr.is_empty() {
        let full = Dump::load(&a.lr[0])?.into_model()?;
        let null = Dump::load(&a.lr[1])?.into_model()?;
        ("Likelihood-ratio test", lr_test(&full, &null)?)
    } else if !a.wald.is_empty() {
        let fm: FittedModel = load_model(&a.model)?.into_model()?;
        let names: Vec<&str> = a.wald.iter().map(String::as_str).collect();
        ("Wald test", fm.wald_test(&names)?)
    } else {
        let ds = a.data.load(a.fit.columns()?)?;
        let spec = a.fit.spec(&ds)?;
        let names: Vec<&str> = a.score.iter().map(String::as_str).collect();
        (
            "Score test",
            score_test_with(&spec, &ds, &names, &a.fit.fit_options()?, pool)?,
        )
    };
    match a.format {
        Format::Json => print(&format!("{}\n", serde_json::to_string_pretty(&result)?)),
        _ => print(&test_report(label, &result)),
    }
    Ok(EXIT_OK)
}

pub fn cmd_summary(a: &SummaryArgs) -> Result<u8> {
    let ds = a.data.load(a.group.iter().cloned().collect())?;
    let groups = summarize(&ds, a.group.as_deref())?;
    match a.format {
        Format::Json => print(&format!("{}\n", serde_json::to_string_pretty(&groups)?)),
        Format::Csv | Format::Text => {
            let mut report = Report::new(&[
                "group", "n", "exact", "right", "left", "interval", "admin", "event", "loss",
            ]);
            for g in &groups {
                let comp = |f: fn(&tramkit_core::data::CompetingCounts) -> usize| {
                    g.competing
                        .as_ref()
                        .map_or(Cell::Missing, |c| Cell::Int(f(c)))
                };
                report.push(vec![
                    g.group.as_str().into(),
                    g.n.into(),
                    g.censoring.exact.into(),
                    g.censoring.right.into(),
                    g.censoring.left.into(),
                    g.censoring.interval.into(),
                    comp(|c| c.admin),
                    comp(|c| c.event),
                    comp(|c| c.loss),
                ]);
            }
            emit(&report, Format::Csv, None)?;
        }
    }
    Ok(EXIT_OK)
}
