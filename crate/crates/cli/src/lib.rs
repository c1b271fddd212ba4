//! `didlab` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! Errors go to standard error as `error[CODE]: message`. Every run writes a
//! JSON manifest (see [`RunManifest`]), also when it fails.
//!
//! Flags read environment variables prefixed `DIDLAB_` (for example
//! `DIDLAB_SEED`, `DIDLAB_REPS`, `DIDLAB_WORKERS`). Precedence is command
//! line, then environment, then config file, then preset defaults.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use didlab::analytics::{
    calibrate_factor_variance, corollary_t_variance, nabla_second_moment, prop1_variance_gap, prop_a1_t_variance,
    rejection_from_inflation, CalibrationOptions, GapInputs,
};
use didlab::dgp::{preset_pretest_dgp, preset_twoway_mc_dgp, Assignment, FactorModelSpec, PanelDesign, Timing};
use didlab::estimators::{estimate, ComparisonSet, EstimatorTag};
use didlab::montecarlo::{preset, run_mc, Experiment, MCConfig, TwoPeriodProbe, PRESETS};
use didlab::panel::{read_table, write_panel_csv, CsvSchema};
use didlab::placebo::{run_placebo, run_two_dimension_placebo, PlaceboData, PlaceboPlan, Scheme, SyntheticAcs};
use didlab::report::{
    write_csv, write_flat_csv, write_json, write_nabla_curve_csv, write_placebo_curve_csv, write_placebo_surface_csv,
};
use didlab::rng::derive_seed;
use didlab::variance::{t_test, variance_for, Corrections, VarianceMethod};
use didlab::{Error, ErrorKind, Result};

#[derive(Debug, Parser)]
#[command(name = "didlab", version, about = "Differences-in-differences inference under spatially correlated shocks")]
pub struct Cli {
    /// Path of the run manifest [default: <out>.manifest.json, else ./didlab_manifest.json]
    #[arg(long, global = true, env = "DIDLAB_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output file (standard output when omitted)
    #[arg(long, env = "DIDLAB_OUT")]
    pub out: Option<PathBuf>,
    /// Output format
    #[arg(long, value_enum, env = "DIDLAB_FORMAT")]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Master seed
    #[arg(long, env = "DIDLAB_SEED")]
    pub seed: Option<u64>,
    /// Number of replications
    #[arg(long, env = "DIDLAB_REPS")]
    pub reps: Option<usize>,
    /// Nominal test level
    #[arg(long, env = "DIDLAB_LEVEL")]
    pub level: Option<f64>,
    /// Worker threads; 0 uses every core. Results do not depend on it
    #[arg(long, env = "DIDLAB_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignPreset {
    /// Arm-level AR(1) factors, treatment after T/2
    Twoway,
    /// Arm-level AR(1) factors, treatment in the last period
    Pretest,
    /// No factors, unit noise, half treated after T/2
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Comparison {
    Never,
    NotYet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Unit,
    Cluster,
}

#[derive(Debug, Clone, Args)]
pub struct SchemaArgs {
    /// Group column name
    #[arg(long, default_value = "group")]
    pub group_col: String,
    /// Time column name
    #[arg(long, default_value = "time")]
    pub time_col: String,
    /// Outcome column name
    #[arg(long, default_value = "outcome")]
    pub outcome_col: String,
    /// Cluster column name
    #[arg(long, default_value = "cluster")]
    pub cluster_col: String,
}

impl SchemaArgs {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            group: self.group_col.clone(),
            time: self.time_col.clone(),
            outcome: self.outcome_col.clone(),
            cluster: self.cluster_col.clone(),
            ..CsvSchema::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one panel and write it as group-level CSV
    #[command(alias = "dump-panel")]
    Simulate {
        /// Panel design file (TOML or JSON)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in design used when no config is given
        #[arg(long, value_enum, default_value = "twoway")]
        design: DesignPreset,
        /// Factor autocorrelation for built-in designs
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        /// Number of periods for built-in designs
        #[arg(long = "T", default_value_t = 10)]
        periods: usize,
        /// Factor marginal variance for the pretest design
        #[arg(long, default_value_t = 0.0)]
        lambda_var: f64,
        /// Master seed
        #[arg(long, env = "DIDLAB_SEED", default_value_t = 0)]
        seed: u64,
        /// Output CSV file
        #[arg(long, env = "DIDLAB_OUT")]
        out: PathBuf,
    },
    /// Estimate a treatment effect and its variance on a CSV panel
    Estimate {
        /// Group-level or unit-level CSV file
        #[arg(long)]
        data: PathBuf,
        /// Estimator: twfe, fd, switcher_did, long_difference, twfe_regression, placebo_pre
        #[arg(long, default_value = "twfe")]
        estimator: String,
        /// Comma-separated variance methods: crve_group, hc_robust, twoway_cgm
        #[arg(long, value_delimiter = ',', default_value = "crve_group")]
        variance: Vec<String>,
        /// Largest horizon for long differences
        #[arg(long, default_value_t = 0)]
        max_horizon: usize,
        /// Comparison groups for staggered estimators
        #[arg(long, value_enum, default_value = "never")]
        comparison: Comparison,
        /// Nominal test level
        #[arg(long, env = "DIDLAB_LEVEL", default_value_t = 0.05)]
        level: f64,
        #[command(flatten)]
        schema: SchemaArgs,
        #[command(flatten)]
        output: OutArgs,
    },
    /// Run a Monte Carlo experiment from a preset or a config file
    Mc {
        /// Preset name: table-a1, table-a2, fig-a1, staggered-comparison, conditional-lambda, synthetic-acs-placebo
        #[arg(long)]
        preset: Option<String>,
        /// Experiment file (TOML or JSON); may name a preset and override its fields
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write every rate in long CSV format to this file
        #[arg(long)]
        long: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        output: OutArgs,
    },
    /// Placebo audit of a CSV panel with cluster labels
    Placebo {
        /// Group-level or unit-level CSV with a cluster column
        #[arg(long)]
        data: Option<PathBuf>,
        /// Use a generated survey-style panel instead of --data
        #[arg(long)]
        synthetic: bool,
        /// Plan file (TOML or JSON); flags below override it
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Comma-separated period distances
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<usize>,
        /// Comma-separated cohort distances; adds the two-dimensional surface
        #[arg(long, value_delimiter = ',')]
        group_deltas: Vec<usize>,
        /// Assignment schemes
        #[arg(long, value_enum, value_delimiter = ',')]
        scheme: Vec<SchemeArg>,
        /// Smallest admissible cluster size
        #[arg(long)]
        min_per_arm: Option<usize>,
        /// Random assignments per design cell
        #[arg(long)]
        reps_per_cell: Option<usize>,
        /// Directory for placebo_curve.csv and placebo_surface.csv
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print a closed-form quantity as JSON
    Analytic {
        #[command(subcommand)]
        what: AnalyticCmd,
    },
    /// Normalised E[(∇X)^2] for even T from 2 to --t-max, as CSV
    NablaCurve {
        /// Comma-separated autocorrelations
        #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.6,0.9")]
        rhos: Vec<f64>,
        /// Largest number of periods
        #[arg(long, default_value_t = 50)]
        t_max: usize,
        /// Simulated paths per point for a Monte Carlo check (0 skips it)
        #[arg(long, default_value_t = 0)]
        mc_paths: usize,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        output: OutArgs,
    },
    /// Calibrate the arm factor variance to a target main-test rejection rate
    Calibrate {
        /// Target unconditional rejection rate
        #[arg(long)]
        target: f64,
        /// Factor autocorrelation
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        /// Number of groups
        #[arg(long, default_value_t = 100)]
        groups: usize,
        /// Number of treated groups
        #[arg(long, default_value_t = 50)]
        treated: usize,
        /// Accepted distance from the target
        #[arg(long, default_value_t = 0.005)]
        tolerance: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Repeat the run recorded in a manifest
    Rerun {
        /// Manifest file written by an earlier run
        #[arg(long)]
        from: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnalyticCmd {
    /// E[(∇X)^2] for a stationary AR(1) with pre/post halves
    Nabla {
        /// Autocorrelation
        #[arg(long)]
        rho: f64,
        /// Number of periods (even)
        #[arg(long = "T")]
        periods: usize,
        /// Innovation variance
        #[arg(long, default_value_t = 1.0)]
        sigma_nu2: f64,
    },
    /// Asymptotic CRVE shortfall (μ₁−μ₀)' M (μ₁−μ₀)
    Gap {
        /// Comma-separated loading-mean gap
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu_gap: Vec<f64>,
        /// Second moment of ∇λ as a JSON matrix, e.g. [[0.25]]
        #[arg(long)]
        second_moment: String,
    },
    /// Limiting variance of the t-statistic under local-to-zero shocks
    Corollary {
        /// Comma-separated loading-mean gap
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu_gap: Vec<f64>,
        /// Local-to-zero second moment as a JSON matrix
        #[arg(long)]
        omega: String,
        /// Variance of ∇ε for treated groups
        #[arg(long, default_value_t = 1.0)]
        sigma_eps2_1: f64,
        /// Variance of ∇ε for control groups
        #[arg(long, default_value_t = 1.0)]
        sigma_eps2_0: f64,
        /// Treated share
        #[arg(long, default_value_t = 0.5)]
        c: f64,
    },
    /// Limiting variance of the t-statistic in the paired-factor model
    PropA1 {
        /// Variance of ∇λ
        #[arg(long)]
        sigma_lambda2: f64,
        /// Variance of ∇δ
        #[arg(long)]
        sigma_delta2: f64,
        /// Variance of ∇ε for treated groups
        #[arg(long, default_value_t = 1.0)]
        sigma_eps2_1: f64,
        /// Variance of ∇ε for control groups
        #[arg(long, default_value_t = 1.0)]
        sigma_eps2_0: f64,
        /// Treated share
        #[arg(long, default_value_t = 0.5)]
        c: f64,
    },
    /// Rejection probability of a nominal test whose statistic has variance 1+κ
    Rejection {
        /// Variance inflation κ
        #[arg(long)]
        kappa: f64,
        /// Nominal level
        #[arg(long, default_value_t = 0.05)]
        level: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Estimate { .. } => "estimate",
            Command::Mc { .. } => "mc",
            Command::Placebo { .. } => "placebo",
            Command::Analytic { .. } => "analytic",
            Command::NablaCurve { .. } => "nabla-curve",
            Command::Calibrate { .. } => "calibrate",
            Command::Rerun { .. } => "rerun",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub code: String,
    pub message: String,
}

/// Record of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Arguments after the program name; `rerun` replays them.
    pub argv: Vec<String>,
    pub resolved_config: Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    /// Simulation wall time; kept out of report files so reruns match byte for byte.
    pub runtime_secs: Option<f64>,
    pub outputs: Vec<PathBuf>,
    pub status: String,
    pub error: Option<ErrorRecord>,
}

#[derive(Default)]
struct Ctx {
    resolved: Value,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
    primary: Option<PathBuf>,
    runtime_secs: Option<f64>,
}

fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    eprintln!("error[USAGE_ERROR]: invalid command line");
                    1
                }
            };
        }
    };
    let rest: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    execute(cli, rest, None)
}

fn execute(cli: Cli, argv: Vec<String>, rerun_of: Option<&Path>) -> i32 {
    if let Command::Rerun { from } = &cli.command {
        return match load_manifest(from) {
            Ok(m) => {
                let mut full = vec!["didlab".to_string()];
                full.extend(m.argv.iter().cloned());
                match Cli::try_parse_from(&full) {
                    Ok(inner) if !matches!(inner.command, Command::Rerun { .. }) => {
                        let inner = Cli { manifest: cli.manifest.clone().or(inner.manifest), ..inner };
                        execute(inner, m.argv, Some(from))
                    }
                    _ => report_error(&Error::Config(format!("{} does not hold a replayable command", from.display()))),
                }
            }
            Err(e) => report_error(&e),
        };
    }
    let started = Utc::now();
    let mut ctx = Ctx::default();
    let result = dispatch(&cli.command, &mut ctx);
    let finished = Utc::now();
    let manifest_path = cli.manifest.clone().unwrap_or_else(|| match &ctx.primary {
        Some(p) => {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from("didlab_manifest.json"),
    });
    let manifest_path = match rerun_of {
        Some(from) if same_file(from, &manifest_path) => {
            let mut s = from.to_path_buf().into_os_string();
            s.push(".rerun.json");
            PathBuf::from(s)
        }
        _ => manifest_path,
    };
    let mut resolved = ctx.resolved;
    if let (Some(from), Value::Object(map)) = (rerun_of, &mut resolved) {
        map.insert("rerun_of".into(), json!(from.display().to_string()));
    }
    let manifest = RunManifest {
        subcommand: cli.command.name().into(),
        argv,
        resolved_config: resolved,
        seed: ctx.seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        started,
        finished,
        runtime_secs: ctx.runtime_secs,
        outputs: ctx.outputs,
        status: if result.is_ok() { "ok" } else { "error" }.into(),
        error: result.as_ref().err().map(|e| ErrorRecord { code: e.code().into(), message: e.to_string() }),
    };
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Io(e.to_string()))
        .and_then(|s| fs::write(&manifest_path, s + "\n").map_err(Error::from));
    match (result, written) {
        (Err(e), _) => report_error(&e),
        (Ok(()), Err(e)) => report_error(&e),
        (Ok(()), Ok(())) => 0,
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error[{}]: {e}", e.code());
    exit_code(e.kind())
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let s = fs::read_to_string(path).map_err(|_| Error::DataNotFound(path.display().to_string()))?;
    serde_json::from_str(&s).map_err(|e| Error::Parse { row: e.line(), message: e.to_string() })
}

/// Reads a TOML or JSON file into `T`, choosing by extension.
pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|_| Error::DataNotFound(path.display().to_string()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn emit_text(text: &str, out: &Option<PathBuf>, ctx: &mut Ctx) -> Result<()> {
    match out {
        Some(p) => {
            fs::write(p, format!("{text}\n"))?;
            ctx.outputs.push(p.clone());
            ctx.primary.get_or_insert(p.clone());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn record(ctx: &mut Ctx, p: &Path) {
    ctx.outputs.push(p.to_path_buf());
    ctx.primary.get_or_insert(p.to_path_buf());
}

fn dispatch(cmd: &Command, ctx: &mut Ctx) -> Result<()> {
    match cmd {
        Command::Simulate { config, design, rho, periods, lambda_var, seed, out } => {
            let d: PanelDesign = match config {
                Some(p) => read_config(p)?,
                None => match design {
                    DesignPreset::Twoway => preset_twoway_mc_dgp(*rho, *periods)?,
                    DesignPreset::Pretest => preset_pretest_dgp(*rho, *periods, *lambda_var)?,
                    DesignPreset::Noise => PanelDesign {
                        spec: FactorModelSpec::noise_only(Assignment::FixedCount { n_treated: 50 }),
                        n_groups: 100,
                        n_periods: *periods,
                        timing: Timing::Uniform(periods / 2),
                    },
                },
            };
            ctx.resolved = to_value(&d);
            ctx.seed = Some(*seed);
            let sim = d.simulate_with(&mut didlab::rng::seeded(*seed))?;
            write_panel_csv(&sim.panel, out)?;
            record(ctx, out);
            Ok(())
        }
        Command::Estimate { data, estimator, variance, max_horizon, comparison, level, schema, output } => {
            let tag: EstimatorTag = estimator.parse()?;
            let methods: Vec<VarianceMethod> = variance.iter().map(|v| v.parse()).collect::<Result<_>>()?;
            let set = match comparison {
                Comparison::Never => ComparisonSet::NeverTreated,
                Comparison::NotYet => ComparisonSet::NotYetTreated,
            };
            ctx.resolved = json!({
                "data": data, "estimator": tag.name(), "variance": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
                "max_horizon": max_horizon, "level": level,
            });
            let panel = read_table(data, &schema.schema())?.into_panel()?;
            let e = estimate(&panel, tag, *max_horizon, set)?;
            let mut rows = Vec::new();
            for m in methods {
                let v = variance_for(&panel, &e, m, Corrections::default())?;
                let t = t_test(e.alpha_hat, &v, *level);
                rows.push(json!({
                    "variance": m.name(), "value": v.value, "se": v.value.sqrt(), "dof": v.dof,
                    "psd_adjusted": v.psd_adjusted, "t": t.t, "p": t.p, "reject": t.reject,
                }));
            }
            let result = json!({
                "estimator": tag.name(), "alpha_hat": e.alpha_hat,
                "n_treated": e.n_treated, "n_control": e.n_control, "tests": rows,
            });
            let text = match output.format.unwrap_or(Format::Json) {
                Format::Json => serde_json::to_string_pretty(&result).map_err(|e| Error::Io(e.to_string()))?,
                Format::Csv => {
                    let mut s = String::from("estimator,alpha_hat,variance,value,se,t,p,reject");
                    for r in result["tests"].as_array().into_iter().flatten() {
                        s.push_str(&format!(
                            "\n{},{},{},{},{},{},{},{}",
                            tag.name(),
                            e.alpha_hat,
                            r["variance"].as_str().unwrap_or(""),
                            r["value"],
                            r["se"],
                            r["t"],
                            r["p"],
                            r["reject"]
                        ));
                    }
                    s
                }
            };
            emit_text(&text, &output.out, ctx)
        }
        Command::Mc { preset: name, config, long, run, output } => {
            let cfg = resolve_mc(name.as_deref(), config.as_deref(), run)?;
            ctx.resolved = to_value(&cfg);
            ctx.seed = Some(cfg.seed);
            let report = run_mc(&cfg)?;
            ctx.runtime_secs = Some(report.runtime_secs);
            let report = report.without_runtime();
            match &output.out {
                Some(p) => {
                    match output.format.unwrap_or(Format::Csv) {
                        Format::Csv => write_csv(&report, p)?,
                        Format::Json => write_json(&report, p)?,
                    }
                    record(ctx, p);
                    if !report.placebo_surface.is_empty() {
                        let s = sibling(p, "surface");
                        write_placebo_surface_csv(&report.placebo_surface, &s)?;
                        ctx.outputs.push(s);
                    }
                }
                None => println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?),
            }
            if let Some(l) = long {
                write_flat_csv(&report, l)?;
                record(ctx, l);
            }
            Ok(())
        }
        Command::Placebo {
            data,
            synthetic,
            plan,
            deltas,
            group_deltas,
            scheme,
            min_per_arm,
            reps_per_cell,
            out_dir,
            schema,
            run,
        } => {
            let mut p: PlaceboPlan = match plan {
                Some(f) => read_config(f)?,
                None => PlaceboPlan::default(),
            };
            if !deltas.is_empty() {
                p.deltas = deltas.clone();
                p.period_pairs.clear();
            }
            if !group_deltas.is_empty() {
                p.group_deltas = group_deltas.clone();
            }
            if !scheme.is_empty() {
                p.schemes = scheme
                    .iter()
                    .map(|s| match s {
                        SchemeArg::Unit => Scheme::UnitRandom { p: 0.5 },
                        SchemeArg::Cluster => Scheme::ClusterRandom,
                    })
                    .collect();
            }
            if let Some(m) = min_per_arm {
                p.min_per_arm = *m;
            }
            if let Some(r) = reps_per_cell.or(run.reps) {
                p.reps_per_cell = r;
            }
            if let Some(s) = run.seed {
                p.seed = s;
            }
            if let Some(l) = run.level {
                p.level = l;
            }
            if let Some(w) = run.workers {
                p.workers = w;
            }
            ctx.resolved = json!({ "plan": to_value(&p), "data": data, "synthetic": synthetic });
            ctx.seed = Some(p.seed);
            let table = match (data, synthetic) {
                (Some(d), false) => read_table(d, &schema.schema())?,
                (None, true) => {
                    let fixture = if p.group_deltas.is_empty() { SyntheticAcs::default() } else { SyntheticAcs::cohort_default() };
                    fixture.table(derive_seed(p.seed, 0))?
                }
                _ => return Err(Error::Config("give exactly one of --data and --synthetic".into())),
            };
            let d = PlaceboData::from_table(&table)?;
            fs::create_dir_all(out_dir)?;
            if p.group_deltas.is_empty() {
                let curve = run_placebo(&d, &p)?;
                let path = out_dir.join("placebo_curve.csv");
                write_placebo_curve_csv(&curve, &path)?;
                record(ctx, &path);
            } else {
                let surface = run_two_dimension_placebo(&d, &p)?;
                let path = out_dir.join("placebo_surface.csv");
                write_placebo_surface_csv(&surface, &path)?;
                record(ctx, &path);
            }
            Ok(())
        }
        Command::Analytic { what } => {
            let value = analytic(what)?;
            ctx.resolved = json!({ "analytic": format!("{what:?}") });
            println!("{}", serde_json::to_string(&value).map_err(|e| Error::Io(e.to_string()))?);
            Ok(())
        }
        Command::NablaCurve { rhos, t_max, mc_paths, run, output } => {
            let cfg = MCConfig {
                name: "nabla-curve".into(),
                experiment: Experiment::NablaCurve { rhos: rhos.clone(), t_max: *t_max, mc_paths: *mc_paths },
                level: run.level.unwrap_or(0.05),
                reps: run.reps.unwrap_or((*mc_paths).max(1)),
                seed: run.seed.unwrap_or(0),
                workers: run.workers.unwrap_or(0),
            };
            ctx.resolved = to_value(&cfg);
            ctx.seed = Some(cfg.seed);
            let report = run_mc(&cfg)?;
            ctx.runtime_secs = Some(report.runtime_secs);
            let report = report.without_runtime();
            match (&output.out, output.format.unwrap_or(Format::Csv)) {
                (Some(p), Format::Csv) => {
                    write_nabla_curve_csv(&report, p)?;
                    record(ctx, p);
                }
                (Some(p), Format::Json) => {
                    write_json(&report, p)?;
                    record(ctx, p);
                }
                (None, _) => {
                    println!("rho,T,value");
                    for c in &report.curve {
                        println!("{},{},{}", c.rho, c.t, c.value);
                    }
                }
            }
            Ok(())
        }
        Command::Calibrate { target, rho, groups, treated, tolerance, run } => {
            let probe = TwoPeriodProbe { n_groups: *groups, n_treated: *treated, ..TwoPeriodProbe::pretest_default(*rho) };
            let opts = CalibrationOptions {
                reps: run.reps.unwrap_or(10_000),
                tolerance: *tolerance,
                level: run.level.unwrap_or(0.05),
                workers: run.workers.unwrap_or(0),
                ..CalibrationOptions::default()
            };
            let seed = run.seed.unwrap_or(0);
            ctx.resolved = json!({ "target": target, "probe": to_value(&probe), "options": to_value(&opts) });
            ctx.seed = Some(seed);
            let c = calibrate_factor_variance(*target, &probe, seed, &opts)?;
            println!("{}", serde_json::to_string(&c).map_err(|e| Error::Io(e.to_string()))?);
            Ok(())
        }
        Command::Rerun { .. } => unreachable!("handled before dispatch"),
    }
}

fn sibling(p: &Path, tag: &str) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!("{stem}_{tag}.csv"))
}

/// Partial experiment file: any field left out comes from the preset.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McFile {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub experiment: Option<Experiment>,
    pub level: Option<f64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// Applies preset defaults, then the config file, then flags and
/// environment variables.
pub fn resolve_mc(name: Option<&str>, config: Option<&Path>, run: &RunArgs) -> Result<MCConfig> {
    let file: McFile = match config {
        Some(p) => read_config(p)?,
        None => McFile::default(),
    };
    let preset_name = name.map(str::to_string).or(file.preset.clone());
    let mut cfg = match (&preset_name, &file.experiment) {
        (Some(n), _) => preset(n)?,
        (None, Some(e)) => MCConfig {
            name: file.name.clone().unwrap_or_else(|| "custom".into()),
            experiment: e.clone(),
            level: 0.05,
            reps: 1000,
            seed: 0,
            workers: 0,
        },
        (None, None) => {
            return Err(Error::Config(format!("give --preset ({}) or --config", PRESETS.join(", "))));
        }
    };
    if let Some(e) = &file.experiment {
        cfg.experiment = e.clone();
    }
    if let Some(n) = &file.name {
        cfg.name = n.clone();
    }
    cfg.level = run.level.or(file.level).unwrap_or(cfg.level);
    cfg.reps = run.reps.or(file.reps).unwrap_or(cfg.reps);
    cfg.seed = run.seed.or(file.seed).unwrap_or(cfg.seed);
    cfg.workers = run.workers.or(file.workers).unwrap_or(cfg.workers);
    cfg.validate()?;
    Ok(cfg)
}

fn parse_matrix(s: &str) -> Result<Vec<Vec<f64>>> {
    serde_json::from_str(s).map_err(|e| Error::Config(format!("expected a JSON matrix such as [[1.0]]: {e}")))
}

fn analytic(what: &AnalyticCmd) -> Result<f64> {
    match what {
        AnalyticCmd::Nabla { rho, periods, sigma_nu2 } => nabla_second_moment(*rho, *periods, *sigma_nu2),
        AnalyticCmd::Gap { mu_gap, second_moment } => prop1_variance_gap(&GapInputs {
            mu_gap: mu_gap.clone(),
            second_moment: parse_matrix(second_moment)?,
            sigma_eps2_treated: 1.0,
            sigma_eps2_control: 1.0,
            c: 0.5,
        }),
        AnalyticCmd::Corollary { mu_gap, omega, sigma_eps2_1, sigma_eps2_0, c } => {
            let omega = parse_matrix(omega)?;
            corollary_t_variance(
                &GapInputs {
                    mu_gap: mu_gap.clone(),
                    second_moment: omega.clone(),
                    sigma_eps2_treated: *sigma_eps2_1,
                    sigma_eps2_control: *sigma_eps2_0,
                    c: *c,
                },
                &omega,
            )
        }
        AnalyticCmd::PropA1 { sigma_lambda2, sigma_delta2, sigma_eps2_1, sigma_eps2_0, c } => {
            prop_a1_t_variance(*sigma_lambda2, *sigma_delta2, *sigma_eps2_1, *sigma_eps2_0, *c)
        }
        AnalyticCmd::Rejection { kappa, level } => rejection_from_inflation(*kappa, *level),
    }
}

/// The clap command tree, for help rendering and reflection tests.
pub fn command() -> clap::Command {
    Cli::command()
}
