//! Deterministic parallel replication engine and the shipped experiments.
//!
//! Replication `r` of a run seeded with `seed` always draws from
//! [`replication_rng`]`(seed, r)`, results are collected in index order and
//! reduced sequentially, so reports do not depend on the worker count.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analytics::{calibrate_factor_variance, normalized_nabla_second_moment, CalibrationOptions};
use crate::dgp::{
    draw_ar1_path, draw_factors, preset_pretest_dgp, preset_twoway_mc_dgp, simulate_panel_with,
    simulate_panel_with_factors, ArSpec, Assignment, FactorModelSpec, PanelDesign, Structure, Timing,
};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate, first_difference, long_difference, pretest_coefficient, switcher_did, twfe, twfe_regression,
    ComparisonSet, EstimatorTag,
};
use crate::placebo::{run_synthetic_placebo, PlaceboPoint, SurfacePoint, SyntheticPlaceboConfig};
use crate::rng::{derive_seed, replication_rng, SimRng};
use crate::variance::{crve_group, t_test, variance_for, Corrections, VarianceMethod};

/// Number of threads used for `workers`; zero means all available cores.
pub fn resolve_workers(workers: usize) -> usize {
    if workers > 0 {
        workers
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
}

/// Runs `f(r, rng_r)` for `r = 0..reps` on `workers` threads and returns the
/// results in index order. The first failing index (in index order) aborts
/// the run.
pub fn replicate<T, F>(reps: usize, seed: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(workers))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let out: Vec<Result<T>> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = replication_rng(seed, r as u64);
                f(r, &mut rng)
            })
            .collect()
    });
    out.into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|e| Error::Replication { index, source: Box::new(e) }))
        .collect()
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

fn rate(count: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        count as f64 / n as f64
    }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// One rejection-rate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub label: String,
    pub estimator: String,
    pub variance: String,
    pub rate: f64,
    pub mc_se: f64,
    pub reps: usize,
    #[serde(default)]
    pub psd_adjusted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretestCell {
    pub panel: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub rho: f64,
    pub pass_rate: f64,
    /// Main-test rejection given a pass; `None` when the pass rate is below 5%.
    pub cond_rej: Option<f64>,
    pub mc_se: f64,
    pub cond_mc_se: Option<f64>,
    /// Unconditional main-test rejection.
    pub uncond_rej: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub panel: String,
    pub rho: f64,
    pub target: f64,
    pub lambda_var: f64,
    pub achieved: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionCell {
    pub label: String,
    pub n_lambda_draws: usize,
    pub reps_per_lambda: usize,
    /// Mean of `N·CRVE` over all draws.
    pub mean_ncrve: f64,
    /// Variance across fixed-λ means of `N·CRVE`.
    pub across_var: f64,
    /// Expected variance of a fixed-λ mean from replication noise alone.
    pub within_var: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalModelCell {
    pub gap_inflation: f64,
    pub pretest_level: f64,
    pub alpha: f64,
    pub uncond_mean: f64,
    pub cond_mean: f64,
    pub uncond_var: f64,
    pub cond_var: f64,
    pub pass_rate: f64,
    pub cond_mean_se: f64,
    pub uncond_var_se: f64,
    pub cond_var_se: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NablaPoint {
    pub rho: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub value: f64,
    pub mc_value: Option<f64>,
    pub mc_se: Option<f64>,
}

/// Output of one experiment. `runtime_secs` is the only field that varies
/// between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub experiment: String,
    pub seed: u64,
    pub reps: usize,
    pub level: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<RateCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pretest: Vec<PretestCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibration: Vec<CalibrationCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dispersion: Vec<DispersionCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub normal_model: Vec<NormalModelCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<NablaPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub placebo_curve: Vec<PlaceboPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub placebo_surface: Vec<SurfacePoint>,
    #[serde(default)]
    pub runtime_secs: f64,
}

impl MCReport {
    pub fn new(experiment: impl Into<String>, seed: u64, reps: usize, level: f64) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            reps,
            level,
            cells: Vec::new(),
            pretest: Vec::new(),
            calibration: Vec::new(),
            dispersion: Vec::new(),
            normal_model: Vec::new(),
            curve: Vec::new(),
            placebo_curve: Vec::new(),
            placebo_surface: Vec::new(),
            runtime_secs: 0.0,
        }
    }

    /// The report with its timing removed, for bit-level comparisons.
    pub fn without_runtime(&self) -> Self {
        Self { runtime_secs: 0.0, ..self.clone() }
    }

    pub fn find(&self, label: &str, estimator: &str, variance: &str, key: &[(&str, f64)]) -> Option<&RateCell> {
        self.cells.iter().find(|c| {
            c.label == label
                && c.estimator == estimator
                && c.variance == variance
                && key.iter().all(|(k, v)| c.params.get(*k) == Some(v))
        })
    }
}

/// A standard experiment on an arbitrary design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardConfig {
    pub design: PanelDesign,
    pub estimators: Vec<EstimatorTag>,
    pub variances: Vec<VarianceMethod>,
    #[serde(default)]
    pub max_horizon: usize,
    #[serde(default)]
    pub comparison: ComparisonSet,
    #[serde(default)]
    pub corrections: Corrections,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretestPanel {
    pub name: String,
    /// Main-test rejection to calibrate to; `None` means no factors.
    pub target: Option<f64>,
    pub rhos: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretestConfig {
    pub panels: Vec<PretestPanel>,
    pub periods: Vec<usize>,
    #[serde(default)]
    pub calibration: CalibrationOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalLambdaConfig {
    #[serde(default)]
    pub label: String,
    pub spec: FactorModelSpec,
    pub n_groups: usize,
    pub n_periods: usize,
    pub t_star: usize,
    pub n_lambda_draws: usize,
    pub reps_per_lambda: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentLevel {
    /// Whole blocks treated.
    Cluster,
    /// Groups treated individually at random.
    Unit,
}

impl AssignmentLevel {
    pub fn name(self) -> &'static str {
        match self {
            AssignmentLevel::Cluster => "cluster",
            AssignmentLevel::Unit => "unit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaggeredConfig {
    pub n_blocks: usize,
    pub groups_per_block: usize,
    pub treated_blocks: usize,
    pub n_periods: usize,
    /// Treatment start (number of pre-periods) per cohort.
    pub cohorts: Vec<usize>,
    pub rho: f64,
    /// Marginal variance of each block factor.
    pub factor_var: f64,
    #[serde(default = "unit_var")]
    pub sigma_eps2: f64,
    pub max_horizon: usize,
    pub assignments: Vec<AssignmentLevel>,
}

fn unit_var() -> f64 {
    1.0
}

impl StaggeredConfig {
    pub fn design(&self, level: AssignmentLevel) -> PanelDesign {
        let n = self.n_blocks * self.groups_per_block;
        let assignment = match level {
            AssignmentLevel::Cluster => Assignment::Grouped { n_blocks: self.n_blocks, treated_blocks: self.treated_blocks },
            AssignmentLevel::Unit => Assignment::RandomCount { n_treated: self.treated_blocks * self.groups_per_block },
        };
        let spec = FactorModelSpec {
            structure: Structure::Blocks { n_blocks: self.n_blocks },
            factor_process: vec![ArSpec::with_marginal_variance(self.rho, self.factor_var)],
            sigma_eps2_treated: self.sigma_eps2,
            sigma_eps2_control: self.sigma_eps2,
            ..FactorModelSpec::noise_only(assignment)
        };
        PanelDesign { spec, n_groups: n, n_periods: self.n_periods, timing: Timing::Cohorts(self.cohorts.clone()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalModelConfig {
    pub var1: f64,
    pub var0: f64,
    pub cov: f64,
    /// The pre-test uses variance `var0 / (1 + gap_inflation)`.
    pub gap_inflation: f64,
    pub pretest_level: f64,
}

/// Experiment selector with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Standard(StandardConfig),
    Twoway { rhos: Vec<f64>, periods: Vec<usize> },
    Pretest(PretestConfig),
    ConditionalLambda { configs: Vec<ConditionalLambdaConfig> },
    StaggeredComparison(StaggeredConfig),
    PretestNormalModel { var1: f64, var0: f64, cov: f64, inflations: Vec<f64>, levels: Vec<f64> },
    NablaCurve { rhos: Vec<f64>, t_max: usize, mc_paths: usize },
    Placebo(SyntheticPlaceboConfig),
}

fn default_level() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MCConfig {
    pub name: String,
    pub experiment: Experiment,
    #[serde(default = "default_level")]
    pub level: f64,
    pub reps: usize,
    pub seed: u64,
    /// Not part of the result; reports are identical for every value.
    #[serde(default)]
    pub workers: usize,
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} must lie in (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 6] =
    ["table-a1", "table-a2", "fig-a1", "staggered-comparison", "conditional-lambda", "synthetic-acs-placebo"];

/// Default staggered design: 8 blocks of 25 groups, 4 treated blocks split
/// between cohorts starting after 3 and 7 periods, AR(0.9) block factors.
pub fn default_staggered() -> StaggeredConfig {
    StaggeredConfig {
        n_blocks: 8,
        groups_per_block: 25,
        treated_blocks: 4,
        n_periods: 10,
        cohorts: vec![3, 7],
        rho: 0.9,
        factor_var: 0.2,
        sigma_eps2: 1.0,
        max_horizon: 2,
        assignments: vec![AssignmentLevel::Cluster, AssignmentLevel::Unit],
    }
}

pub fn default_conditional_lambda(loading_var: f64) -> ConditionalLambdaConfig {
    let f = 2;
    let cov: Vec<Vec<f64>> = (0..f).map(|i| (0..f).map(|j| if i == j { loading_var } else { 0.0 }).collect()).collect();
    ConditionalLambdaConfig {
        label: format!("loading_var={loading_var}"),
        spec: FactorModelSpec {
            structure: Structure::Generic,
            loading_mean_treated: vec![0.0; f],
            loading_mean_control: vec![0.0; f],
            loading_cov_treated: Some(cov.clone()),
            loading_cov_control: Some(cov),
            factor_process: vec![ArSpec::white_noise(1.0)],
            ..FactorModelSpec::noise_only(Assignment::FixedCount { n_treated: 100 })
        },
        n_groups: 200,
        n_periods: 2,
        t_star: 1,
        n_lambda_draws: 100,
        reps_per_lambda: 50,
    }
}

/// Configuration of a shipped preset.
pub fn preset(name: &str) -> Result<MCConfig> {
    let cfg = |experiment, reps| MCConfig { name: name.to_string(), experiment, level: 0.05, reps, seed: 20_240_501, workers: 0 };
    Ok(match name {
        "table-a1" => cfg(Experiment::Twoway { rhos: vec![0.0, 0.1, 0.4], periods: vec![2, 10, 100] }, 5000),
        "table-a2" => cfg(
            Experiment::Pretest(PretestConfig {
                panels: vec![
                    PretestPanel { name: "A".into(), target: None, rhos: vec![0.0] },
                    PretestPanel { name: "B".into(), target: Some(0.08), rhos: vec![0.0, 0.5, 0.9] },
                    PretestPanel { name: "C".into(), target: Some(0.17), rhos: vec![0.0, 0.5, 0.9] },
                    PretestPanel { name: "D".into(), target: Some(0.46), rhos: vec![0.0, 0.5, 0.9] },
                ],
                periods: vec![3, 6, 10],
                calibration: CalibrationOptions::default(),
            }),
            5000,
        ),
        "fig-a1" => cfg(Experiment::NablaCurve { rhos: vec![0.0, 0.3, 0.6, 0.9], t_max: 50, mc_paths: 20_000 }, 20_000),
        "staggered-comparison" => cfg(Experiment::StaggeredComparison(default_staggered()), 5000),
        "conditional-lambda" => cfg(
            Experiment::ConditionalLambda {
                configs: vec![default_conditional_lambda(0.0), default_conditional_lambda(1.0), default_conditional_lambda(2.0)],
            },
            100,
        ),
        "synthetic-acs-placebo" => cfg(Experiment::Placebo(SyntheticPlaceboConfig::default()), 1),
        other => return Err(Error::Config(format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")))),
    })
}

/// Runs any experiment.
pub fn run_mc(cfg: &MCConfig) -> Result<MCReport> {
    cfg.validate()?;
    let start = Instant::now();
    let (seed, reps, level, workers) = (cfg.seed, cfg.reps, cfg.level, cfg.workers);
    let mut report = MCReport::new(cfg.name.clone(), seed, reps, level);
    match &cfg.experiment {
        Experiment::Standard(s) => report.cells = run_standard(s, reps, seed, level, workers)?,
        Experiment::Twoway { rhos, periods } => report.cells = run_twoway_mc(rhos, periods, reps, seed, level, workers)?,
        Experiment::Pretest(p) => {
            let (cells, cal) = run_pretest_mc(p, reps, seed, level, workers)?;
            report.pretest = cells;
            report.calibration = cal;
        }
        Experiment::ConditionalLambda { configs } => {
            for (i, c) in configs.iter().enumerate() {
                report.dispersion.push(run_conditional_lambda_mc(c, derive_seed(seed, i as u64), workers)?);
            }
        }
        Experiment::StaggeredComparison(s) => report.cells = run_staggered_comparison(s, reps, seed, level, workers)?,
        Experiment::PretestNormalModel { var1, var0, cov, inflations, levels } => {
            let mut i = 0;
            for &gap_inflation in inflations {
                for &pretest_level in levels {
                    let m = NormalModelConfig { var1: *var1, var0: *var0, cov: *cov, gap_inflation, pretest_level };
                    report.normal_model.push(run_pretest_normal_model(&m, reps, derive_seed(seed, i), workers)?);
                    i += 1;
                }
            }
        }
        Experiment::NablaCurve { rhos, t_max, mc_paths } => {
            report.curve = nabla_curve(rhos, *t_max, *mc_paths, seed, workers)?;
        }
        Experiment::Placebo(p) => {
            let (curve, surface) = run_synthetic_placebo(p, seed, level, workers)?;
            report.placebo_curve = curve;
            report.placebo_surface = surface;
        }
    }
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// `(est × var)` rejection of `H0: α = alpha` for a standard design.
fn run_standard(s: &StandardConfig, reps: usize, seed: u64, level: f64, workers: usize) -> Result<Vec<RateCell>> {
    s.design.spec.validate()?;
    let alpha = s.design.spec.treatment_effect.alpha;
    let outcomes = replicate(reps, seed, workers, |_, rng| {
        let sim = s.design.simulate_with(rng)?;
        let mut out = Vec::with_capacity(s.estimators.len() * s.variances.len());
        for &tag in &s.estimators {
            let e = estimate(&sim.panel, tag, s.max_horizon, s.comparison)?;
            for &m in &s.variances {
                let v = variance_for(&sim.panel, &e, m, s.corrections)?;
                out.push((t_test(e.alpha_hat - alpha, &v, level).reject, v.psd_adjusted));
            }
        }
        Ok(out)
    })?;
    let mut cells = Vec::new();
    let mut k = 0;
    for &tag in &s.estimators {
        for &m in &s.variances {
            let rejects = outcomes.iter().filter(|o| o[k].0).count();
            let psd = outcomes.iter().filter(|o| o[k].1).count();
            let p = rate(rejects, reps);
            cells.push(RateCell {
                params: BTreeMap::new(),
                label: String::new(),
                estimator: tag.name().into(),
                variance: m.name().into(),
                rate: p,
                mc_se: binomial_se(p, reps),
                reps,
                psd_adjusted: psd,
            });
            k += 1;
        }
    }
    Ok(cells)
}

/// Two-way cluster grid: TWFE with heteroskedasticity-robust, group-clustered
/// and two-way clustered variances on the arm-level AR(1) design.
pub fn run_twoway_mc(
    rhos: &[f64],
    periods: &[usize],
    reps: usize,
    seed: u64,
    level: f64,
    workers: usize,
) -> Result<Vec<RateCell>> {
    let methods = [VarianceMethod::HcRobust, VarianceMethod::CrveGroup, VarianceMethod::TwowayCgm];
    let mut cells = Vec::new();
    for (i, &rho) in rhos.iter().enumerate() {
        for (k, &t) in periods.iter().enumerate() {
            let design = preset_twoway_mc_dgp(rho, t)?;
            let cell_seed = derive_seed(seed, (i * periods.len() + k) as u64);
            let out = replicate(reps, cell_seed, workers, |_, rng| {
                let sim = design.simulate_with(rng)?;
                let e = twfe(&sim.panel)?;
                methods
                    .iter()
                    .map(|&m| {
                        let v = variance_for(&sim.panel, &e, m, Corrections::default())?;
                        Ok((t_test(e.alpha_hat, &v, level).reject, v.psd_adjusted))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            for (q, m) in methods.iter().enumerate() {
                let p = rate(out.iter().filter(|o| o[q].0).count(), reps);
                cells.push(RateCell {
                    params: params(&[("rho", rho), ("T", t as f64)]),
                    label: String::new(),
                    estimator: EstimatorTag::Twfe.name().into(),
                    variance: m.name().into(),
                    rate: p,
                    mc_se: binomial_se(p, reps),
                    reps,
                    psd_adjusted: out.iter().filter(|o| o[q].1).count(),
                });
            }
        }
    }
    Ok(cells)
}

/// Parameters of the two-period main test used for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPeriodProbe {
    pub n_groups: usize,
    pub n_treated: usize,
    pub rho: f64,
    pub lambda_var: f64,
    pub sigma_eps2: f64,
}

impl TwoPeriodProbe {
    pub fn pretest_default(rho: f64) -> Self {
        Self { n_groups: 100, n_treated: 50, rho, lambda_var: 0.0, sigma_eps2: 1.0 }
    }

    fn design(&self, t: usize) -> Result<PanelDesign> {
        let mut d = preset_pretest_dgp(self.rho, t, self.lambda_var)?;
        d.n_groups = self.n_groups;
        d.spec.assignment = Assignment::FixedCount { n_treated: self.n_treated };
        d.spec.sigma_eps2_treated = self.sigma_eps2;
        d.spec.sigma_eps2_control = self.sigma_eps2;
        Ok(d)
    }
}

/// Rejection rate of the first-difference main test with group CRVE on a
/// two-period panel. Replication streams depend only on `seed`, so the
/// same seed gives common random numbers across `lambda_var` values.
pub fn two_period_rejection(probe: &TwoPeriodProbe, reps: usize, seed: u64, level: f64, workers: usize) -> Result<f64> {
    let design = probe.design(2)?;
    let out = replicate(reps, seed, workers, |_, rng| {
        let sim = design.simulate_with(rng)?;
        let e = first_difference(&sim.panel)?;
        Ok(t_test(e.alpha_hat, &crve_group(&e)?, level).reject)
    })?;
    Ok(rate(out.iter().filter(|&&r| r).count(), reps))
}

/// Pass rate of the pre-tests (each pre-period against period `T−1`) and
/// main-test rejection given a pass, for each panel, ρ and `T`.
pub fn run_pretest_mc(
    cfg: &PretestConfig,
    reps: usize,
    seed: u64,
    level: f64,
    workers: usize,
) -> Result<(Vec<PretestCell>, Vec<CalibrationCell>)> {
    let mut cells = Vec::new();
    let mut calibration = Vec::new();
    let cal_opts = CalibrationOptions { level, workers, ..cfg.calibration };
    for (pi, panel) in cfg.panels.iter().enumerate() {
        for (ri, &rho) in panel.rhos.iter().enumerate() {
            let tag = (pi * 64 + ri) as u64;
            let lambda_var = match panel.target {
                None => 0.0,
                Some(target) => {
                    let c = calibrate_factor_variance(
                        target,
                        &TwoPeriodProbe::pretest_default(rho),
                        derive_seed(seed, 1_000_000 + tag),
                        &cal_opts,
                    )?;
                    calibration.push(CalibrationCell {
                        panel: panel.name.clone(),
                        rho,
                        target,
                        lambda_var: c.lambda_var,
                        achieved: c.achieved,
                        probes: c.probes,
                    });
                    c.lambda_var
                }
            };
            for (ti, &t) in cfg.periods.iter().enumerate() {
                if t < 3 {
                    return Err(Error::BadT(t));
                }
                let design = preset_pretest_dgp(rho, t, lambda_var)?;
                let out = replicate(reps, derive_seed(seed, tag * 64 + ti as u64), workers, |_, rng| {
                    let sim = design.simulate_with(rng)?;
                    let base = t - 2;
                    let mut pass = true;
                    for s in 0..base {
                        let e = pretest_coefficient(&sim.panel, s, base)?;
                        if t_test(e.alpha_hat, &crve_group(&e)?, level).reject {
                            pass = false;
                        }
                    }
                    let e = first_difference(&sim.panel)?;
                    Ok((pass, t_test(e.alpha_hat, &crve_group(&e)?, level).reject))
                })?;
                let n_pass = out.iter().filter(|o| o.0).count();
                let both = out.iter().filter(|o| o.0 && o.1).count();
                let pass_rate = rate(n_pass, reps);
                let (cond_rej, cond_mc_se) = if pass_rate < 0.05 {
                    (None, None)
                } else {
                    let q = rate(both, n_pass);
                    (Some(q), Some(binomial_se(q, n_pass)))
                };
                cells.push(PretestCell {
                    panel: panel.name.clone(),
                    t,
                    rho,
                    pass_rate,
                    cond_rej,
                    mc_se: binomial_se(pass_rate, reps),
                    cond_mc_se,
                    uncond_rej: rate(out.iter().filter(|o| o.1).count(), reps),
                    reps,
                });
            }
        }
    }
    Ok((cells, calibration))
}

/// For each of `n_lambda_draws` factor paths, the mean of `N·CRVE` over
/// `reps_per_lambda` redraws of loadings and noise.
pub fn run_conditional_lambda_mc(cfg: &ConditionalLambdaConfig, seed: u64, workers: usize) -> Result<DispersionCell> {
    cfg.spec.validate()?;
    if cfg.n_lambda_draws < 2 || cfg.reps_per_lambda < 2 {
        return Err(Error::Config("need at least two factor draws and two replications per draw".into()));
    }
    let timing = Timing::Uniform(cfg.t_star);
    let n = cfg.n_groups as f64;
    let stats = replicate(cfg.n_lambda_draws, seed, workers, |_, rng| {
        let factors = draw_factors(&cfg.spec, cfg.n_groups, cfg.n_periods, rng)?;
        let mut vals = Vec::with_capacity(cfg.reps_per_lambda);
        for _ in 0..cfg.reps_per_lambda {
            let sim = simulate_panel_with_factors(&cfg.spec, cfg.n_groups, cfg.n_periods, &timing, &factors, rng)?;
            let e = twfe(&sim.panel)?;
            vals.push(n * crve_group(&e)?.value);
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        Ok((m, v))
    })?;
    let k = stats.len() as f64;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / k;
    let across_var = stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (k - 1.0);
    let within_var = stats.iter().map(|s| s.1).sum::<f64>() / k / cfg.reps_per_lambda as f64;
    Ok(DispersionCell {
        label: cfg.label.clone(),
        n_lambda_draws: cfg.n_lambda_draws,
        reps_per_lambda: cfg.reps_per_lambda,
        mean_ncrve: grand,
        across_var,
        within_var,
        ratio: if within_var > 0.0 { across_var / within_var } else { f64::INFINITY },
    })
}

/// Estimator names used in staggered reports.
pub const STAGGERED_ESTIMATORS: [&str; 3] = ["twfe", "switcher_did", "long_difference"];

/// TWFE, switcher and long-difference rejection rates under block-level and
/// unit-level assignment, with group-level CRVE.
pub fn run_staggered_comparison(
    cfg: &StaggeredConfig,
    reps: usize,
    seed: u64,
    level: f64,
    workers: usize,
) -> Result<Vec<RateCell>> {
    let mut cells = Vec::new();
    for (i, &scheme) in cfg.assignments.iter().enumerate() {
        let design = cfg.design(scheme);
        design.spec.validate()?;
        let out = replicate(reps, derive_seed(seed, i as u64), workers, |_, rng| {
            let sim = simulate_panel_with(&design.spec, design.n_groups, design.n_periods, &design.timing, rng)?;
            let p = &sim.panel;
            let est = [
                twfe_regression(p)?,
                switcher_did(p, ComparisonSet::NeverTreated)?,
                long_difference(p, cfg.max_horizon, ComparisonSet::NeverTreated)?,
            ];
            est.iter().map(|e| Ok(t_test(e.alpha_hat, &crve_group(e)?, level).reject)).collect::<Result<Vec<bool>>>()
        })?;
        for (q, name) in STAGGERED_ESTIMATORS.iter().enumerate() {
            let p = rate(out.iter().filter(|o| o[q]).count(), reps);
            cells.push(RateCell {
                params: params(&[("rho", cfg.rho), ("factor_var", cfg.factor_var)]),
                label: scheme.name().into(),
                estimator: (*name).into(),
                variance: VarianceMethod::CrveGroup.name().into(),
                rate: p,
                mc_se: binomial_se(p, reps),
                reps,
                psd_adjusted: 0,
            });
        }
    }
    Ok(cells)
}

/// Bivariate normal `(α̂₁, α̂₀)` with mean zero; the pre-test on `α̂₀` uses
/// the understated variance `var0/(1+κ)`. Reports moments of `α̂₁`
/// unconditionally and given a pass.
pub fn run_pretest_normal_model(cfg: &NormalModelConfig, reps: usize, seed: u64, workers: usize) -> Result<NormalModelCell> {
    let NormalModelConfig { var1, var0, cov, gap_inflation, pretest_level } = *cfg;
    if !(var1 > 0.0 && var0 > 0.0) || cov * cov > var1 * var0 || !cov.is_finite() {
        return Err(Error::BadCov(format!("[[{var1}, {cov}], [{cov}, {var0}]] is not a valid covariance")));
    }
    if !(gap_inflation >= 0.0) || !(pretest_level > 0.0 && pretest_level < 1.0) {
        return Err(Error::Config("inflation must be >= 0 and the pre-test level in (0, 1)".into()));
    }
    if reps < 2 {
        return Err(Error::Config("need at least two replications".into()));
    }
    let crit = Normal::standard().inverse_cdf(1.0 - pretest_level / 2.0);
    let sd0 = var0.sqrt();
    let reported_sd0 = (var0 / (1.0 + gap_inflation)).sqrt();
    let slope = cov / var0;
    let resid_sd = (var1 - cov * cov / var0).max(0.0).sqrt();
    let draws = replicate(reps, seed, workers, |_, rng| {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let a0 = sd0 * z0;
        let a1 = slope * a0 + resid_sd * z1;
        Ok((a1, (a0 / reported_sd0).abs() <= crit))
    })?;
    let moments = |xs: &mut dyn Iterator<Item = f64>| -> (f64, f64, usize) {
        let v: Vec<f64> = xs.collect();
        let n = v.len();
        if n < 2 {
            return (f64::NAN, f64::NAN, n);
        }
        let m = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, var, n)
    };
    let (um, uv, _) = moments(&mut draws.iter().map(|d| d.0));
    let (cm, cv, np) = moments(&mut draws.iter().filter(|d| d.1).map(|d| d.0));
    let se_var = |v: f64, n: usize| v * (2.0 / (n.max(2) - 1) as f64).sqrt();
    Ok(NormalModelCell {
        gap_inflation,
        pretest_level,
        alpha: 0.0,
        uncond_mean: um,
        cond_mean: cm,
        uncond_var: uv,
        cond_var: cv,
        pass_rate: rate(np, reps),
        cond_mean_se: (cv / np.max(1) as f64).sqrt(),
        uncond_var_se: se_var(uv, reps),
        cond_var_se: se_var(cv, np),
        reps,
    })
}

/// MC estimate of `E[(∇X)²]` for a stationary AR(1) over `paths` paths,
/// halves as pre and post windows. Returns mean and MC standard error.
pub fn mc_nabla_moment(rho: f64, t: usize, sigma_nu2: f64, paths: usize, seed: u64, workers: usize) -> Result<(f64, f64)> {
    let spec = ArSpec::stationary(rho, sigma_nu2);
    spec.validate()?;
    if t < 2 || t % 2 != 0 {
        return Err(Error::BadT(t));
    }
    const CHUNK: usize = 1000;
    let chunks = paths.div_ceil(CHUNK);
    let h = t / 2;
    let sums = replicate(chunks, seed, workers, |c, rng| {
        let m = CHUNK.min(paths - c * CHUNK);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..m {
            let x = draw_ar1_path(&spec, t, rng)?;
            let pre: f64 = x[..h].iter().sum::<f64>() / h as f64;
            let post: f64 = x[h..].iter().sum::<f64>() / h as f64;
            let d2 = (post - pre).powi(2);
            s1 += d2;
            s2 += d2 * d2;
        }
        Ok((s1, s2))
    })?;
    let n = paths as f64;
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1));
    let mean = s1 / n;
    let var = (s2 / n - mean * mean) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Normalised `E[(∇X)²]` over even `T` in `2..=t_max`, optionally with MC
/// checks.
pub fn nabla_curve(rhos: &[f64], t_max: usize, mc_paths: usize, seed: u64, workers: usize) -> Result<Vec<NablaPoint>> {
    let mut out = Vec::new();
    for (i, &rho) in rhos.iter().enumerate() {
        for t in (2..=t_max).step_by(2) {
            let value = normalized_nabla_second_moment(rho, t)?;
            let (mc_value, mc_se) = if mc_paths > 1 {
                let (m, se) = mc_nabla_moment(rho, t, (1.0 + rho) / 2.0, mc_paths, derive_seed(seed, (i * 1000 + t) as u64), workers)?;
                (Some(m), Some(se))
            } else {
                (None, None)
            };
            out.push(NablaPoint { rho, t, value, mc_value, mc_se });
        }
    }
    Ok(out)
}
