//! Synthetic panels from linear factor models.
//!
//! Outcomes follow `Y_jt = d_jt α_jt + θ_j + γ_t + λ_t μ_j + ε_jt`. Draws are
//! consumed in a fixed order (assignment, loadings, factors, ε, α, θ, γ) so
//! that changing the fixed-effect scales leaves every other draw untouched.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{OutcomeGrid, PanelData};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArInit {
    #[default]
    Stationary,
    Zero,
}

/// AR(1) process `X_t = ρ X_{t-1} + ν_t` with Gaussian innovations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArSpec {
    pub rho: f64,
    pub sigma_nu2: f64,
    #[serde(default)]
    pub init: ArInit,
}

impl ArSpec {
    pub fn stationary(rho: f64, sigma_nu2: f64) -> Self {
        Self { rho, sigma_nu2, init: ArInit::Stationary }
    }

    /// Stationary process whose marginal variance is `var`.
    pub fn with_marginal_variance(rho: f64, var: f64) -> Self {
        Self::stationary(rho, var * (1.0 - rho * rho))
    }

    pub fn white_noise(sigma2: f64) -> Self {
        Self::stationary(0.0, sigma2)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() || (self.init == ArInit::Stationary && self.rho.abs() >= 1.0) {
            return Err(Error::BadRho(self.rho));
        }
        if !(self.sigma_nu2.is_finite() && self.sigma_nu2 >= 0.0) {
            return Err(Error::InvalidSpec(format!("innovation variance {} must be >= 0", self.sigma_nu2)));
        }
        Ok(())
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma_nu2 / (1.0 - self.rho * self.rho)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws `t` consecutive values of the process.
pub fn draw_ar1_path<R: Rng + ?Sized>(spec: &ArSpec, t: usize, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut path = Vec::with_capacity(t);
    fill_ar1(spec, t, rng, &mut path);
    Ok(path)
}

fn fill_ar1<R: Rng + ?Sized>(spec: &ArSpec, t: usize, rng: &mut R, out: &mut Vec<f64>) {
    let sd = spec.sigma_nu2.sqrt();
    let mut x = match spec.init {
        ArInit::Stationary => spec.stationary_variance().sqrt() * normal(rng),
        ArInit::Zero => sd * normal(rng),
    };
    for s in 0..t {
        if s > 0 {
            x = spec.rho * x + sd * normal(rng);
        }
        out.push(x);
    }
}

/// How factors map onto groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Structure {
    /// `F = loading_mean_treated.len()` factors with Gaussian loadings per arm.
    #[default]
    Generic,
    /// Treated and control groups are split into pairs sharing one factor each.
    Paired,
    /// One factor loading 1 on every treated group, another on every control.
    ArmLevel,
    /// Groups split into equal contiguous blocks, one factor per block.
    Blocks { n_blocks: usize },
}

/// Treatment assignment rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assignment {
    /// Each group treated independently with probability `c`; degenerate
    /// draws are redrawn.
    Bernoulli { c: f64 },
    Flags { treated: Vec<bool> },
    /// The first `n_treated` groups are treated.
    FixedCount { n_treated: usize },
    /// A uniformly random subset of `n_treated` groups is treated.
    RandomCount { n_treated: usize },
    /// Whole blocks of contiguous groups are treated, `treated_blocks` out of `n_blocks`.
    Grouped { n_blocks: usize, treated_blocks: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TreatmentEffect {
    pub alpha: f64,
    /// When positive, `α_jt` is drawn iid `N(alpha, sigma_alpha2)`.
    #[serde(default)]
    pub sigma_alpha2: f64,
}

/// Full description of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorModelSpec {
    #[serde(default)]
    pub structure: Structure,
    #[serde(default)]
    pub loading_mean_treated: Vec<f64>,
    #[serde(default)]
    pub loading_mean_control: Vec<f64>,
    #[serde(default)]
    pub loading_cov_treated: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub loading_cov_control: Option<Vec<Vec<f64>>>,
    /// One process per factor, or a single process shared by all factors.
    /// Arm-level and paired structures accept `[treated, control]`.
    #[serde(default)]
    pub factor_process: Vec<ArSpec>,
    #[serde(default = "unit")]
    pub sigma_eps2_treated: f64,
    #[serde(default = "unit")]
    pub sigma_eps2_control: f64,
    #[serde(default)]
    pub fe_group_sd: f64,
    #[serde(default)]
    pub fe_time_sd: f64,
    pub assignment: Assignment,
    #[serde(default)]
    pub treatment_effect: TreatmentEffect,
}

fn unit() -> f64 {
    1.0
}

impl FactorModelSpec {
    /// No factors, unit noise, the given assignment.
    pub fn noise_only(assignment: Assignment) -> Self {
        Self {
            structure: Structure::Generic,
            loading_mean_treated: Vec::new(),
            loading_mean_control: Vec::new(),
            loading_cov_treated: None,
            loading_cov_control: None,
            factor_process: Vec::new(),
            sigma_eps2_treated: 1.0,
            sigma_eps2_control: 1.0,
            fe_group_sd: 0.0,
            fe_time_sd: 0.0,
            assignment,
            treatment_effect: TreatmentEffect::default(),
        }
    }

    /// Arm-level factors following `process` and unit noise.
    pub fn arm_level(process: ArSpec, assignment: Assignment) -> Self {
        Self { structure: Structure::ArmLevel, factor_process: vec![process], ..Self::noise_only(assignment) }
    }

    pub fn n_generic_factors(&self) -> usize {
        self.loading_mean_treated.len()
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.factor_process {
            p.validate()?;
        }
        for v in [self.sigma_eps2_treated, self.sigma_eps2_control, self.treatment_effect.sigma_alpha2] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("variance {v} must be finite and >= 0")));
            }
        }
        for v in [self.fe_group_sd, self.fe_time_sd] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("fixed-effect scale {v} must be finite and >= 0")));
            }
        }
        if let Assignment::Bernoulli { c } = self.assignment {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidSpec(format!("treated share c = {c} must lie in (0, 1)")));
            }
        }
        let needed = match self.structure {
            Structure::Generic => {
                let f = self.n_generic_factors();
                if self.loading_mean_control.len() != f {
                    return Err(Error::DimMismatch(format!(
                        "loading means have lengths {} and {}",
                        f,
                        self.loading_mean_control.len()
                    )));
                }
                for cov in [&self.loading_cov_treated, &self.loading_cov_control].into_iter().flatten() {
                    psd_sqrt(cov, f)?;
                }
                f
            }
            Structure::ArmLevel | Structure::Paired => 2,
            Structure::Blocks { n_blocks } => {
                if n_blocks == 0 {
                    return Err(Error::InvalidSpec("block structure needs at least one block".into()));
                }
                n_blocks
            }
        };
        let k = self.factor_process.len();
        if needed > 0 && k != 1 && k != needed {
            return Err(Error::DimMismatch(format!(
                "{k} factor processes given, expected 1 or {needed}"
            )));
        }
        if needed > 0 && k == 0 && self.structure != Structure::Generic {
            return Err(Error::InvalidSpec("structure requires a factor process".into()));
        }
        if self.structure == Structure::Generic && needed > 0 && k == 0 {
            return Err(Error::InvalidSpec("generic factors require a factor process".into()));
        }
        Ok(())
    }

    fn process(&self, i: usize) -> &ArSpec {
        if self.factor_process.len() == 1 {
            &self.factor_process[0]
        } else {
            &self.factor_process[i]
        }
    }
}

/// Returns `L` with `L Lᵀ = Σ`, rejecting asymmetric or indefinite input.
pub fn psd_sqrt(cov: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if cov.len() != dim || cov.iter().any(|r| r.len() != dim) {
        return Err(Error::DimMismatch(format!("covariance must be {dim} x {dim}")));
    }
    let m = DMatrix::from_fn(dim, dim, |i, j| cov[i][j]);
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..dim {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::BadCov("covariance is not symmetric".into()));
            }
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadCov("covariance has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(m);
    if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < -1e-9 * scale {
            return Err(Error::BadCov(format!("covariance is not PSD (eigenvalue {min})")));
        }
    }
    let mut l = eig.eigenvectors;
    for (j, ev) in eig.eigenvalues.iter().enumerate() {
        let s = ev.max(0.0).sqrt();
        for i in 0..dim {
            l[(i, j)] *= s;
        }
    }
    Ok(l)
}

/// Treatment timing for the treated groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    /// Every treated group has this many pre-periods.
    Uniform(usize),
    /// Treated units (blocks under grouped assignment, groups otherwise)
    /// receive these pre-period counts round-robin in index order.
    Cohorts(Vec<usize>),
}

/// Factor loadings actually used for a draw.
#[derive(Debug, Clone, PartialEq)]
pub enum Loadings {
    /// `N × F` loading vectors.
    Dense(Vec<Vec<f64>>),
    /// Group `j` loads 1 on factor `index[j]` and 0 elsewhere.
    Indicator(Vec<usize>),
}

impl Loadings {
    fn common(&self, factors: &[Vec<f64>], j: usize, t: usize) -> f64 {
        match self {
            Loadings::Dense(mu) => mu[j].iter().zip(factors).map(|(m, f)| m * f[t]).sum(),
            Loadings::Indicator(idx) => factors[idx[j]][t],
        }
    }
}

/// Every random component behind a simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub treated: Vec<bool>,
    pub treat_start: Vec<Option<usize>>,
    /// `F × T` factor paths.
    pub factors: Vec<Vec<f64>>,
    pub loadings: Loadings,
    /// Row-major `N × T`.
    pub eps: Vec<f64>,
    /// Row-major `N × T` treatment effects (applied where `d_jt = 1`).
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Block label per group when the structure or assignment uses blocks.
    pub block: Option<Vec<usize>>,
}

impl Latents {
    /// Rebuilds the outcome matrix from the components.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.theta.len();
        let t = self.gamma.len();
        let mut y = Vec::with_capacity(n * t);
        for j in 0..n {
            for s in 0..t {
                let d = self.treat_start[j].is_some_and(|k| s >= k);
                let k = j * t + s;
                let mut v = self.theta[j] + self.gamma[s] + self.eps[k];
                if !self.factors.is_empty() {
                    v += self.loadings.common(&self.factors, j, s);
                }
                if d {
                    v += self.alpha[k];
                }
                y.push(v);
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub panel: PanelData,
    pub latents: Latents,
}

/// Label of group `j` among `n_blocks` equal contiguous blocks.
pub fn block_of(j: usize, n: usize, n_blocks: usize) -> usize {
    j * n_blocks / n
}

fn check_blocks(n: usize, n_blocks: usize) -> Result<()> {
    if n_blocks == 0 || n % n_blocks != 0 {
        return Err(Error::InvalidSpec(format!("{n} groups cannot be split into {n_blocks} equal blocks")));
    }
    Ok(())
}

fn draw_assignment<R: Rng + ?Sized>(
    a: &Assignment,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<bool>, Option<Vec<usize>>, Vec<usize>)> {
    // returns flags, block labels (when grouped) and the order of treated units
    let count_check = |k: usize| {
        if k == 0 {
            Err(Error::NoTreated)
        } else if k >= n {
            Err(Error::NoControl)
        } else {
            Ok(())
        }
    };
    match a {
        Assignment::Bernoulli { c } => loop {
            let flags: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < *c).collect();
            let k = flags.iter().filter(|&&d| d).count();
            if n < 2 {
                return Err(Error::InvalidSpec("Bernoulli assignment needs at least two groups".into()));
            }
            if k > 0 && k < n {
                return Ok((flags, None, Vec::new()));
            }
        },
        Assignment::Flags { treated } => {
            if treated.len() != n {
                return Err(Error::DimMismatch(format!("{} flags for {n} groups", treated.len())));
            }
            count_check(treated.iter().filter(|&&d| d).count())?;
            Ok((treated.clone(), None, Vec::new()))
        }
        Assignment::FixedCount { n_treated } => {
            count_check(*n_treated)?;
            Ok(((0..n).map(|j| j < *n_treated).collect(), None, Vec::new()))
        }
        Assignment::RandomCount { n_treated } => {
            count_check(*n_treated)?;
            let mut flags = vec![false; n];
            for j in sample(rng, n, *n_treated) {
                flags[j] = true;
            }
            Ok((flags, None, Vec::new()))
        }
        Assignment::Grouped { n_blocks, treated_blocks } => {
            check_blocks(n, *n_blocks)?;
            if *treated_blocks == 0 {
                return Err(Error::NoTreated);
            }
            if treated_blocks >= n_blocks {
                return Err(Error::NoControl);
            }
            let chosen = sample(rng, *n_blocks, *treated_blocks).into_vec();
            let blocks: Vec<usize> = (0..n).map(|j| block_of(j, n, *n_blocks)).collect();
            let flags = blocks.iter().map(|b| chosen.contains(b)).collect();
            Ok((flags, Some(blocks), chosen))
        }
    }
}

fn assign_starts(
    flags: &[bool],
    blocks: Option<&[usize]>,
    block_order: &[usize],
    timing: &Timing,
) -> Vec<Option<usize>> {
    match timing {
        Timing::Uniform(k) => flags.iter().map(|&d| d.then_some(*k)).collect(),
        Timing::Cohorts(list) => {
            let mut next = 0;
            flags
                .iter()
                .enumerate()
                .map(|(j, &d)| {
                    if !d {
                        return None;
                    }
                    match blocks {
                        Some(b) => {
                            let pos = block_order.iter().position(|&x| x == b[j]).unwrap_or(0);
                            Some(list[pos % list.len()])
                        }
                        None => {
                            let k = list[next % list.len()];
                            next += 1;
                            Some(k)
                        }
                    }
                })
                .collect()
        }
    }
}

/// Simulates one panel from `spec` with a fresh generator seeded by `seed`.
pub fn simulate_panel(spec: &FactorModelSpec, n: usize, t: usize, timing: &Timing, seed: u64) -> Result<Simulated> {
    simulate_panel_with(spec, n, t, timing, &mut seeded(seed))
}

/// Simulates one panel drawing from `rng`.
pub fn simulate_panel_with<R: Rng + ?Sized>(
    spec: &FactorModelSpec,
    n: usize,
    t: usize,
    timing: &Timing,
    rng: &mut R,
) -> Result<Simulated> {
    generate(spec, n, t, timing, None, rng)
}

/// Simulates with the factor paths held at `factors` (one `T`-vector per
/// factor); every other component is drawn from `rng`.
pub fn simulate_panel_with_factors<R: Rng + ?Sized>(
    spec: &FactorModelSpec,
    n: usize,
    t: usize,
    timing: &Timing,
    factors: &[Vec<f64>],
    rng: &mut R,
) -> Result<Simulated> {
    generate(spec, n, t, timing, Some(factors), rng)
}

/// Draws only the factor paths that `spec` would use for `n` groups.
pub fn draw_factors<R: Rng + ?Sized>(spec: &FactorModelSpec, n: usize, t: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let count = match spec.structure {
        Structure::Generic => spec.n_generic_factors(),
        Structure::ArmLevel => 2,
        Structure::Blocks { n_blocks } => n_blocks,
        Structure::Paired => {
            return Err(Error::InvalidSpec("paired factor count depends on the assignment".into()))
        }
    };
    let _ = n;
    Ok((0..count)
        .map(|f| {
            let mut path = Vec::with_capacity(t);
            fill_ar1(spec.process(f), t, rng, &mut path);
            path
        })
        .collect())
}

fn generate<R: Rng + ?Sized>(
    spec: &FactorModelSpec,
    n: usize,
    t: usize,
    timing: &Timing,
    fixed_factors: Option<&[Vec<f64>]>,
    rng: &mut R,
) -> Result<Simulated> {
    spec.validate()?;
    if n < 2 || t < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 groups and 2 periods, got {n} x {t}")));
    }
    if let Timing::Cohorts(list) = timing {
        if list.is_empty() {
            return Err(Error::InvalidSpec("cohort list is empty".into()));
        }
    }

    let (treated, assign_blocks, block_order) = draw_assignment(&spec.assignment, n, rng)?;
    let treat_start = assign_starts(&treated, assign_blocks.as_deref(), &block_order, timing);

    // loadings
    let mut block = assign_blocks;
    let (loadings, n_factors, process_of): (Loadings, usize, Vec<usize>) = match &spec.structure {
        Structure::Generic => {
            let f = spec.n_generic_factors();
            let chol = |c: &Option<Vec<Vec<f64>>>| c.as_ref().map(|m| psd_sqrt(m, f)).transpose();
            let (l1, l0) = (chol(&spec.loading_cov_treated)?, chol(&spec.loading_cov_control)?);
            let mut mu = Vec::with_capacity(n);
            for &d in &treated {
                let (mean, l) = if d { (&spec.loading_mean_treated, &l1) } else { (&spec.loading_mean_control, &l0) };
                let mut m = mean.clone();
                if let Some(l) = l {
                    let z: Vec<f64> = (0..f).map(|_| normal(rng)).collect();
                    for (i, mi) in m.iter_mut().enumerate() {
                        *mi += (0..f).map(|k| l[(i, k)] * z[k]).sum::<f64>();
                    }
                }
                mu.push(m);
            }
            (Loadings::Dense(mu), f, (0..f).collect())
        }
        Structure::ArmLevel => {
            let idx = treated.iter().map(|&d| if d { 0 } else { 1 }).collect();
            (Loadings::Indicator(idx), 2, vec![0, 1])
        }
        Structure::Paired => {
            let n1 = treated.iter().filter(|&&d| d).count();
            let n0 = n - n1;
            if n1 % 2 != 0 || n0 % 2 != 0 {
                return Err(Error::OddArm { n1, n0 });
            }
            let (mut k1, mut k0) = (0, 0);
            let idx: Vec<usize> = treated
                .iter()
                .map(|&d| {
                    if d {
                        k1 += 1;
                        (k1 - 1) / 2
                    } else {
                        k0 += 1;
                        n1 / 2 + (k0 - 1) / 2
                    }
                })
                .collect();
            let procs = (0..n / 2).map(|f| if f < n1 / 2 { 0 } else { 1 }).collect();
            (Loadings::Indicator(idx), n / 2, procs)
        }
        Structure::Blocks { n_blocks } => {
            check_blocks(n, *n_blocks)?;
            let idx: Vec<usize> = (0..n).map(|j| block_of(j, n, *n_blocks)).collect();
            block = Some(idx.clone());
            (Loadings::Indicator(idx), *n_blocks, (0..*n_blocks).collect())
        }
    };

    let factors = match fixed_factors {
        Some(f) => {
            if f.len() != n_factors || f.iter().any(|p| p.len() != t) {
                return Err(Error::DimMismatch(format!("expected {n_factors} factor paths of length {t}")));
            }
            f.to_vec()
        }
        None => process_of
            .iter()
            .map(|&p| {
                let mut path = Vec::with_capacity(t);
                if n_factors > 0 {
                    fill_ar1(spec.process(p), t, rng, &mut path);
                }
                path
            })
            .collect(),
    };

    let mut eps = Vec::with_capacity(n * t);
    for &d in &treated {
        let sd = if d { spec.sigma_eps2_treated } else { spec.sigma_eps2_control }.sqrt();
        for _ in 0..t {
            eps.push(sd * normal(rng));
        }
    }
    let te = spec.treatment_effect;
    let alpha = if te.sigma_alpha2 > 0.0 {
        let sd = te.sigma_alpha2.sqrt();
        (0..n * t).map(|_| te.alpha + sd * normal(rng)).collect()
    } else {
        vec![te.alpha; n * t]
    };
    let theta: Vec<f64> = (0..n).map(|_| spec.fe_group_sd * normal(rng)).collect();
    let gamma: Vec<f64> = (0..t).map(|_| spec.fe_time_sd * normal(rng)).collect();

    let latents = Latents { treated, treat_start, factors, loadings, eps, alpha, theta, gamma, block };
    let grid = OutcomeGrid::new(
        latents.reconstruct(),
        (1..=n).map(|j| format!("g{j}")).collect(),
        (1..=t).map(|s| s.to_string()).collect(),
    )?;
    let panel = PanelData::new(grid, latents.treat_start.clone())?;
    Ok(Simulated { panel, latents })
}

/// Appendix-style paired model: the first `n1` groups are treated and both
/// arms are split into pairs sharing a factor.
#[allow(clippy::too_many_arguments)]
pub fn simulate_paired_panel(
    spec: &FactorModelSpec,
    n1: usize,
    n0: usize,
    t: usize,
    t_star: usize,
    seed: u64,
) -> Result<Simulated> {
    simulate_paired_panel_with(spec, n1, n0, t, t_star, &mut seeded(seed))
}

pub fn simulate_paired_panel_with<R: Rng + ?Sized>(
    spec: &FactorModelSpec,
    n1: usize,
    n0: usize,
    t: usize,
    t_star: usize,
    rng: &mut R,
) -> Result<Simulated> {
    if n1 % 2 != 0 || n0 % 2 != 0 {
        return Err(Error::OddArm { n1, n0 });
    }
    let paired = FactorModelSpec {
        structure: Structure::Paired,
        assignment: Assignment::FixedCount { n_treated: n1 },
        ..spec.clone()
    };
    simulate_panel_with(&paired, n1 + n0, t, &Timing::Uniform(t_star), rng)
}

/// A simulated design: spec plus panel dimensions and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelDesign {
    pub spec: FactorModelSpec,
    pub n_groups: usize,
    pub n_periods: usize,
    pub timing: Timing,
}

impl PanelDesign {
    pub fn simulate_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Simulated> {
        simulate_panel_with(&self.spec, self.n_groups, self.n_periods, &self.timing, rng)
    }
}

/// Two-way-cluster experiment: 100 groups, 50 treated, arm-level AR(1)
/// factors with unit innovations, unit iid noise, treatment after `T/2`.
pub fn preset_twoway_mc_dgp(rho: f64, t: usize) -> Result<PanelDesign> {
    let process = ArSpec::stationary(rho, 1.0);
    process.validate()?;
    if t < 2 {
        return Err(Error::BadT(t));
    }
    Ok(PanelDesign {
        spec: FactorModelSpec::arm_level(process, Assignment::FixedCount { n_treated: 50 }),
        n_groups: 100,
        n_periods: t,
        timing: Timing::Uniform(t / 2),
    })
}

/// Pre-test experiment: 100 groups, 50 treated, treatment in the last
/// period only, arm-level stationary AR(1) factors with marginal variance
/// `lambda_var` (zero gives the pure-noise panel).
pub fn preset_pretest_dgp(rho: f64, t: usize, lambda_var: f64) -> Result<PanelDesign> {
    if t < 2 {
        return Err(Error::BadT(t));
    }
    let process = ArSpec::with_marginal_variance(rho, lambda_var);
    process.validate()?;
    Ok(PanelDesign {
        spec: FactorModelSpec::arm_level(process, Assignment::FixedCount { n_treated: 50 }),
        n_groups: 100,
        n_periods: t,
        timing: Timing::Uniform(t - 1),
    })
}

/// Block decomposition kept with a fixed population.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLatents {
    /// `F × T` block factor paths.
    pub lambda: Vec<Vec<f64>>,
    /// Row-major `N × T` idiosyncratic shocks.
    pub eps: Vec<f64>,
}

/// Realised potential outcomes for design-based inference.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPopulation {
    pub y0: OutcomeGrid,
    pub y1: OutcomeGrid,
    pub n_blocks: usize,
    pub treated_blocks: usize,
    pub t_star: usize,
    pub latents: Option<BlockLatents>,
}

impl FixedPopulation {
    pub fn new(
        y0: OutcomeGrid,
        y1: OutcomeGrid,
        n_blocks: usize,
        treated_blocks: usize,
        t_star: usize,
    ) -> Result<Self> {
        let pop = Self { y0, y1, n_blocks, treated_blocks, t_star, latents: None };
        pop.validate()?;
        Ok(pop)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, t) = (self.y0.n_groups(), self.y0.n_periods());
        if self.y1.n_groups() != n || self.y1.n_periods() != t {
            return Err(Error::DimMismatch("Y(0) and Y(1) differ in shape".into()));
        }
        check_blocks(n, self.n_blocks)?;
        if self.treated_blocks == 0 {
            return Err(Error::NoTreated);
        }
        if self.treated_blocks >= self.n_blocks {
            return Err(Error::NoControl);
        }
        if self.t_star == 0 || self.t_star >= t {
            return Err(Error::BadTStar { group: "*".into(), reason: format!("t* = {} with T = {t}", self.t_star) });
        }
        Ok(())
    }

    pub fn block(&self, j: usize) -> usize {
        block_of(j, self.y0.n_groups(), self.n_blocks)
    }

    /// Draws a population from the block factor model. `Y(1) = Y(0) + alpha`.
    #[allow(clippy::too_many_arguments)]
    pub fn draw<R: Rng + ?Sized>(
        n: usize,
        t: usize,
        n_blocks: usize,
        t_star: usize,
        process: &ArSpec,
        sigma_eps2: f64,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        process.validate()?;
        check_blocks(n, n_blocks)?;
        let lambda = draw_paths(process, n_blocks, t, rng);
        let sd = sigma_eps2.sqrt();
        let eps: Vec<f64> = (0..n * t).map(|_| sd * normal(rng)).collect();
        let y0: Vec<f64> =
            (0..n * t).map(|k| lambda[block_of(k / t, n, n_blocks)][k % t] + eps[k]).collect();
        let y1 = y0.iter().map(|v| v + alpha).collect();
        let labels = |m: usize, p: &str| (1..=m).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let times: Vec<String> = (1..=t).map(|s| s.to_string()).collect();
        let mut pop = Self::new(
            OutcomeGrid::new(y0, labels(n, "g"), times.clone())?,
            OutcomeGrid::new(y1, labels(n, "g"), times)?,
            n_blocks,
            n_blocks / 2,
            t_star,
        )?;
        pop.latents = Some(BlockLatents { lambda, eps });
        Ok(pop)
    }
}

fn draw_paths<R: Rng + ?Sized>(process: &ArSpec, count: usize, t: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let mut p = Vec::with_capacity(t);
            fill_ar1(process, t, rng, &mut p);
            p
        })
        .collect()
}

/// One random block allocation: `treated_blocks` blocks drawn uniformly
/// without replacement; treated groups show `Y(1)` from `t*` on.
pub fn simulate_design_based(pop: &FixedPopulation, seed: u64) -> Result<PanelData> {
    simulate_design_based_with(pop, &mut seeded(seed))
}

pub fn simulate_design_based_with<R: Rng + ?Sized>(pop: &FixedPopulation, rng: &mut R) -> Result<PanelData> {
    pop.validate()?;
    let chosen = sample(rng, pop.n_blocks, pop.treated_blocks).into_vec();
    let n = pop.y0.n_groups();
    let t = pop.y0.n_periods();
    let flags: Vec<bool> = (0..n).map(|j| chosen.contains(&pop.block(j))).collect();
    let mut values = Vec::with_capacity(n * t);
    for (j, &d) in flags.iter().enumerate() {
        for s in 0..t {
            values.push(if d && s >= pop.t_star { pop.y1.value(j, s) } else { pop.y0.value(j, s) });
        }
    }
    PanelData::uniform(pop.y0.with_values(values)?, &flags, pop.t_star)
}
