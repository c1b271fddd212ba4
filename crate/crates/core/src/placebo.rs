//! Placebo audits: randomly assigned fake interventions on observed panels.
//!
//! Each design cell is a pair of clusters and a pair of periods. Within a
//! cell a two-period DID is estimated on the groups of both clusters, the
//! placebo "treatment" being assigned either to one of the two clusters or
//! to individual groups at random. A correctly sized procedure rejects in
//! about `level` of the cells.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dgp::draw_ar1_path;
use crate::dgp::{psd_sqrt, ArSpec};
use crate::error::{Error, Result};
use crate::estimators::first_difference;
use crate::montecarlo::{binomial_se, replicate};
use crate::panel::{GroupTable, MicroPanel, MicroRow, OutcomeGrid, PanelData};
use crate::rng::{derive_seed, seeded, SimRng};
use crate::variance::{t_test, variance_for, Corrections, VarianceMethod};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    /// Each group of the two clusters treated with probability `p`.
    UnitRandom { p: f64 },
    /// One of the two clusters treated as a whole.
    ClusterRandom,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::UnitRandom { .. } => "unit_random",
            Scheme::ClusterRandom => "cluster_random",
        }
    }

    fn code(self) -> u64 {
        match self {
            Scheme::UnitRandom { .. } => 0,
            Scheme::ClusterRandom => 1,
        }
    }
}

fn default_min() -> usize {
    20
}

fn one() -> usize {
    1
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::UnitRandom { p: 0.5 }, Scheme::ClusterRandom]
}

fn crve() -> VarianceMethod {
    VarianceMethod::CrveGroup
}

fn five_pct() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceboPlan {
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    /// Period distances to sweep.
    #[serde(default)]
    pub deltas: Vec<usize>,
    /// Explicit `(pre, post)` period pairs; used instead of `deltas` when set.
    #[serde(default)]
    pub period_pairs: Vec<(usize, usize)>,
    /// Cohort distances for the two-dimensional sweep.
    #[serde(default)]
    pub group_deltas: Vec<usize>,
    #[serde(default = "one")]
    pub reps_per_cell: usize,
    /// Clusters with fewer groups are dropped.
    #[serde(default = "default_min")]
    pub min_per_arm: usize,
    #[serde(default = "crve")]
    pub variance: VarianceMethod,
    #[serde(default = "five_pct")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
}

impl Default for PlaceboPlan {
    fn default() -> Self {
        Self {
            schemes: default_schemes(),
            deltas: vec![1, 2, 3, 4, 6, 8],
            period_pairs: Vec::new(),
            group_deltas: Vec::new(),
            reps_per_cell: 1,
            min_per_arm: 20,
            variance: VarianceMethod::CrveGroup,
            level: 0.05,
            seed: 0,
            workers: 0,
        }
    }
}

/// Outcome grid with the cluster label of every group.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboData {
    pub grid: OutcomeGrid,
    /// Cluster index of each group.
    pub cluster: Vec<usize>,
    pub cluster_names: Vec<String>,
    pub cohort: Option<Vec<usize>>,
    pub cohort_names: Vec<String>,
}

fn index_labels(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    for l in labels {
        if !names.contains(l) {
            names.push(l.clone());
        }
    }
    if names.iter().all(|n| n.parse::<f64>().is_ok()) {
        names.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        names.sort();
    }
    let pos: BTreeMap<&String, usize> = names.iter().enumerate().map(|(i, n)| (n, i)).collect();
    (labels.iter().map(|l| pos[l]).collect(), names)
}

impl PlaceboData {
    pub fn from_table(t: &GroupTable) -> Result<Self> {
        let labels = t.cluster.as_ref().ok_or_else(|| Error::Schema(vec!["cluster".into()]))?;
        let (cluster, cluster_names) = index_labels(labels);
        let (cohort, cohort_names) = match &t.cohort {
            Some(c) => {
                let (i, n) = index_labels(c);
                (Some(i), n)
            }
            None => (None, Vec::new()),
        };
        Ok(Self { grid: t.grid.clone(), cluster, cluster_names, cohort, cohort_names })
    }

    fn members(&self, labels: &[usize], k: usize) -> Vec<usize> {
        (0..labels.len()).filter(|&j| labels[j] == k).collect()
    }
}

/// One placebo design: the two arms' label indices and the period pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignCell {
    pub delta: usize,
    pub arms: (usize, usize),
    pub periods: (usize, usize),
}

fn period_pairs(plan: &PlaceboPlan, t: usize) -> Result<Vec<(usize, usize)>> {
    if !plan.period_pairs.is_empty() {
        for &(a, b) in &plan.period_pairs {
            if a >= b || b >= t {
                return Err(Error::PeriodOutOfRange { index: a.max(b), periods: t });
            }
        }
        return Ok(plan.period_pairs.clone());
    }
    let mut out = Vec::new();
    for &d in &plan.deltas {
        if d == 0 {
            return Err(Error::Config("period distance must be at least 1".into()));
        }
        out.extend((0..t.saturating_sub(d)).map(|s| (s, s + d)));
    }
    Ok(out)
}

fn cells_for(
    labels: &[usize],
    n_labels: usize,
    pairs: &[(usize, usize)],
    label_pairs: impl Fn(usize, usize) -> bool,
    min_per_arm: usize,
) -> Vec<DesignCell> {
    let mut size = vec![0usize; n_labels];
    for &l in labels {
        size[l] += 1;
    }
    let mut out = Vec::new();
    for &(pre, post) in pairs {
        for a in 0..n_labels {
            for b in a + 1..n_labels {
                if size[a] >= min_per_arm && size[b] >= min_per_arm && label_pairs(a, b) {
                    out.push(DesignCell { delta: post - pre, arms: (a, b), periods: (pre, post) });
                }
            }
        }
    }
    out
}

/// Every admissible `(cluster pair, period pair)` cell for the plan's
/// period distances, dropping clusters smaller than `min_per_arm`.
pub fn enumerate_designs(data: &PlaceboData, plan: &PlaceboPlan) -> Result<Vec<DesignCell>> {
    let pairs = period_pairs(plan, data.grid.n_periods())?;
    let cells = cells_for(&data.cluster, data.cluster_names.len(), &pairs, |_, _| true, plan.min_per_arm);
    if cells.is_empty() {
        return Err(Error::NoCells);
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboPoint {
    pub delta: usize,
    pub scheme: String,
    pub rate: f64,
    pub mc_se: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub delta_time: usize,
    pub delta_group: usize,
    pub rate: f64,
    pub mc_se: f64,
    pub n_cells: usize,
}

fn cell_rejects(
    data: &PlaceboData,
    labels: &[usize],
    cell: &DesignCell,
    scheme: Scheme,
    plan: &PlaceboPlan,
    rng: &mut SimRng,
) -> Result<bool> {
    let (a, b) = cell.arms;
    let mut groups = data.members(labels, a);
    let n_a = groups.len();
    groups.extend(data.members(labels, b));
    let treated: Vec<bool> = match scheme {
        Scheme::ClusterRandom => {
            let first = rng.random::<bool>();
            (0..groups.len()).map(|i| (i < n_a) == first).collect()
        }
        Scheme::UnitRandom { p } => {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("unit assignment probability {p} must lie in (0, 1)")));
            }
            loop {
                let d: Vec<bool> = (0..groups.len()).map(|_| rng.random::<f64>() < p).collect();
                let k = d.iter().filter(|&&x| x).count();
                if k >= 2 && groups.len() - k >= 2 {
                    break d;
                }
            }
        }
    };
    let sub = data.grid.subset(&groups, &[cell.periods.0, cell.periods.1])?;
    let panel = PanelData::uniform(sub, &treated, 1)?;
    let e = first_difference(&panel)?;
    let v = variance_for(&panel, &e, plan.variance, Corrections::default())?;
    Ok(t_test(e.alpha_hat, &v, plan.level).reject)
}

fn sweep(
    data: &PlaceboData,
    labels: &[usize],
    cells: &[DesignCell],
    scheme: Scheme,
    plan: &PlaceboPlan,
    seed: u64,
) -> Result<(f64, f64, usize)> {
    let reps = plan.reps_per_cell.max(1);
    let out = replicate(cells.len() * reps, seed, plan.workers, |i, rng| {
        cell_rejects(data, labels, &cells[i / reps], scheme, plan, rng)
    })?;
    let n = out.len();
    let p = out.iter().filter(|&&r| r).count() as f64 / n as f64;
    Ok((p, binomial_se(p, n), cells.len()))
}

fn distances(cells: &[DesignCell]) -> Vec<usize> {
    let mut d: Vec<usize> = cells.iter().map(|c| c.delta).collect();
    d.sort_unstable();
    d.dedup();
    d
}

/// Rejection-rate curve by period distance for each assignment scheme.
pub fn run_placebo(data: &PlaceboData, plan: &PlaceboPlan) -> Result<Vec<PlaceboPoint>> {
    let cells = enumerate_designs(data, plan)?;
    let mut out = Vec::new();
    for &scheme in &plan.schemes {
        for delta in distances(&cells) {
            let at: Vec<DesignCell> = cells.iter().copied().filter(|c| c.delta == delta).collect();
            let seed = derive_seed(plan.seed, scheme.code() * 1_000_003 + delta as u64);
            let (rate, mc_se, n_cells) = sweep(data, &data.cluster, &at, scheme, plan, seed)?;
            out.push(PlaceboPoint { delta, scheme: scheme.name().into(), rate, mc_se, n_cells });
        }
    }
    Ok(out)
}

/// Rejection surface over `(δ_time, δ_group)`: the placebo treats all groups
/// of one cohort and compares them with the groups of a cohort `δ_group`
/// positions away.
pub fn run_two_dimension_placebo(data: &PlaceboData, plan: &PlaceboPlan) -> Result<Vec<SurfacePoint>> {
    let cohort = data.cohort.as_ref().ok_or_else(|| Error::Schema(vec!["cohort".into()]))?;
    let pairs = period_pairs(plan, data.grid.n_periods())?;
    if plan.group_deltas.is_empty() {
        return Err(Error::Config("no cohort distances given".into()));
    }
    let mut out = Vec::new();
    for &dg in &plan.group_deltas {
        let cells = cells_for(cohort, data.cohort_names.len(), &pairs, |a, b| b - a == dg, plan.min_per_arm);
        for dt in distances(&cells) {
            let at: Vec<DesignCell> = cells.iter().copied().filter(|c| c.delta == dt).collect();
            let seed = derive_seed(plan.seed, Scheme::ClusterRandom.code() * 1_000_003 + dt as u64);
            let (rate, mc_se, n_cells) = sweep(data, cohort, &at, Scheme::ClusterRandom, plan, seed)?;
            out.push(SurfacePoint { delta_time: dt, delta_group: dg, rate, mc_se, n_cells });
        }
    }
    if out.is_empty() {
        return Err(Error::NoCells);
    }
    Ok(out)
}

/// Synthetic survey-style panel: states containing PUMA-like groups, with
/// state-level AR(1) shocks and, optionally, cohort-level national shocks
/// whose correlation decays with cohort distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticAcs {
    pub n_states: usize,
    pub pumas_per_state: usize,
    #[serde(default = "one")]
    pub n_cohorts: usize,
    pub n_periods: usize,
    pub rho: f64,
    /// Marginal variance of the state shocks.
    pub state_var: f64,
    /// Marginal variance of the cohort shocks.
    #[serde(default)]
    pub cohort_var: f64,
    /// Correlation of cohort shocks at distance `d` is `cohort_decay^d`.
    #[serde(default)]
    pub cohort_decay: f64,
    pub sigma_eps2: f64,
}

impl Default for SyntheticAcs {
    fn default() -> Self {
        Self {
            n_states: 12,
            pumas_per_state: 25,
            n_cohorts: 1,
            n_periods: 12,
            rho: 0.9,
            state_var: 0.15,
            cohort_var: 0.0,
            cohort_decay: 0.0,
            sigma_eps2: 1.0,
        }
    }
}

impl SyntheticAcs {
    /// Cohort-by-state panel for the two-dimensional audit.
    pub fn cohort_default() -> Self {
        Self {
            n_states: 25,
            pumas_per_state: 1,
            n_cohorts: 8,
            n_periods: 12,
            rho: 0.95,
            state_var: 0.0,
            cohort_var: 0.6,
            cohort_decay: 0.97,
            sigma_eps2: 1.0,
        }
    }

    fn n_groups(&self) -> usize {
        self.n_states * self.pumas_per_state * self.n_cohorts
    }

    /// Group-level table with `cluster` = state and, for several cohorts,
    /// `cohort` labels.
    pub fn table(&self, seed: u64) -> Result<GroupTable> {
        let (s, p, k, t) = (self.n_states, self.pumas_per_state, self.n_cohorts, self.n_periods);
        if s == 0 || p == 0 || k == 0 || t < 2 {
            return Err(Error::InvalidSpec("synthetic panel needs states, groups, cohorts and two periods".into()));
        }
        let mut rng = seeded(seed);
        let state_proc = ArSpec::with_marginal_variance(self.rho, self.state_var);
        let cohort_proc = ArSpec::with_marginal_variance(self.rho, self.cohort_var);
        let state: Vec<Vec<f64>> = (0..s).map(|_| draw_ar1_path(&state_proc, t, &mut rng)).collect::<Result<_>>()?;
        let raw: Vec<Vec<f64>> = (0..k).map(|_| draw_ar1_path(&cohort_proc, t, &mut rng)).collect::<Result<_>>()?;
        let corr: Vec<Vec<f64>> =
            (0..k).map(|a| (0..k).map(|b| self.cohort_decay.powi((a as i32 - b as i32).abs())).collect()).collect();
        let l = psd_sqrt(&corr, k)?;
        let cohort: Vec<Vec<f64>> =
            (0..k).map(|a| (0..t).map(|q| (0..k).map(|b| l[(a, b)] * raw[b][q]).sum()).collect()).collect();
        let sd = self.sigma_eps2.sqrt();
        let n = self.n_groups();
        let mut values = Vec::with_capacity(n * t);
        let (mut ids, mut clusters, mut cohorts) = (Vec::new(), Vec::new(), Vec::new());
        for si in 0..s {
            for pi in 0..p {
                for ci in 0..k {
                    ids.push(if k > 1 { format!("s{:02}_p{:02}_c{}", si + 1, pi + 1, ci + 1) } else { format!("s{:02}_p{:02}", si + 1, pi + 1) });
                    clusters.push(format!("s{:02}", si + 1));
                    cohorts.push(format!("{}", ci + 1));
                    for q in 0..t {
                        let e: f64 = rng.sample(StandardNormal);
                        values.push(state[si][q] + cohort[ci][q] + sd * e);
                    }
                }
            }
        }
        let grid = OutcomeGrid::new(values, ids, (1..=t).map(|q| q.to_string()).collect())?;
        Ok(GroupTable { grid, treat_start: None, cluster: Some(clusters), cohort: (k > 1).then_some(cohorts) })
    }

    /// Person-level rows: `persons` draws around each group-period mean,
    /// with person noise `person_var`. Group means of the rows estimate the
    /// group table with extra noise `person_var / persons`.
    pub fn micro(&self, seed: u64, persons: usize, person_var: f64) -> Result<MicroPanel> {
        let table = self.table(seed)?;
        let mut rng = seeded(derive_seed(seed, 77));
        let (g, t) = (table.grid.n_groups(), table.grid.n_periods());
        let sd = person_var.sqrt();
        let mut rows = Vec::with_capacity(g * t * persons);
        let mut order: Vec<usize> = (0..persons).collect();
        for j in 0..g {
            for q in 0..t {
                order.shuffle(&mut rng);
                for &i in &order {
                    let e: f64 = rng.sample(StandardNormal);
                    rows.push(MicroRow {
                        unit: format!("{}_{}", table.grid.group_ids()[j], i),
                        group: table.grid.group_ids()[j].clone(),
                        time: table.grid.time_ids()[q].clone(),
                        outcome: table.grid.value(j, q) + sd * e,
                        weight: 1.0,
                        cluster: table.cluster.as_ref().map(|c| c[j].clone()),
                        cohort: table.cohort.as_ref().map(|c| c[j].clone()),
                    });
                }
            }
        }
        Ok(MicroPanel { rows })
    }
}

/// Placebo experiment on generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPlaceboConfig {
    pub fixture: SyntheticAcs,
    pub plan: PlaceboPlan,
    #[serde(default)]
    pub surface_fixture: Option<SyntheticAcs>,
    #[serde(default)]
    pub surface_plan: Option<PlaceboPlan>,
}

impl Default for SyntheticPlaceboConfig {
    fn default() -> Self {
        Self {
            fixture: SyntheticAcs::default(),
            plan: PlaceboPlan { reps_per_cell: 2, ..PlaceboPlan::default() },
            surface_fixture: Some(SyntheticAcs::cohort_default()),
            surface_plan: Some(PlaceboPlan {
                schemes: vec![Scheme::ClusterRandom],
                deltas: vec![1, 3, 6, 9],
                group_deltas: vec![1, 3, 6],
                reps_per_cell: 4,
                ..PlaceboPlan::default()
            }),
        }
    }
}

/// Runs the curve (and surface, if configured) on freshly generated data.
pub fn run_synthetic_placebo(
    cfg: &SyntheticPlaceboConfig,
    seed: u64,
    level: f64,
    workers: usize,
) -> Result<(Vec<PlaceboPoint>, Vec<SurfacePoint>)> {
    let data = PlaceboData::from_table(&cfg.fixture.table(derive_seed(seed, 0))?)?;
    let plan = PlaceboPlan { seed: derive_seed(seed, 1), level, workers, ..cfg.plan.clone() };
    let curve = run_placebo(&data, &plan)?;
    let surface = match (&cfg.surface_fixture, &cfg.surface_plan) {
        (Some(f), Some(p)) => {
            let data = PlaceboData::from_table(&f.table(derive_seed(seed, 2))?)?;
            let plan = PlaceboPlan { seed: derive_seed(seed, 3), level, workers, ..p.clone() };
            run_two_dimension_placebo(&data, &plan)?
        }
        _ => Vec::new(),
    };
    Ok((curve, surface))
}
