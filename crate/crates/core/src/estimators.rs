//! Point estimators and their per-group residual combinations.
//!
//! Every estimator is assembled from one or more 2×2-style comparisons:
//! a set of switching groups, a set of comparison groups, a pre window and a
//! post window. The estimate is a weighted average of the comparison DIDs and
//! each group's influence `ψ_j` is its total contribution to `α̂ − α`, so the
//! group-level CRVE is `Σ ψ_j²` for every estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{nabla_row, PanelData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    Twfe,
    Fd,
    Switcher,
    Longdiff,
    PlaceboPre,
    TwfeRegression,
}

impl EstimatorTag {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorTag::Twfe => "twfe",
            EstimatorTag::Fd => "fd",
            EstimatorTag::Switcher => "switcher",
            EstimatorTag::Longdiff => "longdiff",
            EstimatorTag::PlaceboPre => "placebo_pre",
            EstimatorTag::TwfeRegression => "twfe_regression",
        }
    }
}

impl std::str::FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "twfe" => EstimatorTag::Twfe,
            "fd" => EstimatorTag::Fd,
            "switcher" | "switcher_did" => EstimatorTag::Switcher,
            "longdiff" | "long_difference" => EstimatorTag::Longdiff,
            "placebo_pre" => EstimatorTag::PlaceboPre,
            "twfe_regression" => EstimatorTag::TwfeRegression,
            other => return Err(Error::Config(format!("unknown estimator `{other}`"))),
        })
    }
}

/// Windows and weight of one comparison entering an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub pre: Vec<usize>,
    pub post: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub tag: EstimatorTag,
    pub alpha_hat: f64,
    /// Residual post−pre combination per group, scaled so that the group
    /// CRVE reads `(1/N_1²) Σ_treated Ŵ² + (1/N_0²) Σ_control Ŵ²`.
    /// Zero for groups that enter no comparison.
    pub what: Vec<f64>,
    /// Contribution of each group to `α̂ − α`.
    pub influence: Vec<f64>,
    /// Whether a group counts on the treated side of the record.
    pub treated: Vec<bool>,
    /// Whether a group enters any comparison.
    pub used: Vec<bool>,
    pub n_treated: usize,
    pub n_control: usize,
    pub windows: Vec<Window>,
}

impl EstimateRecord {
    pub fn n_clusters(&self) -> usize {
        self.n_treated + self.n_control
    }
}

/// Which groups may serve as comparisons for a switching cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonSet {
    /// Groups that are never treated.
    #[default]
    NeverTreated,
    /// Never-treated groups plus groups still untreated through the
    /// comparison's last period.
    NotYetTreated,
}

struct Cell {
    pre: Vec<usize>,
    post: Vec<usize>,
    switchers: Vec<usize>,
    controls: Vec<usize>,
    weight: f64,
}

fn combine(p: &PanelData, tag: EstimatorTag, cells: Vec<Cell>) -> EstimateRecord {
    let n = p.n_groups();
    let total: f64 = cells.iter().map(|c| c.weight).sum();
    let grid = p.outcomes();
    let mut alpha_hat = 0.0;
    let mut influence = vec![0.0; n];
    let mut used = vec![false; n];
    let mut windows = Vec::with_capacity(cells.len());
    for c in &cells {
        let w = c.weight / total;
        let arm = |groups: &[usize]| -> (Vec<f64>, f64) {
            let v: Vec<f64> = groups.iter().map(|&j| nabla_row(grid.row(j), &c.pre, &c.post)).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v, m)
        };
        let (v1, m1) = arm(&c.switchers);
        let (v0, m0) = arm(&c.controls);
        alpha_hat += w * (m1 - m0);
        let (n1, n0) = (c.switchers.len() as f64, c.controls.len() as f64);
        for (&j, v) in c.switchers.iter().zip(&v1) {
            influence[j] += w * (v - m1) / n1;
            used[j] = true;
        }
        for (&j, v) in c.controls.iter().zip(&v0) {
            influence[j] -= w * (v - m0) / n0;
            used[j] = true;
        }
        windows.push(Window { pre: c.pre.clone(), post: c.post.clone(), weight: w });
    }
    finish(p, tag, alpha_hat, influence, used, windows)
}

fn finish(
    p: &PanelData,
    tag: EstimatorTag,
    alpha_hat: f64,
    influence: Vec<f64>,
    used: Vec<bool>,
    windows: Vec<Window>,
) -> EstimateRecord {
    let treated = p.treated_flags();
    let n_treated = (0..p.n_groups()).filter(|&j| used[j] && treated[j]).count();
    let n_control = (0..p.n_groups()).filter(|&j| used[j] && !treated[j]).count();
    let what = influence
        .iter()
        .zip(&treated)
        .map(|(&psi, &d)| if d { n_treated as f64 * psi } else { -(n_control as f64) * psi })
        .collect();
    EstimateRecord { tag, alpha_hat, what, influence, treated, used, n_treated, n_control, windows }
}

fn split_arms(p: &PanelData) -> (Vec<usize>, Vec<usize>) {
    (0..p.n_groups()).partition(|&j| p.is_treated(j))
}

fn uniform_start(p: &PanelData) -> Result<usize> {
    p.uniform_t_star().ok_or(Error::StaggeredUnsupported)
}

/// DID of group means with pre = periods before `t*`, post = from `t*` on.
pub fn twfe(p: &PanelData) -> Result<EstimateRecord> {
    let k = uniform_start(p)?;
    let (switchers, controls) = split_arms(p);
    Ok(combine(
        p,
        EstimatorTag::Twfe,
        vec![Cell { pre: (0..k).collect(), post: (k..p.n_periods()).collect(), switchers, controls, weight: 1.0 }],
    ))
}

/// TWFE restricted to the last pre-period and the first post-period.
pub fn first_difference(p: &PanelData) -> Result<EstimateRecord> {
    let k = uniform_start(p)?;
    let (switchers, controls) = split_arms(p);
    Ok(combine(p, EstimatorTag::Fd, vec![Cell { pre: vec![k - 1], post: vec![k], switchers, controls, weight: 1.0 }]))
}

fn comparison_groups(p: &PanelData, set: ComparisonSet, last_period: usize) -> Vec<usize> {
    (0..p.n_groups())
        .filter(|&j| match (p.treat_start(j), set) {
            (None, _) => true,
            (Some(s), ComparisonSet::NotYetTreated) => s > last_period,
            (Some(_), ComparisonSet::NeverTreated) => false,
        })
        .collect()
}

fn cohort_members(p: &PanelData, k: usize) -> Vec<usize> {
    (0..p.n_groups()).filter(|&j| p.treat_start(j) == Some(k)).collect()
}

/// Switch-period DIDs: cohort switching after `k` pre-periods compared with
/// untreated groups between periods `k−1` and `k`, weighted by cohort size.
pub fn switcher_did(p: &PanelData, set: ComparisonSet) -> Result<EstimateRecord> {
    let mut cells = Vec::new();
    for k in p.cohorts() {
        let switchers = cohort_members(p, k);
        let controls = comparison_groups(p, set, k);
        if controls.is_empty() {
            return Err(Error::NoComparisonGroup(k));
        }
        let weight = switchers.len() as f64;
        cells.push(Cell { pre: vec![k - 1], post: vec![k], switchers, controls, weight });
    }
    Ok(combine(p, EstimatorTag::Switcher, cells))
}

/// Long differences `Y_{k+l} − Y_{k−1}` for horizons `l = 0..=max_horizon`,
/// equal weight per (cohort, horizon) cell.
pub fn long_difference(p: &PanelData, max_horizon: usize, set: ComparisonSet) -> Result<EstimateRecord> {
    let t = p.n_periods();
    let mut cells = Vec::new();
    for k in p.cohorts() {
        let switchers = cohort_members(p, k);
        for l in 0..=max_horizon {
            let post = k + l;
            if post >= t {
                return Err(Error::HorizonUnavailable { cohort: k, horizon: l });
            }
            let controls = comparison_groups(p, set, post);
            if controls.is_empty() {
                return Err(Error::NoComparisonGroup(k));
            }
            cells.push(Cell { pre: vec![k - 1], post: vec![post], switchers: switchers.clone(), controls, weight: 1.0 });
        }
    }
    Ok(combine(p, EstimatorTag::Longdiff, cells))
}

/// Placebo DID between pre-treatment periods `s` (as "post") and `base`.
pub fn pretest_coefficient(p: &PanelData, s: usize, base: usize) -> Result<EstimateRecord> {
    let first = p.cohorts().first().copied().ok_or(Error::NoTreated)?;
    for q in [s, base] {
        if q >= p.n_periods() {
            return Err(Error::PeriodOutOfRange { index: q, periods: p.n_periods() });
        }
        if q >= first {
            return Err(Error::PostPeriodInPretest(q));
        }
    }
    if s == base {
        return Err(Error::OverlappingWindow(s));
    }
    let (switchers, controls) = split_arms(p);
    Ok(combine(
        p,
        EstimatorTag::PlaceboPre,
        vec![Cell { pre: vec![base], post: vec![s], switchers, controls, weight: 1.0 }],
    ))
}

/// Two-way within-transformed treatment dummy `d̃_jt` (row-major).
pub fn demeaned_treatment(p: &PanelData) -> Vec<f64> {
    let (n, t) = (p.n_groups(), p.n_periods());
    let d: Vec<f64> = (0..n * t).map(|k| if p.d(k / t, k % t) { 1.0 } else { 0.0 }).collect();
    two_way_demean(&d, n, t)
}

/// Removes row and column means from a row-major `n × t` matrix.
pub fn two_way_demean(x: &[f64], n: usize, t: usize) -> Vec<f64> {
    let row: Vec<f64> = (0..n).map(|j| x[j * t..(j + 1) * t].iter().sum::<f64>() / t as f64).collect();
    let col: Vec<f64> = (0..t).map(|s| (0..n).map(|j| x[j * t + s]).sum::<f64>() / n as f64).collect();
    let all = row.iter().sum::<f64>() / n as f64;
    (0..n * t).map(|k| x[k] - row[k / t] - col[k % t] + all).collect()
}

/// TWFE coefficient from the within-transformed regression, valid for any
/// timing. Also returns the pooled residuals and `d̃`.
pub struct TwfeFit {
    pub alpha_hat: f64,
    pub d_tilde: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sum_d2: f64,
}

pub fn twfe_fit(p: &PanelData) -> TwfeFit {
    let (n, t) = (p.n_groups(), p.n_periods());
    let d_tilde = demeaned_treatment(p);
    let y_tilde = two_way_demean(p.outcomes().values(), n, t);
    let sum_d2: f64 = d_tilde.iter().map(|v| v * v).sum();
    let alpha_hat = d_tilde.iter().zip(&y_tilde).map(|(d, y)| d * y).sum::<f64>() / sum_d2;
    let residuals = y_tilde.iter().zip(&d_tilde).map(|(y, d)| y - alpha_hat * d).collect();
    TwfeFit { alpha_hat, d_tilde, residuals, sum_d2 }
}

/// Two-way fixed effects regression coefficient on `d_jt`, with group
/// influences taken from the regression scores.
pub fn twfe_regression(p: &PanelData) -> Result<EstimateRecord> {
    let fit = twfe_fit(p);
    let t = p.n_periods();
    let influence: Vec<f64> = (0..p.n_groups())
        .map(|j| (0..t).map(|s| fit.d_tilde[j * t + s] * fit.residuals[j * t + s]).sum::<f64>() / fit.sum_d2)
        .collect();
    let window = match p.uniform_t_star() {
        Some(k) => vec![Window { pre: (0..k).collect(), post: (k..t).collect(), weight: 1.0 }],
        None => Vec::new(),
    };
    Ok(finish(p, EstimatorTag::TwfeRegression, fit.alpha_hat, influence, vec![true; p.n_groups()], window))
}

/// Dispatches on a tag. `max_horizon` applies to long differences only.
pub fn estimate(p: &PanelData, tag: EstimatorTag, max_horizon: usize, set: ComparisonSet) -> Result<EstimateRecord> {
    match tag {
        EstimatorTag::Twfe => twfe(p),
        EstimatorTag::Fd => first_difference(p),
        EstimatorTag::Switcher => switcher_did(p, set),
        EstimatorTag::Longdiff => long_difference(p, max_horizon, set),
        EstimatorTag::TwfeRegression => twfe_regression(p),
        EstimatorTag::PlaceboPre => {
            let k = p.cohorts()[0];
            if k < 2 {
                return Err(Error::PostPeriodInPretest(k));
            }
            pretest_coefficient(p, k - 1, k - 2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::OutcomeGrid;

    fn panel(rows: &[Vec<f64>], starts: Vec<Option<usize>>) -> PanelData {
        PanelData::new(OutcomeGrid::from_rows(rows).unwrap(), starts).unwrap()
    }

    #[test]
    fn two_by_two_did() {
        let p = panel(&[vec![1.0, 2.0], vec![3.0, 5.0]], vec![None, Some(1)]);
        let e = twfe(&p).unwrap();
        assert_eq!(e.alpha_hat, 1.0);
        assert_eq!(e.what, vec![0.0, 0.0]);
    }

    #[test]
    fn fixed_effects_absorbed() {
        let theta = [0.3, -1.0, 2.0, 0.7];
        let gamma = [1.0, -0.5, 0.25, 4.0];
        let rows: Vec<Vec<f64>> = theta.iter().map(|a| gamma.iter().map(|g| a + g).collect()).collect();
        let p = panel(&rows, vec![None, Some(2), Some(2), None]);
        assert!(twfe(&p).unwrap().alpha_hat.abs() < 1e-12);
    }

    #[test]
    fn staggered_twfe_rejected() {
        let p = panel(&[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]], vec![None, Some(1), Some(2)]);
        assert_eq!(twfe(&p).unwrap_err(), Error::StaggeredUnsupported);
    }

    #[test]
    fn fd_equals_twfe_at_t2() {
        let p = panel(&[vec![1.0, 2.5], vec![3.0, 5.0], vec![0.5, -1.0]], vec![None, Some(1), None]);
        let (a, b) = (twfe(&p).unwrap(), first_difference(&p).unwrap());
        assert_eq!(a.alpha_hat, b.alpha_hat);
        assert_eq!(a.what, b.what);
    }

    #[test]
    fn fd_uses_only_switch_periods() {
        let rows = vec![vec![9.0, 1.0, 2.0, -7.0], vec![-3.0, 3.0, 5.0, 11.0]];
        let p = panel(&rows, vec![None, Some(2)]);
        assert_eq!(first_difference(&p).unwrap().alpha_hat, (5.0 - 3.0) - (2.0 - 1.0));
    }

    #[test]
    fn switcher_on_common_timing_is_fd() {
        let rows = vec![vec![1.0, 2.0, 4.0], vec![0.0, 1.0, 5.0], vec![2.0, 2.5, 3.0], vec![1.0, 0.0, 2.0]];
        let p = panel(&rows, vec![None, Some(2), None, Some(2)]);
        let (a, b) = (switcher_did(&p, ComparisonSet::NeverTreated).unwrap(), first_difference(&p).unwrap());
        assert_eq!(a.alpha_hat, b.alpha_hat);
        assert_eq!(a.influence, b.influence);
    }

    #[test]
    fn switcher_averages_cohorts() {
        // cohort A switches after period 1, cohort B after period 2
        let rows = vec![
            vec![0.0, 1.0, 3.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 4.0, 5.0],
            vec![0.0, 1.0, 9.0],
        ];
        let p = panel(&rows, vec![None, None, Some(1), Some(2)]);
        let e = switcher_did(&p, ComparisonSet::NeverTreated).unwrap();
        let did_a = 4.0 - (1.0 + 0.0) / 2.0;
        let did_b = 8.0 - (2.0 + 1.0) / 2.0;
        assert!((e.alpha_hat - (did_a + did_b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn switcher_needs_comparison() {
        let grid = OutcomeGrid::from_rows(&[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert!(PanelData::new(grid, vec![Some(1), Some(2)]).is_err());
        let p = panel(&[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]], vec![Some(1), Some(2), None]);
        assert!(switcher_did(&p, ComparisonSet::NeverTreated).is_ok());
    }

    #[test]
    fn long_difference_horizon_zero_is_switcher() {
        let rows = vec![vec![1.0, 2.0, 4.0, 3.0], vec![0.0, 1.0, 5.0, 6.0], vec![2.0, 2.5, 3.0, 1.0]];
        let p = panel(&rows, vec![None, Some(2), None]);
        let a = long_difference(&p, 0, ComparisonSet::NeverTreated).unwrap();
        let b = switcher_did(&p, ComparisonSet::NeverTreated).unwrap();
        assert_eq!(a.alpha_hat, b.alpha_hat);
    }

    #[test]
    fn long_difference_full_horizon_is_twfe_with_last_pre() {
        let rows = vec![vec![1.0, 2.0, 4.0], vec![0.0, 1.0, 5.0], vec![2.0, 2.5, 3.0], vec![7.0, -1.0, 0.5]];
        let p = panel(&rows, vec![None, Some(1), None, Some(1)]);
        let e = long_difference(&p, 1, ComparisonSet::NeverTreated).unwrap();
        let nabla = |r: &Vec<f64>| (r[1] + r[2]) / 2.0 - r[0];
        let expect = (nabla(&rows[1]) + nabla(&rows[3])) / 2.0 - (nabla(&rows[0]) + nabla(&rows[2])) / 2.0;
        assert!((e.alpha_hat - expect).abs() < 1e-12);
        let err = long_difference(&p, 2, ComparisonSet::NeverTreated).unwrap_err();
        assert_eq!(err.code(), "HORIZON_UNAVAILABLE");
    }

    #[test]
    fn pretest_checks_periods() {
        let rows = vec![vec![1.0, 2.0, 4.0, 3.0], vec![1.0, 2.0, 5.0, 6.0]];
        let p = panel(&rows, vec![None, Some(3)]);
        assert_eq!(pretest_coefficient(&p, 1, 0).unwrap().alpha_hat, 0.0);
        assert_eq!(pretest_coefficient(&p, 3, 2).unwrap_err(), Error::PostPeriodInPretest(3));
    }

    #[test]
    fn what_sums_to_zero_within_arms() {
        let rows = vec![vec![1.0, 2.0, 4.0], vec![0.0, 1.0, 5.0], vec![2.0, 2.5, 3.0], vec![7.0, -1.0, 0.5]];
        let p = panel(&rows, vec![None, Some(1), None, Some(1)]);
        let e = twfe(&p).unwrap();
        assert!((e.what[1] + e.what[3]).abs() < 1e-12);
        assert!((e.what[0] + e.what[2]).abs() < 1e-12);
    }

    #[test]
    fn regression_matches_did_under_common_timing() {
        let rows = vec![vec![1.0, 2.0, 4.0], vec![0.0, 1.0, 5.0], vec![2.0, 2.5, 3.0], vec![7.0, -1.0, 0.5]];
        let p = panel(&rows, vec![None, Some(2), None, Some(2)]);
        let (a, b) = (twfe(&p).unwrap(), twfe_regression(&p).unwrap());
        assert!((a.alpha_hat - b.alpha_hat).abs() < 1e-12);
        for (x, y) in a.influence.iter().zip(&b.influence) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
