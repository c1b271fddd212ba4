//! Variance estimators and t-tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::estimators::{twfe_fit, EstimateRecord, EstimatorTag};
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    CrveGroup,
    HcRobust,
    TwowayCgm,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::CrveGroup => "crve_group",
            VarianceMethod::HcRobust => "hc_robust",
            VarianceMethod::TwowayCgm => "twoway_cgm",
        }
    }
}

impl std::str::FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "crve_group" | "crve" | "cluster" => VarianceMethod::CrveGroup,
            "hc_robust" | "hc" | "robust" => VarianceMethod::HcRobust,
            "twoway_cgm" | "cgm" => VarianceMethod::TwowayCgm,
            other => return Err(Error::Config(format!("unknown variance method `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub method: VarianceMethod,
    pub value: f64,
    /// Student-t degrees of freedom; `None` means a normal reference.
    pub dof: Option<usize>,
    pub psd_adjusted: bool,
}

/// Reference distribution for the two-way estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CgmReference {
    #[default]
    Normal,
    /// Student-t with `min(N, T) − 1` degrees of freedom.
    MinDimension,
}

/// Small-sample options shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corrections {
    /// Apply `G/(G−1)` (cluster) or `n/(n−1)` (HC1, CGM) factors.
    pub small_sample: bool,
    pub cgm_reference: CgmReference,
}

impl Default for Corrections {
    fn default() -> Self {
        Self { small_sample: true, cgm_reference: CgmReference::Normal }
    }
}

impl Corrections {
    pub fn none() -> Self {
        Self { small_sample: false, ..Self::default() }
    }
}

/// Group-level CRVE `(1/N_1²)ΣŴ² + (1/N_0²)ΣŴ²` times `G/(G−1)`, t(G−1) reference.
pub fn crve_group(e: &EstimateRecord) -> Result<VarianceEstimate> {
    crve_group_with(e, Corrections::default())
}

pub fn crve_group_with(e: &EstimateRecord, c: Corrections) -> Result<VarianceEstimate> {
    if e.n_treated < 2 || e.n_control < 2 {
        return Err(Error::TooFewClusters { n_treated: e.n_treated, n_control: e.n_control });
    }
    let g = e.n_clusters();
    let raw: f64 = e.influence.iter().map(|v| v * v).sum();
    let factor = if c.small_sample { g as f64 / (g as f64 - 1.0) } else { 1.0 };
    Ok(VarianceEstimate { method: VarianceMethod::CrveGroup, value: raw * factor, dof: Some(g - 1), psd_adjusted: false })
}

/// CRVE clustered on coarser labels: `Σ_c (Σ_{j∈c} ψ_j)²` over clusters of
/// the groups entering the estimate, times `G/(G−1)`, t(G−1) reference.
pub fn crve_clustered(e: &EstimateRecord, cluster_of_group: &[usize], c: Corrections) -> Result<VarianceEstimate> {
    if cluster_of_group.len() != e.influence.len() {
        return Err(Error::DimMismatch(format!(
            "{} cluster labels for {} groups",
            cluster_of_group.len(),
            e.influence.len()
        )));
    }
    let mut sums: std::collections::BTreeMap<usize, f64> = Default::default();
    let (mut treated, mut control) = (std::collections::BTreeSet::new(), std::collections::BTreeSet::new());
    for (j, &psi) in e.influence.iter().enumerate() {
        if !e.used[j] {
            continue;
        }
        *sums.entry(cluster_of_group[j]).or_default() += psi;
        if e.treated[j] {
            treated.insert(cluster_of_group[j]);
        } else {
            control.insert(cluster_of_group[j]);
        }
    }
    let g = sums.len();
    if g < 2 {
        return Err(Error::TooFewClusters { n_treated: treated.len(), n_control: control.len() });
    }
    let raw: f64 = sums.values().map(|s| s * s).sum();
    let factor = if c.small_sample { g as f64 / (g as f64 - 1.0) } else { 1.0 };
    Ok(VarianceEstimate { method: VarianceMethod::CrveGroup, value: raw * factor, dof: Some(g - 1), psd_adjusted: false })
}

struct Meats {
    group: f64,
    time: f64,
    cell: f64,
    bread: f64,
    n: usize,
    t: usize,
}

fn score_meats(p: &PanelData) -> Meats {
    let fit = twfe_fit(p);
    let (n, t) = (p.n_groups(), p.n_periods());
    let mut by_group = vec![0.0; n];
    let mut by_time = vec![0.0; t];
    let mut cell = 0.0;
    for k in 0..n * t {
        let s = fit.d_tilde[k] * fit.residuals[k];
        by_group[k / t] += s;
        by_time[k % t] += s;
        cell += s * s;
    }
    Meats {
        group: by_group.iter().map(|v| v * v).sum(),
        time: by_time.iter().map(|v| v * v).sum(),
        cell,
        bread: fit.sum_d2,
        n,
        t,
    }
}

/// HC1 sandwich for the pooled TWFE regression with cells treated as
/// independent: `n/(n−1) Σ(d̃ê)² / (Σd̃²)²`, normal reference.
pub fn hc_robust(p: &PanelData) -> VarianceEstimate {
    hc_robust_with(p, Corrections::default())
}

pub fn hc_robust_with(p: &PanelData, c: Corrections) -> VarianceEstimate {
    let m = score_meats(p);
    let cells = (m.n * m.t) as f64;
    let factor = if c.small_sample { cells / (cells - 1.0) } else { 1.0 };
    VarianceEstimate {
        method: VarianceMethod::HcRobust,
        value: factor * m.cell / (m.bread * m.bread),
        dof: None,
        psd_adjusted: false,
    }
}

/// Two-way (group and period) cluster variance `V_group + V_time − V_cell`
/// on the TWFE scores, clamped at zero when indefinite.
pub fn twoway_cgm(p: &PanelData) -> VarianceEstimate {
    twoway_cgm_with(p, Corrections::default())
}

pub fn twoway_cgm_with(p: &PanelData, c: Corrections) -> VarianceEstimate {
    let m = score_meats(p);
    let cells = (m.n * m.t) as f64;
    let factor = if c.small_sample { cells / (cells - 1.0) } else { 1.0 };
    let raw = factor * (m.group + m.time - m.cell) / (m.bread * m.bread);
    let dof = match c.cgm_reference {
        CgmReference::Normal => None,
        CgmReference::MinDimension => Some(m.n.min(m.t).saturating_sub(1).max(1)),
    };
    VarianceEstimate { method: VarianceMethod::TwowayCgm, value: raw.max(0.0), dof, psd_adjusted: raw < 0.0 }
}

/// Computes `method` for an estimate produced from `p`. Regression-based
/// methods are available for TWFE-type estimates and first differences.
pub fn variance_for(
    p: &PanelData,
    e: &EstimateRecord,
    method: VarianceMethod,
    c: Corrections,
) -> Result<VarianceEstimate> {
    if method == VarianceMethod::CrveGroup {
        return crve_group_with(e, c);
    }
    let sub;
    let panel = match e.tag {
        EstimatorTag::Twfe | EstimatorTag::TwfeRegression => p,
        EstimatorTag::Fd => {
            let k = p.uniform_t_star().ok_or(Error::StaggeredUnsupported)?;
            let all: Vec<usize> = (0..p.n_groups()).collect();
            sub = PanelData::new(p.outcomes().subset(&all, &[k - 1, k])?, vec_starts(p, 1))?;
            &sub
        }
        other => {
            return Err(Error::Config(format!("{} is only defined for twfe and fd, not {}", method.name(), other.name())))
        }
    };
    Ok(match method {
        VarianceMethod::HcRobust => hc_robust_with(panel, c),
        VarianceMethod::TwowayCgm => twoway_cgm_with(panel, c),
        VarianceMethod::CrveGroup => unreachable!(),
    })
}

fn vec_starts(p: &PanelData, k: usize) -> Vec<Option<usize>> {
    p.treat_starts().iter().map(|s| s.map(|_| k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub reject: bool,
}

/// Two-sided test of `α = 0`.
pub fn t_test(alpha_hat: f64, v: &VarianceEstimate, level: f64) -> TTest {
    if v.value <= 0.0 {
        let reject = alpha_hat != 0.0;
        let t = if reject { alpha_hat.signum() * f64::INFINITY } else { 0.0 };
        return TTest { t, p: if reject { 0.0 } else { 1.0 }, reject };
    }
    let t = alpha_hat / v.value.sqrt();
    let p = two_sided_p(t, v.dof);
    TTest { t, p, reject: p < level }
}

/// Two-sided p-value of `t` under a Student-t (`Some(dof)`) or normal reference.
pub fn two_sided_p(t: f64, dof: Option<usize>) -> f64 {
    let tail = match dof {
        Some(d) => StudentsT::new(0.0, 1.0, d as f64).expect("positive dof").cdf(-t.abs()),
        None => Normal::standard().cdf(-t.abs()),
    };
    (2.0 * tail).min(1.0)
}

/// Upper `level/2` critical value of the reference distribution.
pub fn critical_value(level: f64, dof: Option<usize>) -> f64 {
    match dof {
        Some(d) => StudentsT::new(0.0, 1.0, d as f64).expect("positive dof").inverse_cdf(1.0 - level / 2.0),
        None => Normal::standard().inverse_cdf(1.0 - level / 2.0),
    }
}

/// Decision rule with a precomputed critical value, equivalent to
/// `t_test(..).reject` but without evaluating a CDF.
pub fn rejects(alpha_hat: f64, v: &VarianceEstimate, crit: f64) -> bool {
    if v.value <= 0.0 {
        return alpha_hat != 0.0;
    }
    alpha_hat.abs() > crit * v.value.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::twfe;
    use crate::panel::OutcomeGrid;

    fn record(what: [f64; 4]) -> EstimateRecord {
        let influence = vec![what[0] / 2.0, what[1] / 2.0, -what[2] / 2.0, -what[3] / 2.0];
        EstimateRecord {
            tag: EstimatorTag::Twfe,
            alpha_hat: 0.0,
            what: what.to_vec(),
            influence,
            treated: vec![true, true, false, false],
            used: vec![true; 4],
            n_treated: 2,
            n_control: 2,
            windows: Vec::new(),
        }
    }

    #[test]
    fn crve_arithmetic() {
        let e = record([1.0, -1.0, 2.0, -2.0]);
        assert_eq!(crve_group_with(&e, Corrections::none()).unwrap().value, 2.5);
        let v = crve_group(&e).unwrap();
        assert!((v.value - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(v.dof, Some(3));
        assert_eq!(crve_group(&record([0.0; 4])).unwrap().value, 0.0);
    }

    #[test]
    fn crve_needs_two_clusters_per_arm() {
        let p = PanelData::new(
            OutcomeGrid::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0], vec![0.0, 1.0]]).unwrap(),
            vec![None, Some(1), None],
        )
        .unwrap();
        let err = crve_group(&twfe(&p).unwrap()).unwrap_err();
        assert_eq!(err.code(), "TOO_FEW_CLUSTERS");
    }

    #[test]
    fn t_test_cases() {
        let v = VarianceEstimate { method: VarianceMethod::CrveGroup, value: 4.0, dof: None, psd_adjusted: false };
        let r = t_test(0.0, &v, 0.05);
        assert_eq!((r.p, r.reject), (1.0, false));
        let r = t_test(1.959964 * 2.0, &v, 0.05);
        assert!((r.p - 0.05).abs() < 1e-5);
        let zero = VarianceEstimate { value: 0.0, ..v };
        assert!(t_test(0.1, &zero, 0.05).reject);
        assert!(!t_test(0.0, &zero, 0.05).reject);
    }

    #[test]
    fn large_dof_t_is_normal() {
        let a = two_sided_p(1.96, Some(1_000_000));
        let b = two_sided_p(1.96, None);
        assert!((a - b).abs() < 1e-5);
        assert!((critical_value(0.05, None) - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn zero_residuals_give_zero_variance() {
        let rows: Vec<Vec<f64>> = (0..4).map(|j| (0..4).map(|t| (j * t) as f64 * 0.0 + j as f64 + t as f64).collect()).collect();
        let p = PanelData::new(OutcomeGrid::from_rows(&rows).unwrap(), vec![None, Some(2), None, Some(2)]).unwrap();
        assert!(hc_robust(&p).value.abs() < 1e-24);
        assert!(twoway_cgm(&p).value.abs() < 1e-24);
    }

    #[test]
    fn cgm_equals_hc_with_two_periods() {
        let rows = vec![vec![0.3, 1.2], vec![-0.4, 2.0], vec![1.1, 0.1], vec![0.0, 0.9], vec![2.0, -1.0]];
        let p = PanelData::new(OutcomeGrid::from_rows(&rows).unwrap(), vec![None, Some(1), Some(1), None, None]).unwrap();
        let (h, c) = (hc_robust(&p), twoway_cgm(&p));
        assert!((h.value - c.value).abs() < 1e-12 * h.value);
    }

    #[test]
    fn crve_matches_regression_scores_without_corrections() {
        let rows = vec![vec![0.3, 1.2, 0.7], vec![-0.4, 2.0, 1.0], vec![1.1, 0.1, 0.0], vec![0.0, 0.9, 3.0], vec![2.0, -1.0, 0.2]];
        let p = PanelData::new(OutcomeGrid::from_rows(&rows).unwrap(), vec![None, Some(1), Some(1), None, None]).unwrap();
        let e = twfe(&p).unwrap();
        let fit = twfe_fit(&p);
        let t = p.n_periods();
        let meat: f64 = (0..p.n_groups())
            .map(|j| (0..t).map(|s| fit.d_tilde[j * t + s] * fit.residuals[j * t + s]).sum::<f64>().powi(2))
            .sum();
        let v = crve_group_with(&e, Corrections::none()).unwrap().value;
        assert!((v - meat / fit.sum_d2.powi(2)).abs() < 1e-12);
    }
}
