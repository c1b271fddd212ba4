//! Closed-form moments and limits used as oracles for the simulations.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dgp::{ArSpec, FixedPopulation};
use crate::error::{Error, Result};
use crate::montecarlo::{two_period_rejection, TwoPeriodProbe};

/// `E[(∇X)²]` for a stationary AR(1) split into equal pre and post halves.
pub fn nabla_second_moment(rho: f64, t: usize, sigma_nu2: f64) -> Result<f64> {
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::BadRho(rho));
    }
    if t == 0 || t % 2 != 0 {
        return Err(Error::BadT(t));
    }
    // (1−ρ²)·m²·E/(2σ²) = m + 2Σ(m−k)ρ^k − ρ(Σ_{k<m}ρ^k)², which vanishes at ρ = 1.
    // Dividing its integer coefficients by (1−ρ) keeps T=2 exact: 2σ²/(1+ρ).
    let m = (t / 2) as i64;
    let b = |k: i64| -> i64 {
        if k == 0 {
            m
        } else if k < m {
            2 * (m - k) - k
        } else if k == m {
            -m
        } else {
            -(2 * m - k)
        }
    };
    let mut acc = 0i64;
    let q: Vec<f64> = (0..2 * m - 1)
        .map(|k| {
            acc += b(k);
            acc as f64
        })
        .collect();
    let poly = q.iter().rev().fold(0.0, |v, c| v * rho + c);
    Ok(2.0 * sigma_nu2 / (1.0 + rho) * poly / (m * m) as f64)
}

/// Fig. A.1 normalisation `σ_ν² = (1+ρ)/2`, which makes the T=2 value one.
pub fn normalized_nabla_second_moment(rho: f64, t: usize) -> Result<f64> {
    nabla_second_moment(rho, t, (1.0 + rho) / 2.0)
}

/// `E[(mean_post X − mean_pre X)²]` for an arbitrary pair of windows of a
/// stationary AR(1), summed exactly from the autocovariances.
pub fn ar_window_moment(spec: &ArSpec, pre: &[usize], post: &[usize]) -> Result<f64> {
    spec.validate()?;
    if spec.rho.abs() >= 1.0 {
        return Err(Error::BadRho(spec.rho));
    }
    if pre.is_empty() {
        return Err(Error::EmptyWindow("pre"));
    }
    if post.is_empty() {
        return Err(Error::EmptyWindow("post"));
    }
    let var = spec.stationary_variance();
    let cov = |a: &[usize], b: &[usize]| -> f64 {
        let mut s = 0.0;
        for &i in a {
            for &j in b {
                s += spec.rho.powi((i as i64 - j as i64).unsigned_abs() as i32);
            }
        }
        var * s / (a.len() * b.len()) as f64
    };
    Ok(cov(post, post) + cov(pre, pre) - 2.0 * cov(pre, post))
}

/// Inputs to the variance-gap formulas. `sigma_eps2_*` are variances of
/// `∇ε_j` (post−pre mean differences), not of single-period shocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapInputs {
    pub mu_gap: Vec<f64>,
    /// `E[(∇λ)ᵀ(∇λ)]`, or `Ω` under the local-to-zero approximation.
    pub second_moment: Vec<Vec<f64>>,
    pub sigma_eps2_treated: f64,
    pub sigma_eps2_control: f64,
    pub c: f64,
}

fn quad_form(v: &[f64], m: &[Vec<f64>]) -> Result<f64> {
    let f = v.len();
    if m.len() != f || m.iter().any(|r| r.len() != f) {
        return Err(Error::DimMismatch(format!("vector of length {f} with a {} x ? matrix", m.len())));
    }
    Ok((0..f).map(|i| (0..f).map(|j| v[i] * m[i][j] * v[j]).sum::<f64>()).sum())
}

fn trace_product(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let f = b.len();
    if a.len() != f || a.iter().any(|r| r.len() != f) {
        return Err(Error::DimMismatch("loading covariance and second moment differ in size".into()));
    }
    Ok((0..f).map(|i| (0..f).map(|j| a[i][j] * b[j][i]).sum::<f64>()).sum())
}

/// `(μ₁ − μ₀)ᵀ E[(∇λ)ᵀ(∇λ)] (μ₁ − μ₀)`, the amount by which the CRVE
/// understates the variance of `α̂` as `N` grows.
pub fn prop1_variance_gap(g: &GapInputs) -> Result<f64> {
    quad_form(&g.mu_gap, &g.second_moment)
}

/// Variance of `α̂` given the arm sizes:
/// `gap + σ²(1)/N₁ + σ²(0)/N₀ + tr(Σ_μ(1) M)/N₁ + tr(Σ_μ(0) M)/N₀`.
pub fn exact_finite_variance(
    g: &GapInputs,
    n1: usize,
    n0: usize,
    loading_cov_treated: &[Vec<f64>],
    loading_cov_control: &[Vec<f64>],
) -> Result<f64> {
    if n1 == 0 || n0 == 0 {
        return Err(Error::DimMismatch("arm sizes must be positive".into()));
    }
    let (n1, n0) = (n1 as f64, n0 as f64);
    let gap = if g.mu_gap.is_empty() { 0.0 } else { prop1_variance_gap(g)? };
    let f = g.second_moment.len();
    let trace = |cov: &[Vec<f64>]| if f == 0 { Ok(0.0) } else { trace_product(cov, &g.second_moment) };
    Ok(gap
        + g.sigma_eps2_treated / n1
        + g.sigma_eps2_control / n0
        + trace(loading_cov_treated)? / n1
        + trace(loading_cov_control)? / n0)
}

fn noise_denominator(s1: f64, s0: f64, c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidSpec(format!("treated share {c} must lie in (0, 1)")));
    }
    let d = s1 / c + s0 / (1.0 - c);
    if d <= 0.0 || !d.is_finite() {
        return Err(Error::ZeroNoise);
    }
    Ok(d)
}

/// Limiting variance `1 + κ` of the CRVE t-statistic under local-to-zero
/// common shocks with `√N ∇λ` having second moment `omega`.
pub fn corollary_t_variance(g: &GapInputs, omega: &[Vec<f64>]) -> Result<f64> {
    let denom = noise_denominator(g.sigma_eps2_treated, g.sigma_eps2_control, g.c)?;
    Ok(1.0 + quad_form(&g.mu_gap, omega)? / denom)
}

/// Limiting t-statistic variance in the paired-factor model.
pub fn prop_a1_t_variance(
    sigma_lambda2: f64,
    sigma_delta2: f64,
    sigma_eps2_1: f64,
    sigma_eps2_0: f64,
    c: f64,
) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidSpec(format!("treated share {c} must lie in (0, 1)")));
    }
    let common = sigma_lambda2 / c + sigma_delta2 / (1.0 - c);
    let denom = common + sigma_eps2_1 / c + sigma_eps2_0 / (1.0 - c);
    if denom <= 0.0 {
        return Err(Error::ZeroNoise);
    }
    Ok(1.0 + common / denom)
}

/// Finite-`N` variance of `α̂` in the paired model (fixed assignment).
pub fn paired_finite_variance(sigma_lambda2: f64, sigma_delta2: f64, s1: f64, s0: f64, n1: usize, n0: usize) -> f64 {
    let (n1, n0) = (n1 as f64, n0 as f64);
    2.0 * sigma_lambda2 / n1 + 2.0 * sigma_delta2 / n0 + s1 / n1 + s0 / n0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignVariances {
    /// Exact variance under block-level assignment.
    pub v_corr: f64,
    /// Exact variance had the same number of groups been assigned one by one.
    pub v_uncorr: f64,
    /// `V_corr − V_uncorr` assembled from its four terms.
    pub four_term_gap: f64,
    pub terms: [f64; 4],
}

/// Design-based variances of the DID estimator for a fixed population
/// with a block factor decomposition and constant treatment effects.
///
/// With `l_f = ∇λ(f) − ∇λ̄`, `e_j = ∇ε_j − ∇ε̄` and `b_f` the block mean of
/// `e`, complete randomisation of `F₁` of `F` blocks gives
/// `V_corr = A Σ_f (l_f + b_f)²` with `A = F / (F₁ F₀ (F−1))`, and unit-level
/// randomisation of `N₁ = n F₁` of `N` groups gives
/// `V_uncorr = B Σ_j (l_{f(j)} + e_j)²` with `B = N / (N₁ N₀ (N−1))`.
pub fn design_variances(pop: &FixedPopulation) -> Result<DesignVariances> {
    pop.validate()?;
    let lat = pop.latents.as_ref().ok_or_else(|| Error::InvalidSpec("population carries no block decomposition".into()))?;
    let (n, t, f) = (pop.y0.n_groups(), pop.y0.n_periods(), pop.n_blocks);
    if f <= 2 {
        return Err(Error::TooFewBlocks(f));
    }
    if n <= 2 {
        return Err(Error::TooFewBlocks(n));
    }
    let pre: Vec<usize> = (0..pop.t_star).collect();
    let post: Vec<usize> = (pop.t_star..t).collect();
    let nab = |row: &[f64]| crate::panel::nabla_row(row, &pre, &post);
    let dl: Vec<f64> = lat.lambda.iter().map(|p| nab(p)).collect();
    let de: Vec<f64> = (0..n).map(|j| nab(&lat.eps[j * t..(j + 1) * t])).collect();
    let lbar = dl.iter().sum::<f64>() / f as f64;
    let ebar = de.iter().sum::<f64>() / n as f64;
    let l: Vec<f64> = dl.iter().map(|v| v - lbar).collect();
    let e: Vec<f64> = de.iter().map(|v| v - ebar).collect();
    let size = n / f;
    let mut b = vec![0.0; f];
    for (j, v) in e.iter().enumerate() {
        b[pop.block(j)] += v / size as f64;
    }

    let (f1, f0) = (pop.treated_blocks as f64, (f - pop.treated_blocks) as f64);
    let ff = f as f64;
    let a = ff / (f1 * f0 * (ff - 1.0));
    let nf = n as f64;
    let sz = size as f64;
    let (n1, n0) = (sz * f1, sz * f0);
    let bb = nf / (n1 * n0 * (nf - 1.0));

    let v_corr = a * l.iter().zip(&b).map(|(x, y)| (x + y).powi(2)).sum::<f64>();
    let v_uncorr = bb * (0..n).map(|j| (l[pop.block(j)] + e[j]).powi(2)).sum::<f64>();

    let sum_l2: f64 = l.iter().map(|x| x * x).sum();
    let sum_e2: f64 = e.iter().map(|x| x * x).sum();
    let sum_lb: f64 = l.iter().zip(&b).map(|(x, y)| x * y).sum();
    let mut cross = 0.0;
    for blk in 0..f {
        let members = &e[blk * size..(blk + 1) * size];
        let s: f64 = members.iter().sum();
        let sq: f64 = members.iter().map(|x| x * x).sum();
        cross += s * s - sq;
    }
    let terms = [
        sum_l2 * (a - sz * bb),
        sum_e2 * (a / (sz * sz) - bb),
        2.0 * (a - sz * bb) * sum_lb,
        a / (sz * sz) * cross,
    ];
    Ok(DesignVariances { v_corr, v_uncorr, four_term_gap: terms.iter().sum(), terms })
}

/// Two-sided rejection probability of a nominal `level` test when the
/// statistic is `N(0, 1+κ)`.
pub fn rejection_from_inflation(kappa: f64, level: f64) -> Result<f64> {
    if !(kappa >= 0.0) {
        return Err(Error::InvalidSpec(format!("kappa {kappa} must be >= 0")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidSpec(format!("level {level} must lie in (0, 1)")));
    }
    let z = Normal::standard();
    let crit = z.inverse_cdf(1.0 - level / 2.0);
    Ok(2.0 * z.cdf(-crit / (1.0 + kappa).sqrt()))
}

/// Inflation `κ` that produces rejection probability `target`.
pub fn inflation_for_rejection(target: f64, level: f64) -> Result<f64> {
    if !(target >= level && target < 1.0) {
        return Err(Error::NoBracket { target, at_zero: level });
    }
    let z = Normal::standard();
    let crit = z.inverse_cdf(1.0 - level / 2.0);
    let q = z.inverse_cdf(1.0 - target / 2.0);
    Ok((crit / q).powi(2) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub reps: usize,
    pub tolerance: f64,
    pub max_iter: usize,
    pub level: f64,
    pub workers: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { reps: 10_000, tolerance: 0.005, max_iter: 60, level: 0.05, workers: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Marginal variance of each arm factor.
    pub lambda_var: f64,
    pub achieved: f64,
    pub probes: usize,
}

/// Bisection on the arm-level factor variance until the two-period main
/// test rejects at `target` (± tolerance). `base` fixes the group count,
/// treated count, factor persistence and noise level.
pub fn calibrate_factor_variance(
    target: f64,
    base: &TwoPeriodProbe,
    seed: u64,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    if !(target >= opts.level && target < 1.0) {
        return Err(Error::NoBracket { target, at_zero: opts.level });
    }
    let rate = |v: f64| two_period_rejection(&TwoPeriodProbe { lambda_var: v, ..*base }, opts.reps, seed, opts.level, opts.workers);
    let mut probes = 1;
    let at_zero = rate(0.0)?;
    if (at_zero - target).abs() <= opts.tolerance {
        return Ok(Calibration { lambda_var: 0.0, achieved: at_zero, probes });
    }
    if target < at_zero {
        return Err(Error::NoBracket { target, at_zero });
    }
    // analytic starting point from the normal approximation
    let kappa = inflation_for_rejection(target, opts.level)?;
    let noise = (base.sigma_eps2 * 2.0) * (1.0 / base.n_treated as f64 + 1.0 / (base.n_groups - base.n_treated) as f64);
    let guess = (kappa * noise / (4.0 * (1.0 - base.rho))).max(1e-6);
    let (mut lo, mut hi) = (0.0, guess);
    let mut at_hi = rate(hi)?;
    probes += 1;
    while at_hi < target {
        lo = hi;
        hi *= 2.0;
        at_hi = rate(hi)?;
        probes += 1;
        if probes > opts.max_iter {
            return Err(Error::NoBracket { target, at_zero });
        }
    }
    if (at_hi - target).abs() <= opts.tolerance {
        return Ok(Calibration { lambda_var: hi, achieved: at_hi, probes });
    }
    let mut best = (hi, at_hi);
    while probes < opts.max_iter {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid)?;
        probes += 1;
        if (r - target).abs() < (best.1 - target).abs() {
            best = (mid, r);
        }
        if (r - target).abs() <= opts.tolerance {
            return Ok(Calibration { lambda_var: mid, achieved: r, probes });
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Calibration { lambda_var: best.0, achieved: best.1, probes })
}
