//! Brute-force regression helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use didlab::panel::{OutcomeGrid, PanelData};

pub fn random_panel(rng: &mut ChaCha8Rng, staggered: bool) -> PanelData {
    loop {
        let n = rng.random_range(4..9);
        let t = rng.random_range(2..7);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..t).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let k = rng.random_range(1..t);
        let starts: Vec<Option<usize>> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    Some(if staggered { rng.random_range(1..t) } else { k })
                } else {
                    None
                }
            })
            .collect();
        let treated = starts.iter().filter(|s| s.is_some()).count();
        if treated < 2 || n - treated < 2 {
            continue;
        }
        let grid = OutcomeGrid::from_rows(&rows).unwrap();
        return PanelData::new(grid, starts).unwrap();
    }
}

/// Columns: treatment dummy, all group dummies, period dummies from the second period.
pub fn dummy_design(p: &PanelData) -> (DMatrix<f64>, DVector<f64>) {
    let (n, t) = (p.n_groups(), p.n_periods());
    let k = 1 + n + (t - 1);
    let mut x = DMatrix::zeros(n * t, k);
    let mut y = DVector::zeros(n * t);
    for j in 0..n {
        for s in 0..t {
            let r = j * t + s;
            x[(r, 0)] = if p.d(j, s) { 1.0 } else { 0.0 };
            x[(r, 1 + j)] = 1.0;
            if s > 0 {
                x[(r, n + s)] = 1.0;
            }
            y[r] = p.outcomes().value(j, s);
        }
    }
    (x, y)
}

pub struct Ols {
    pub beta: DVector<f64>,
    pub resid: DVector<f64>,
    pub xtx_inv: DMatrix<f64>,
}

pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Ols {
    let xtx = x.transpose() * x;
    let xtx_inv = xtx.try_inverse().expect("full rank design");
    let beta = &xtx_inv * x.transpose() * y;
    let resid = y - x * &beta;
    Ols { beta, resid, xtx_inv }
}

/// `(X'X)⁻¹ (Σ_c s_c s_cᵀ) (X'X)⁻¹` with `s_c` the summed scores in cluster `c`.
pub fn cluster_sandwich(x: &DMatrix<f64>, fit: &Ols, label: impl Fn(usize) -> usize, n_clusters: usize) -> DMatrix<f64> {
    let k = x.ncols();
    let mut scores = vec![DVector::<f64>::zeros(k); n_clusters];
    for r in 0..x.nrows() {
        scores[label(r)] += x.row(r).transpose() * fit.resid[r];
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in &scores {
        meat += s * s.transpose();
    }
    &fit.xtx_inv * meat * &fit.xtx_inv
}

/// DID and its group-clustered variance from the regression of `∇y_j` on a
/// constant and the treatment flag, with the `G/(G−1)` factor.
pub fn collapsed_crve(p: &PanelData) -> (f64, f64) {
    let k = p.uniform_t_star().expect("uniform timing");
    let (n, t) = (p.n_groups(), p.n_periods());
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DVector::zeros(n);
    for j in 0..n {
        let row = p.outcomes().row(j);
        let pre = row[..k].iter().sum::<f64>() / k as f64;
        let post = row[k..].iter().sum::<f64>() / (t - k) as f64;
        x[(j, 0)] = 1.0;
        x[(j, 1)] = if p.is_treated(j) { 1.0 } else { 0.0 };
        y[j] = post - pre;
    }
    let fit = ols(&x, &y);
    let g = n as f64;
    (fit.beta[1], cluster_sandwich(&x, &fit, |r| r, n)[(1, 1)] * g / (g - 1.0))
}
