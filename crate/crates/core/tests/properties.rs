use proptest::prelude::*;

use didlab::analytics::{
    ar_window_moment, design_variances, inflation_for_rejection, nabla_second_moment, normalized_nabla_second_moment,
    prop1_variance_gap, rejection_from_inflation, GapInputs,
};
use didlab::dgp::{simulate_panel, ArSpec, Assignment, FactorModelSpec, FixedPopulation, Structure, Timing};
use didlab::estimators::twfe;
use didlab::panel::{OutcomeGrid, PanelData};
use didlab::rng::seeded;
use didlab::variance::crve_group;

fn panel_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, usize)> {
    (4usize..10, 2usize..7).prop_flat_map(|(n, t)| {
        (prop::collection::vec(prop::collection::vec(-5.0..5.0f64, t), n), 2..n - 1, 1..t)
    })
}

fn build(rows: &[Vec<f64>], n_treated: usize, k: usize) -> PanelData {
    let treated: Vec<bool> = (0..rows.len()).map(|j| j < n_treated).collect();
    PanelData::uniform(OutcomeGrid::from_rows(rows).unwrap(), &treated, k).unwrap()
}

proptest! {
    #[test]
    fn twfe_ignores_additive_fixed_effects(
        (rows, n1, k) in panel_strategy(),
        a in prop::collection::vec(-10.0..10.0f64, 10),
        b in prop::collection::vec(-10.0..10.0f64, 7),
    ) {
        let p = build(&rows, n1, k);
        let shifted: Vec<Vec<f64>> = rows.iter().enumerate()
            .map(|(j, r)| r.iter().enumerate().map(|(s, v)| v + a[j] + b[s]).collect())
            .collect();
        let q = build(&shifted, n1, k);
        let (e, f) = (twfe(&p).unwrap(), twfe(&q).unwrap());
        prop_assert!((e.alpha_hat - f.alpha_hat).abs() < 1e-9);
        let (v, w) = (crve_group(&e).unwrap().value, crve_group(&f).unwrap().value);
        prop_assert!((v - w).abs() < 1e-9 * v.max(1.0));
    }

    #[test]
    fn twfe_scales_with_outcomes((rows, n1, k) in panel_strategy(), c in 0.1..10.0f64) {
        let p = build(&rows, n1, k);
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| c * v).collect()).collect();
        let q = build(&scaled, n1, k);
        let (e, f) = (twfe(&p).unwrap(), twfe(&q).unwrap());
        prop_assert!((c * e.alpha_hat - f.alpha_hat).abs() < 1e-9 * c.max(1.0));
        let (v, w) = (crve_group(&e).unwrap().value, crve_group(&f).unwrap().value);
        prop_assert!((c * c * v - w).abs() < 1e-9 * w.max(1.0));
    }

    #[test]
    fn gap_is_rotation_invariant(
        mu in prop::collection::vec(-3.0..3.0f64, 2),
        l in prop::collection::vec(-2.0..2.0f64, 3),
        theta in 0.0..6.3f64,
    ) {
        // M = L Lᵀ with L lower triangular is positive semidefinite
        let m = vec![
            vec![l[0] * l[0], l[0] * l[1]],
            vec![l[0] * l[1], l[1] * l[1] + l[2] * l[2]],
        ];
        let (c, s) = (theta.cos(), theta.sin());
        let q = [[c, -s], [s, c]];
        let rot_mu: Vec<f64> = (0..2).map(|i| q[i][0] * mu[0] + q[i][1] * mu[1]).collect();
        let rot_m: Vec<Vec<f64>> = (0..2)
            .map(|i| (0..2).map(|j| (0..2).map(|a| (0..2).map(|b| q[i][a] * m[a][b] * q[j][b]).sum::<f64>()).sum()).collect())
            .collect();
        let g = |mu: Vec<f64>, m: Vec<Vec<f64>>| prop1_variance_gap(&GapInputs {
            mu_gap: mu, second_moment: m, sigma_eps2_treated: 1.0, sigma_eps2_control: 1.0, c: 0.5,
        }).unwrap();
        let (a, b) = (g(mu.clone(), m.clone()), g(rot_mu, rot_m));
        prop_assert!(a >= -1e-12);
        prop_assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn design_gap_equals_four_terms(
        n_blocks in 3usize..9,
        size in 1usize..6,
        t in 2usize..8,
        rho in -0.9..0.95f64,
        var in 0.0..3.0f64,
        seed in any::<u64>(),
    ) {
        let t_star = 1 + (seed as usize) % (t - 1);
        let pop = FixedPopulation::draw(
            n_blocks * size, t, n_blocks, t_star, &ArSpec::with_marginal_variance(rho, var), 1.0, 0.5, &mut seeded(seed),
        ).unwrap();
        let d = design_variances(&pop).unwrap();
        prop_assert!((d.v_corr - d.v_uncorr - d.four_term_gap).abs() < 1e-10 * d.v_corr.abs().max(1.0));
        prop_assert!(d.v_corr >= 0.0 && d.v_uncorr >= 0.0);
    }

    #[test]
    fn nabla_closed_form_equals_autocovariance_sum(rho in -0.95..0.97f64, half in 1usize..30, s2 in 0.1..4.0f64) {
        let t = 2 * half;
        let a = nabla_second_moment(rho, t, s2).unwrap();
        let pre: Vec<usize> = (0..half).collect();
        let post: Vec<usize> = (half..t).collect();
        let b = ar_window_moment(&ArSpec::stationary(rho, s2), &pre, &post).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * a.max(1e-3), "{} vs {}", a, b);
        prop_assert_eq!(normalized_nabla_second_moment(rho, 2).unwrap(), 1.0);
    }

    #[test]
    fn inflation_inverts_rejection(target in 0.051..0.95f64, level in prop::sample::select(vec![0.01, 0.05, 0.1])) {
        prop_assume!(target > level);
        let k = inflation_for_rejection(target, level).unwrap();
        prop_assert!(k >= 0.0);
        prop_assert!((rejection_from_inflation(k, level).unwrap() - target).abs() < 1e-9);
    }

    #[test]
    fn simulated_outcomes_rebuild_from_latents(
        n in 4usize..20,
        t in 2usize..8,
        rho in -0.9..0.9f64,
        seed in any::<u64>(),
        blocks in prop::bool::ANY,
    ) {
        let structure = if blocks && n % 2 == 0 { Structure::Blocks { n_blocks: 2 } } else { Structure::ArmLevel };
        let spec = FactorModelSpec {
            structure,
            fe_group_sd: 1.0,
            fe_time_sd: 0.5,
            ..FactorModelSpec::arm_level(ArSpec::stationary(rho, 1.0), Assignment::RandomCount { n_treated: n / 2 })
        };
        let sim = simulate_panel(&spec, n, t, &Timing::Uniform(t / 2), seed).unwrap();
        prop_assert_eq!(sim.panel.n_treated(), n / 2);
        let y = sim.latents.reconstruct();
        prop_assert_eq!(sim.panel.outcomes().values(), &y[..]);
    }
}
