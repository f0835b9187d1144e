mod common;

use common::{arb_balanced, arb_margins, arb_schedule, schedule};
use hfa_core::mixed_model::MixedDesign;
use hfa_core::simulation::{generate_league, stream_rng, LeagueSpec};
use hfa_core::stats::{mc_standard_error, mean};
use hfa_core::{fit_fixed, fit_mixed, henderson_solve, reml_loglik, EmConfig, ScheduleMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Restricted log-likelihood from the dense marginal covariance
/// `V = σ_g² ZZ' + σ² I` and `X = 1`.
fn dense_reml(sm: &ScheduleMatrix, sigma2_g: f64, sigma2: f64) -> f64 {
    let n = sm.n_games();
    let v = &sm.z * sm.z.transpose() * sigma2_g + DMatrix::identity(n, n) * sigma2;
    let chol = v.clone().cholesky().expect("V positive definite");
    let v_inv = chol.inverse();
    let logdet_v: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let one = DVector::from_element(n, 1.0);
    let xvx = (one.transpose() * &v_inv * &one)[(0, 0)];
    let vy = &v_inv * &sm.d;
    let beta = (one.transpose() * &vy)[(0, 0)] / xvx;
    let r = &sm.d - &one * beta;
    let quad = (r.transpose() * &v_inv * &r)[(0, 0)];
    -0.5 * ((n as f64 - 1.0) * (2.0 * std::f64::consts::PI).ln() + logdet_v + xvx.ln() - (n as f64).ln() + quad)
}

fn estimable_with_margins() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<f64>)> {
    arb_schedule(10, 50)
        .prop_filter("needs a few games", |(_, p)| p.len() >= 4)
        .prop_flat_map(|(n, pairs)| {
            let len = pairs.len();
            (Just(n), Just(pairs), arb_margins(len))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn balanced_schedules_give_the_mean((n, pairs) in arb_balanced(), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = stream_rng(seed, 0);
        let d: Vec<f64> = pairs.iter().map(|_| rng.random_range(-20.0..25.0)).collect();
        let sm = schedule(n, &pairs, &d);
        let m = sm.mean_margin();
        prop_assert!((fit_fixed(&sm).unwrap().lambda_hat - m).abs() < 1e-8);
        prop_assert!((fit_mixed(&sm, &EmConfig::default()).unwrap().lambda_hat - m).abs() < 1e-8);
    }

    #[test]
    fn reml_loglik_matches_dense_oracle((n, pairs, d) in estimable_with_margins(), sg2 in 0.01f64..50.0, s2 in 0.1f64..200.0) {
        let sm = schedule(n, &pairs, &d);
        let Ok(ours) = reml_loglik(&sm, sg2, s2) else { return Ok(()) };
        let oracle = dense_reml(&sm, sg2, s2);
        prop_assert!((ours - oracle).abs() < 1e-8 * oracle.abs().max(1.0), "{} vs {}", ours, oracle);
    }

    #[test]
    fn em_ascends_and_blups_sum_to_zero((n, pairs, d) in estimable_with_margins(), px in any::<bool>()) {
        let sm = schedule(n, &pairs, &d);
        let cfg = EmConfig { px_em: px, ..EmConfig::default() };
        let Ok(fit) = fit_mixed(&sm, &cfg) else { return Ok(()) };
        for w in fit.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "{} then {}", w[0], w[1]);
        }
        prop_assert!(fit.eta_blup.iter().sum::<f64>().abs() < 1e-8 * (1.0 + fit.eta_blup.iter().map(|x| x.abs()).sum::<f64>()));
        prop_assert!(fit.sigma2_g >= 0.0 && fit.sigma2 > 0.0);
        if fit.boundary {
            prop_assert!(fit.eta_blup.iter().all(|&x| x == 0.0));
        } else {
            // Final estimates agree with a direct Henderson solve at the fitted ratio.
            let h = henderson_solve(&sm, fit.sigma2 / fit.sigma2_g).unwrap();
            prop_assert!((h.lambda_hat - fit.lambda_hat).abs() < 1e-8 * fit.lambda_hat.abs().max(1.0));
        }
    }
}

#[test]
fn blups_shrink_toward_zero_relative_to_fixed_effects() {
    let league = generate_league(&LeagueSpec {
        n_teams: 12,
        games_per_team: 10,
        sigma_g: 4.0,
        sigma: 10.0,
        home_bias: 0.5,
        seed: 11,
    })
    .unwrap();
    let sm = league.season(3.0, &mut stream_rng(11, 1));
    let fit = fit_mixed(&sm, &EmConfig::default()).unwrap();
    assert!(!fit.boundary);
    let fixed = fit_fixed(&sm).unwrap();
    let centered = |v: &[f64]| -> Vec<f64> {
        let m = mean(v);
        v.iter().map(|x| x - m).collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    assert!(norm(&centered(&fit.eta_blup)) < norm(&centered(&fixed.beta_hat)));
}

#[test]
fn mixed_estimate_unbiased_over_random_schedules() {
    let design_seed = 5;
    let league = generate_league(&LeagueSpec {
        n_teams: 10,
        games_per_team: 8,
        sigma_g: 3.0,
        sigma: 8.0,
        home_bias: 0.5,
        seed: design_seed,
    })
    .unwrap();
    let design = MixedDesign::new(&league.schedule).unwrap();
    let cfg = EmConfig { px_em: true, ..EmConfig::default() };
    let draws: Vec<f64> = (0..2000u64)
        .map(|k| {
            // Fresh team effects each season so the schedule is independent of them.
            let mut rng = stream_rng(design_seed, 100 + k);
            use rand_distr::{Distribution, Normal};
            let eta: Vec<f64> = (0..10).map(|_| Normal::new(0.0, 3.0).unwrap().sample(&mut rng)).collect();
            let d = DVector::from_iterator(
                league.schedule.n_games(),
                league.schedule.pairs.iter().map(|&(h, a)| {
                    3.0 + eta[h] - eta[a] + Normal::new(0.0, 8.0).unwrap().sample(&mut rng)
                }),
            );
            design.fit(&d, &cfg).unwrap().lambda_hat
        })
        .collect();
    let (m, se) = (mean(&draws), mc_standard_error(&draws));
    assert!((m - 3.0).abs() < 4.0 * se, "mean {m} se {se}");
}
