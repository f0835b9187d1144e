//! Parametric-bootstrap test of `G = 0` in the random-coefficient model.
//!
//! The null value sits on the edge of the parameter space, so the usual
//! χ² reference for the restricted likelihood ratio does not apply.

use nalgebra::{Matrix2, Vector2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::random_coef::{optimize, profile, RandomCoefOptions, RcDesign};
use super::series::HfaSeries;
use crate::error::{HfaError, Result};
use crate::simulation::stream_rng;

/// Share of null refits allowed to fail before the test is abandoned.
pub const MAX_BOUNDARY_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryTest {
    pub p: f64,
    pub observed_stat: f64,
    pub n_sim: usize,
    pub failures: usize,
    pub null_exceedances: usize,
}

fn lr_stat(design: &RcDesign, y: &[f64], opts: &RandomCoefOptions) -> Option<(f64, Vector2<f64>, f64)> {
    let groups = design.groups(y);
    let zero = profile(&groups, design.n_obs, &Matrix2::zeros())?;
    let full = optimize(&groups, design, &opts.bfgs).ok()?;
    let stat = (2.0 * (full.profile.loglik - zero.loglik)).max(0.0);
    stat.is_finite().then_some((stat, zero.alpha, zero.sigma2))
}

/// Restricted likelihood-ratio test of `G = 0` with a null distribution
/// simulated from the fitted `G = 0` model.
pub fn boundary_test_g(series: &HfaSeries, n_sim: usize, seed: u64, opts: &RandomCoefOptions) -> Result<BoundaryTest> {
    if n_sim < 100 {
        return Err(HfaError::InvalidArgument(format!("boundary test needs at least 100 simulations, got {n_sim}")));
    }
    let n_conf = series.conferences().len();
    if n_conf < 3 || series.years().len() < 3 {
        return Err(HfaError::InvalidArgument(
            "boundary test needs at least 3 conferences and 3 distinct years".into(),
        ));
    }
    let design = RcDesign::new(series, opts.time_origin);
    let y: Vec<f64> = series.rows().iter().map(|r| r.lambda_hat).collect();
    let (observed, alpha0, sigma2_0) = lr_stat(&design, &y, opts)
        .ok_or_else(|| HfaError::Numerical("could not fit the observed data under both models".into()))?;

    let ts_w: Vec<(f64, f64)> = design
        .index
        .iter()
        .map(|&(g, k)| design.rows[g][k])
        .collect();
    let null: Vec<Option<f64>> = (0..n_sim as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let y_star: Vec<f64> = ts_w
                .iter()
                .map(|&(t, w2)| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    alpha0[0] + alpha0[1] * t + e * (sigma2_0 * w2).sqrt()
                })
                .collect();
            lr_stat(&design, &y_star, opts).map(|s| s.0)
        })
        .collect();
    let failures = null.iter().filter(|s| s.is_none()).count();
    if failures as f64 > MAX_BOUNDARY_FAILURE_FRACTION * n_sim as f64 {
        return Err(HfaError::TooManyFailures { failed: failures, total: n_sim });
    }
    let ok = n_sim - failures;
    let exceed = null.iter().flatten().filter(|&&s| s >= observed).count();
    Ok(BoundaryTest {
        p: (1 + exceed) as f64 / (ok + 1) as f64,
        observed_stat: observed,
        n_sim,
        failures,
        null_exceedances: exceed,
    })
}
