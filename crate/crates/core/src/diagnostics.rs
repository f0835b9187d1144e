//! Chi-square diagnostics for dependence between the schedule and the
//! random team effects.
//!
//! Under independence of `1'Z` and `η ~ N(0, σ_g² I)`, `1'Zη` is normal with
//! variance `σ_g² 1'ZZ'1`, so its standardized square is χ²₁. A large value
//! flags a schedule whose home/away imbalance tracks team strength, which
//! is the mechanism that biases the mixed-model HFA estimate.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{HfaError, Result};
use crate::linalg::{inverse_condition, numerical_rank, spd_inverse, ThinSvd};
use crate::mixed_model::MixedFit;
use crate::schedule::ScheduleMatrix;
use crate::stats::chi2_sf;

/// Relative singular-value cutoff below which the quadratic form is
/// declared undefined.
pub const SINGULARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticResult {
    pub statistic: Option<f64>,
    pub dof: usize,
    pub p_value: Option<f64>,
    pub applicable: bool,
    pub reason: Option<String>,
}

impl DiagnosticResult {
    fn value(statistic: f64, dof: usize) -> Self {
        let statistic = statistic.max(0.0);
        Self {
            statistic: Some(statistic),
            dof,
            p_value: Some(chi2_sf(statistic, dof)),
            applicable: true,
            reason: None,
        }
    }

    fn not_applicable(dof: usize, reason: impl Into<String>) -> Self {
        Self {
            statistic: None,
            dof,
            p_value: None,
            applicable: false,
            reason: Some(reason.into()),
        }
    }
}

/// `(1/σ_g²) · (1'Zη)² / (1'ZZ'1)` for a given `η` and `σ_g²`.
///
/// This is the known-parameter form; [`schedule_bias_statistic`] plugs in
/// the REML estimate and the eBLUPs.
pub fn schedule_bias_statistic_known(
    sm: &ScheduleMatrix,
    eta: &[f64],
    sigma2_g: f64,
) -> Result<DiagnosticResult> {
    if eta.len() != sm.n_teams() {
        return Err(HfaError::InvalidArgument(format!(
            "eta has {} entries for {} teams",
            eta.len(),
            sm.n_teams()
        )));
    }
    if !(sigma2_g > 0.0) {
        return Ok(DiagnosticResult::not_applicable(1, "team-effect variance is zero"));
    }
    let v = sm.net_home_vector();
    let vv = v.norm_squared();
    // 1'ZZ'1 is an integer sum of squares; anything below this is zero.
    if vv < SINGULARITY_TOL * (sm.n_games() as f64).max(1.0) {
        return Ok(DiagnosticResult::not_applicable(1, "balanced schedule: 1'Z = 0"));
    }
    let q: f64 = v.iter().zip(eta).map(|(a, b)| a * b).sum();
    Ok(DiagnosticResult::value(q * q / (sigma2_g * vv), 1))
}

/// Plug-in schedule-bias statistic using the fit's `σ̂_g²` and eBLUPs.
pub fn schedule_bias_statistic(fit: &MixedFit, sm: &ScheduleMatrix) -> Result<DiagnosticResult> {
    if fit.boundary {
        return Ok(DiagnosticResult::not_applicable(
            1,
            "team-effect variance estimate on the boundary",
        ));
    }
    schedule_bias_statistic_known(sm, &fit.eta_blup, fit.sigma2_g)
}

/// General form for `Y ~ N(Xβ + Zη, R)`, `η ~ N(0, G)`:
/// `η'Z'R⁻¹X (X'R⁻¹ZGZ'R⁻¹X)⁻¹ X'R⁻¹Zη` on `rank(X'R⁻¹Z)` degrees of freedom.
pub fn general_bias_statistic(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    r: &DMatrix<f64>,
    g: &DMatrix<f64>,
    eta: &DVector<f64>,
) -> Result<DiagnosticResult> {
    let n = x.nrows();
    let q = z.ncols();
    if z.nrows() != n || r.shape() != (n, n) || g.shape() != (q, q) || eta.len() != q {
        return Err(HfaError::InvalidArgument("inconsistent matrix dimensions".into()));
    }
    let r_inv = spd_inverse(r)
        .map_err(|_| HfaError::InvalidArgument("R must be positive definite".into()))?;
    let m = x.transpose() * r_inv * z;
    let dof = numerical_rank(&m);
    let inner = &m * g * m.transpose();
    if inverse_condition(&inner) < SINGULARITY_TOL {
        return Ok(DiagnosticResult::not_applicable(
            dof.max(1),
            "X'R⁻¹ZGZ'R⁻¹X is numerically singular",
        ));
    }
    let u = &m * eta;
    let inner_inv = ThinSvd::new(&inner)?.pseudo_inverse();
    let stat = (u.transpose() * inner_inv * &u)[(0, 0)];
    Ok(DiagnosticResult::value(stat, dof))
}
