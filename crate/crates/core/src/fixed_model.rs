//! Fixed-team-effect model `d = λ1 + Zβ + ε`.
//!
//! The design `W = [1|Z]` is rank deficient (every row of `Z` sums to zero),
//! so the fit uses the Moore–Penrose solution. Only λ and differences
//! `β_i − β_j` within a connected component are estimable; the individual
//! entries of `beta_hat` are the minimum-norm solution and carry no meaning
//! on their own.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{HfaError, Result};
use crate::linalg::ThinSvd;
use crate::schedule::{ScheduleMatrix, DEFAULT_ESTIMABILITY_TOL};
use crate::stats::t_quantile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedFit {
    pub lambda_hat: f64,
    /// Minimum-norm team effects. Not individually estimable.
    #[serde(skip)]
    pub beta_hat: Vec<f64>,
    pub sigma2_hat: f64,
    pub se_lambda: f64,
    pub dof_resid: usize,
    #[serde(rename = "rank_W")]
    pub rank_w: usize,
    /// 95% interval from the t distribution with `dof_resid` degrees of freedom.
    pub ci95: [f64; 2],
}

impl FixedFit {
    pub fn covers(&self, value: f64) -> bool {
        self.ci95[0] <= value && value <= self.ci95[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairwiseDifference {
    pub estimate: f64,
    pub se: f64,
}

/// Decomposition of `W = [1|Z]` reusable across response vectors with the
/// same schedule.
#[derive(Debug, Clone)]
pub struct FixedDesign {
    svd: ThinSvd,
    n_games: usize,
    n_teams: usize,
    lambda_estimable: bool,
    tol: f64,
}

impl FixedDesign {
    pub fn new(sm: &ScheduleMatrix) -> Result<Self> {
        Self::with_tolerance(sm, DEFAULT_ESTIMABILITY_TOL)
    }

    pub fn with_tolerance(sm: &ScheduleMatrix, tol: f64) -> Result<Self> {
        let svd = ThinSvd::new(&sm.design_with_intercept())?;
        let mut e1 = DVector::zeros(sm.n_teams() + 1);
        e1[0] = 1.0;
        let lambda_estimable = svd.row_space_defect(&e1) < tol;
        Ok(Self {
            svd,
            n_games: sm.n_games(),
            n_teams: sm.n_teams(),
            lambda_estimable,
            tol,
        })
    }

    pub fn rank(&self) -> usize {
        self.svd.rank()
    }

    pub fn lambda_estimable(&self) -> bool {
        self.lambda_estimable
    }

    /// Point estimate of λ alone. Defined whenever λ is estimable, including
    /// saturated designs where [`FixedDesign::fit`] fails for lack of
    /// residual degrees of freedom.
    pub fn lambda_estimate(&self, d: &DVector<f64>) -> Result<f64> {
        if !self.lambda_estimable {
            return Err(HfaError::NotEstimable);
        }
        let coords = self.svd.u.transpose() * d;
        Ok(self
            .svd
            .v
            .row(0)
            .iter()
            .zip(coords.iter().zip(self.svd.s.iter()))
            .map(|(v, (c, s))| v * c / s)
            .sum())
    }

    /// Least-squares fit of the response `d` on this schedule.
    pub fn fit(&self, d: &DVector<f64>) -> Result<FixedFit> {
        if !self.lambda_estimable {
            return Err(HfaError::NotEstimable);
        }
        let dof_resid = self.n_games - self.rank();
        if dof_resid == 0 {
            return Err(HfaError::Saturated);
        }
        let coords = self.svd.u.transpose() * d;
        let fitted = &self.svd.u * &coords;
        let rss = (d - fitted).norm_squared();
        let mut scaled = coords;
        for (k, c) in scaled.iter_mut().enumerate() {
            *c /= self.svd.s[k];
        }
        let solution = &self.svd.v * scaled;

        let sigma2_hat = rss / dof_resid as f64;
        let v0 = self.svd.v.row(0);
        let cov00: f64 = v0
            .iter()
            .zip(self.svd.s.iter())
            .map(|(v, s)| (v / s).powi(2))
            .sum();
        let se_lambda = (sigma2_hat * cov00).sqrt();
        let lambda_hat = solution[0];
        let half = t_quantile(0.975, dof_resid as f64) * se_lambda;
        Ok(FixedFit {
            lambda_hat,
            beta_hat: solution.iter().skip(1).cloned().collect(),
            sigma2_hat,
            se_lambda,
            dof_resid,
            rank_w: self.rank(),
            ci95: [lambda_hat - half, lambda_hat + half],
        })
    }

    /// Estimate and standard error of `β_i − β_j`.
    pub fn pairwise_difference(&self, fit: &FixedFit, i: usize, j: usize) -> Result<PairwiseDifference> {
        if i >= self.n_teams || j >= self.n_teams {
            return Err(HfaError::InvalidArgument(format!(
                "team index out of range ({i}, {j}) for {} teams",
                self.n_teams
            )));
        }
        if i == j {
            return Ok(PairwiseDifference { estimate: 0.0, se: 0.0 });
        }
        let mut c = DVector::zeros(self.n_teams + 1);
        c[1 + i] = 1.0;
        c[1 + j] = -1.0;
        if self.svd.row_space_defect(&c) >= self.tol {
            return Err(HfaError::ContrastNotEstimable(format!(
                "teams {i} and {j} are not connected by the schedule"
            )));
        }
        let proj = self.svd.v.transpose() * &c;
        let quad: f64 = proj
            .iter()
            .zip(self.svd.s.iter())
            .map(|(p, s)| (p / s).powi(2))
            .sum();
        Ok(PairwiseDifference {
            estimate: fit.beta_hat[i] - fit.beta_hat[j],
            se: (fit.sigma2_hat * quad).sqrt(),
        })
    }
}

/// Fit the fixed-effects model to `sm.d`.
pub fn fit_fixed(sm: &ScheduleMatrix) -> Result<FixedFit> {
    FixedDesign::new(sm)?.fit(&sm.d)
}

/// `β̂_i − β̂_j` with its standard error; errors when the contrast is not
/// estimable.
pub fn pairwise_difference(
    fit: &FixedFit,
    sm: &ScheduleMatrix,
    i: usize,
    j: usize,
) -> Result<PairwiseDifference> {
    FixedDesign::new(sm)?.pairwise_difference(fit, i, j)
}
