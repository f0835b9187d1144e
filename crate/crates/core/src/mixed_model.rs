//! Random-team-effect model
//! `d | η ~ N(λ1 + Zη, σ²I)`, `η ~ N(0, σ_g² I)`, fitted by REML.
//!
//! REML is the likelihood of the error contrasts `K'd`, where the columns of
//! `K` are an orthonormal basis of `1⊥`. In those coordinates the model has
//! no fixed effects: `K'd = K'Zη + e`, so EM treats `η` as the missing data
//! and every quantity it needs is a function of the eigendecomposition of
//! `A = Z'PZ` (with `P = I − 11'/n`) and of `c = U'Z'Pd`. That
//! decomposition is computed once per schedule, which makes each EM
//! iteration O(N) and lets simulations reuse it across replicates.
//!
//! λ̂, the eBLUPs and the standard error come from Henderson's mixed-model
//! equations at the converged variance ratio.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{HfaError, Result};
use crate::schedule::{check_estimability, ScheduleMatrix, DEFAULT_ESTIMABILITY_TOL};
use crate::stats::normal_quantile;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop when the largest relative change in `(σ_g², σ²)` drops below this.
    pub rel_tol: f64,
    /// `σ_g²` below `var_floor · var(d)` is treated as zero.
    pub var_floor: f64,
    /// Use the parameter-expanded (PX-EM) update.
    pub px_em: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            rel_tol: 1e-10,
            var_floor: 1e-12,
            px_em: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(HfaError::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(HfaError::InvalidArgument("rel_tol must be positive".into()));
        }
        if !(self.var_floor >= 0.0) {
            return Err(HfaError::InvalidArgument("var_floor must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Absolute change in the restricted log-likelihood treated as converged.
const LOGLIK_ABS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedFit {
    pub lambda_hat: f64,
    pub se_lambda: f64,
    pub sigma2_g: f64,
    pub sigma2: f64,
    pub eta_blup: Vec<f64>,
    pub reml_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `σ_g²` was set to zero; `eta_blup` is then all zeros.
    pub boundary: bool,
    /// `λ̂ ± z₀.₉₇₅ · se_lambda`. Ignores uncertainty in the variance components.
    pub ci95: [f64; 2],
    /// Restricted log-likelihood at the start value and after every EM step.
    #[serde(skip)]
    pub loglik_trace: Vec<f64>,
}

impl MixedFit {
    pub fn covers(&self, value: f64) -> bool {
        self.ci95[0] <= value && value <= self.ci95[1]
    }

    /// Conditional residuals `d − λ̂1 − Zη̂`.
    pub fn conditional_residuals(&self, sm: &ScheduleMatrix) -> DVector<f64> {
        let eta = DVector::from_column_slice(&self.eta_blup);
        sm.d.add_scalar(-self.lambda_hat) - &sm.z * eta
    }
}

/// Solution of Henderson's mixed-model equations.
#[derive(Debug, Clone, PartialEq)]
pub struct HendersonSolution {
    pub lambda_hat: f64,
    pub eta: DVector<f64>,
    /// `[C⁻¹]₁₁`, the (λ, λ) entry of the inverse coefficient matrix.
    pub c_inv_lambda: f64,
    /// Diagonal of `C⁻¹`, λ first.
    pub c_inv_diag: DVector<f64>,
}

fn henderson_matrix(ztz: &DMatrix<f64>, v: &DVector<f64>, n: usize, ratio: f64) -> DMatrix<f64> {
    let q = ztz.nrows();
    let mut c = DMatrix::zeros(q + 1, q + 1);
    c[(0, 0)] = n as f64;
    for j in 0..q {
        c[(0, j + 1)] = v[j];
        c[(j + 1, 0)] = v[j];
    }
    c.view_mut((1, 1), (q, q)).copy_from(ztz);
    for j in 0..q {
        c[(j + 1, j + 1)] += ratio;
    }
    c
}

enum Factor {
    Cholesky(nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn new(c: DMatrix<f64>) -> Result<Self> {
        if let Some(ch) = c.clone().cholesky() {
            return Ok(Factor::Cholesky(ch));
        }
        let lu = c.lu();
        if lu.is_invertible() {
            Ok(Factor::Lu(lu))
        } else {
            Err(HfaError::Numerical("singular mixed-model equations".into()))
        }
    }

    fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Factor::Cholesky(ch) => Ok(ch.solve(b)),
            Factor::Lu(lu) => lu
                .solve(b)
                .ok_or_else(|| HfaError::Numerical("singular mixed-model equations".into())),
        }
    }

    fn inverse(&self) -> Result<DMatrix<f64>> {
        match self {
            Factor::Cholesky(ch) => Ok(ch.inverse()),
            Factor::Lu(lu) => lu
                .try_inverse()
                .ok_or_else(|| HfaError::Numerical("singular mixed-model equations".into())),
        }
    }
}

/// Solve `[[1'1, 1'Z], [Z'1, Z'Z + ratio·I]] [λ; η] = [1'd; Z'd]` with
/// `ratio = σ²/σ_g²`.
pub fn henderson_solve(sm: &ScheduleMatrix, ratio: f64) -> Result<HendersonSolution> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(HfaError::InvalidArgument(format!("variance ratio must be positive, got {ratio}")));
    }
    let ztz = sm.z.transpose() * &sm.z;
    let v = sm.net_home_vector();
    let c = henderson_matrix(&ztz, &v, sm.n_games(), ratio);
    let factor = Factor::new(c)?;
    let mut rhs = DVector::zeros(sm.n_teams() + 1);
    rhs[0] = sm.d.sum();
    rhs.rows_mut(1, sm.n_teams()).copy_from(&(sm.z.transpose() * &sm.d));
    let sol = factor.solve(&rhs)?;
    let inv = factor.inverse()?;
    Ok(HendersonSolution {
        lambda_hat: sol[0],
        eta: sol.rows(1, sm.n_teams()).into_owned(),
        c_inv_lambda: inv[(0, 0)],
        c_inv_diag: inv.diagonal(),
    })
}

/// Per-response quantities the EM iteration works from.
#[derive(Debug, Clone)]
struct Projected {
    mean: f64,
    /// `d'Pd`.
    centered_ss: f64,
    /// `U'Z'Pd`.
    c: DVector<f64>,
}

/// Schedule-dependent pieces of the REML fit, reusable across responses.
#[derive(Debug, Clone)]
pub struct MixedDesign {
    n_games: usize,
    pairs: Vec<(usize, usize)>,
    ztz: DMatrix<f64>,
    net_home: DVector<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
    lambda_estimable: bool,
}

impl MixedDesign {
    pub fn new(sm: &ScheduleMatrix) -> Result<Self> {
        let n = sm.n_games();
        let ztz = sm.z.transpose() * &sm.z;
        let v = sm.net_home_vector();
        let a = &ztz - (&v * v.transpose()) / n as f64;
        let eig = a.symmetric_eigen();
        let s_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let tol = crate::linalg::rank_tolerance(n, sm.n_teams(), s_max);
        let eigvals = eig.eigenvalues.map(|s| if s > tol { s } else { 0.0 });
        Ok(Self {
            n_games: n,
            pairs: sm.pairs.clone(),
            ztz,
            net_home: v,
            eigvecs: eig.eigenvectors,
            eigvals,
            lambda_estimable: check_estimability(sm, DEFAULT_ESTIMABILITY_TOL)?.lambda_estimable,
        })
    }

    pub fn n_teams(&self) -> usize {
        self.ztz.nrows()
    }

    pub fn lambda_estimable(&self) -> bool {
        self.lambda_estimable
    }

    fn z_transpose_times(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_teams());
        for (&(h, a), xi) in self.pairs.iter().zip(x.iter()) {
            out[h] += xi;
            out[a] -= xi;
        }
        out
    }

    fn project(&self, d: &DVector<f64>) -> Projected {
        let mean = d.mean();
        let centered = d.add_scalar(-mean);
        let centered_ss = centered.norm_squared();
        let zpd = self.z_transpose_times(&centered);
        let mut c = self.eigvecs.transpose() * zpd;
        // Null directions of A are null directions of Z when λ is
        // estimable, so their coordinates vanish exactly.
        for (ck, s) in c.iter_mut().zip(self.eigvals.iter()) {
            if *s == 0.0 {
                *ck = 0.0;
            }
        }
        Projected {
            mean,
            centered_ss,
            c,
        }
    }

    fn loglik(&self, p: &Projected, sigma2_g: f64, sigma2: f64) -> f64 {
        let n1 = (self.n_games - 1) as f64;
        let q = self.n_teams() as f64;
        let mut logdet = (n1 - q) * sigma2.ln();
        let mut shrunk = 0.0;
        for (s, c) in self.eigvals.iter().zip(p.c.iter()) {
            let den = sigma2 + sigma2_g * s;
            logdet += den.ln();
            shrunk += sigma2_g * c * c / den;
        }
        let quad = (p.centered_ss - shrunk) / sigma2;
        -0.5 * (n1 * LN_2PI + logdet + quad)
    }

    /// Restricted log-likelihood of `(σ_g², σ²)` for response `d`.
    pub fn reml_loglik(&self, d: &DVector<f64>, sigma2_g: f64, sigma2: f64) -> f64 {
        self.loglik(&self.project(d), sigma2_g, sigma2)
    }

    /// REML fit of the response `d` on this schedule.
    pub fn fit(&self, d: &DVector<f64>, cfg: &EmConfig) -> Result<MixedFit> {
        cfg.validate()?;
        if d.len() != self.n_games {
            return Err(HfaError::InvalidArgument("response length mismatch".into()));
        }
        if self.n_games < 3 {
            return Err(HfaError::InvalidArgument("mixed model needs at least 3 games".into()));
        }
        if !self.lambda_estimable {
            return Err(HfaError::NotEstimable);
        }
        let n1 = (self.n_games - 1) as f64;
        let q = self.n_teams() as f64;
        let p = self.project(d);
        let var_d = p.centered_ss / n1;
        let scale = if var_d > 0.0 { var_d } else { 1.0 };
        let floor_g = cfg.var_floor * scale;
        let floor_e = (cfg.var_floor * scale).max(f64::MIN_POSITIVE);

        let mut sigma2_g = 0.5 * scale;
        let mut sigma2 = 0.5 * scale;
        let mut trace = vec![self.loglik(&p, sigma2_g, sigma2)];
        let mut converged = false;
        let mut boundary = false;
        let mut iterations = 0;

        for _ in 0..cfg.max_iter {
            iterations += 1;
            let (mut mm, mut tr_s, mut mb, mut mam, mut tr_as) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (s, c) in self.eigvals.iter().zip(p.c.iter()) {
                let den = sigma2 + sigma2_g * s;
                let m = sigma2_g * c / den;
                let v = sigma2 * sigma2_g / den;
                mm += m * m;
                tr_s += v;
                mb += m * c;
                mam += s * m * m;
                tr_as += s * v;
            }
            let (next_g, next_e) = if cfg.px_em && mam + tr_as > 0.0 {
                let alpha = mb / (mam + tr_as);
                (
                    alpha * alpha * (mm + tr_s) / q,
                    (p.centered_ss - 2.0 * alpha * mb + alpha * alpha * (mam + tr_as)) / n1,
                )
            } else {
                ((mm + tr_s) / q, (p.centered_ss - 2.0 * mb + mam + tr_as) / n1)
            };
            let next_e = next_e.max(floor_e);

            if next_g < floor_g {
                sigma2_g = 0.0;
                sigma2 = (p.centered_ss / n1).max(floor_e);
                boundary = true;
                converged = true;
                trace.push(self.loglik(&p, sigma2_g, sigma2));
                break;
            }

            let rel = ((next_g - sigma2_g).abs() / sigma2_g).max((next_e - sigma2).abs() / sigma2);
            sigma2_g = next_g;
            sigma2 = next_e;
            let ll = self.loglik(&p, sigma2_g, sigma2);
            let dll = (ll - trace[trace.len() - 1]).abs();
            trace.push(ll);
            if rel < cfg.rel_tol || dll < LOGLIK_ABS_TOL {
                converged = true;
                break;
            }
        }

        if !boundary {
            // The slow approach to zero can stop short of the floor; compare
            // with the boundary optimum directly.
            let sigma2_0 = (p.centered_ss / n1).max(floor_e);
            if self.loglik(&p, 0.0, sigma2_0) >= trace[trace.len() - 1] {
                sigma2_g = 0.0;
                sigma2 = sigma2_0;
                boundary = true;
                trace.push(self.loglik(&p, sigma2_g, sigma2));
            }
        }

        let (lambda_hat, eta, c_inv_lambda) = if boundary {
            (p.mean, DVector::zeros(self.n_teams()), 1.0 / self.n_games as f64)
        } else {
            self.henderson(d, sigma2 / sigma2_g)?
        };
        let se_lambda = (sigma2 * c_inv_lambda).sqrt();
        let half = normal_quantile(0.975) * se_lambda;
        Ok(MixedFit {
            lambda_hat,
            se_lambda,
            sigma2_g,
            sigma2,
            eta_blup: eta.iter().cloned().collect(),
            reml_loglik: trace[trace.len() - 1],
            iterations,
            converged,
            boundary,
            ci95: [lambda_hat - half, lambda_hat + half],
            loglik_trace: trace,
        })
    }

    fn henderson(&self, d: &DVector<f64>, ratio: f64) -> Result<(f64, DVector<f64>, f64)> {
        let c = henderson_matrix(&self.ztz, &self.net_home, self.n_games, ratio);
        let factor = Factor::new(c)?;
        let q = self.n_teams();
        let mut rhs = DVector::zeros(q + 1);
        rhs[0] = d.sum();
        rhs.rows_mut(1, q).copy_from(&self.z_transpose_times(d));
        let sol = factor.solve(&rhs)?;
        let mut e1 = DVector::zeros(q + 1);
        e1[0] = 1.0;
        let c_inv_lambda = factor.solve(&e1)?[0];
        Ok((sol[0], sol.rows(1, q).into_owned(), c_inv_lambda))
    }
}

/// REML fit of `sm.d`.
pub fn fit_mixed(sm: &ScheduleMatrix, cfg: &EmConfig) -> Result<MixedFit> {
    MixedDesign::new(sm)?.fit(&sm.d, cfg)
}

/// Restricted log-likelihood of `(σ_g², σ²)` with λ profiled out through the
/// error contrasts.
pub fn reml_loglik(sm: &ScheduleMatrix, sigma2_g: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !(sigma2_g >= 0.0) {
        return Err(HfaError::InvalidArgument(
            "reml_loglik needs sigma2 > 0 and sigma2_g >= 0".into(),
        ));
    }
    Ok(MixedDesign::new(sm)?.reml_loglik(&sm.d, sigma2_g, sigma2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(n_teams: usize, pairs: &[(usize, usize)], d: &[f64]) -> ScheduleMatrix {
        let teams = (0..n_teams).map(|i| format!("T{i}")).collect();
        ScheduleMatrix::from_pairs(teams, pairs.to_vec(), DVector::from_row_slice(d)).unwrap()
    }

    fn unbalanced() -> ScheduleMatrix {
        schedule(
            4,
            &[(0, 1), (0, 2), (0, 3), (1, 2), (2, 3), (3, 1), (0, 1), (1, 2)],
            &[12.0, 9.0, 4.0, -3.0, 8.0, 1.0, 15.0, 2.0],
        )
    }

    #[test]
    fn balanced_henderson_gives_mean() {
        let sm = schedule(3, &[(0, 1), (1, 0), (1, 2), (2, 1)], &[7.0, -1.0, 3.0, 5.0]);
        for ratio in [1e-3, 0.5, 4.0, 1e6] {
            let sol = henderson_solve(&sm, ratio).unwrap();
            assert!((sol.lambda_hat - 3.5).abs() < 1e-10, "{ratio}: {}", sol.lambda_hat);
        }
    }

    #[test]
    fn henderson_rejects_nonpositive_ratio() {
        assert!(henderson_solve(&unbalanced(), 0.0).is_err());
        assert!(henderson_solve(&unbalanced(), -1.0).is_err());
    }

    #[test]
    fn large_ratio_approaches_intercept_only() {
        let sm = schedule(3, &[(0, 1), (0, 2), (1, 2), (2, 0)], &[4.0, 6.0, 2.0, -1.0]);
        let sol = henderson_solve(&sm, 1e12).unwrap();
        let ols = sm.d.mean();
        assert!((sol.lambda_hat - ols).abs() < 1e-9);
        assert!(sol.eta.amax() < 1e-9);
    }

    #[test]
    fn small_ratio_approaches_fixed_fit() {
        let sm = unbalanced();
        let sol = henderson_solve(&sm, 1e-12).unwrap();
        let fixed = crate::fixed_model::fit_fixed(&sm).unwrap();
        assert!((sol.lambda_hat - fixed.lambda_hat).abs() < 1e-4);
    }

    #[test]
    fn em_step_matches_dense_henderson() {
        let sm = unbalanced();
        let fit = fit_mixed(&sm, &EmConfig::default()).unwrap();
        if !fit.boundary {
            let sol = henderson_solve(&sm, fit.sigma2 / fit.sigma2_g).unwrap();
            assert!((sol.lambda_hat - fit.lambda_hat).abs() < 1e-10);
            assert!((fit.se_lambda - (fit.sigma2 * sol.c_inv_lambda).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn loglik_trace_is_nondecreasing() {
        for px_em in [false, true] {
            let cfg = EmConfig { px_em, ..EmConfig::default() };
            let fit = fit_mixed(&unbalanced(), &cfg).unwrap();
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10 * w[0].abs(), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn zero_sigma_g_loglik_is_intercept_only() {
        let sm = unbalanced();
        let n = sm.n_games() as f64;
        let mean = sm.d.mean();
        let ss: f64 = sm.d.iter().map(|x| (x - mean).powi(2)).sum();
        for s2 in [0.5, 10.0, 80.0] {
            let expected = -0.5 * ((n - 1.0) * (2.0 * std::f64::consts::PI * s2).ln() + ss / s2);
            let got = reml_loglik(&sm, 0.0, s2).unwrap();
            assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        }
    }

    #[test]
    fn loglik_scale_identity() {
        let sm = unbalanced();
        let scaled = sm.with_response(&sm.d * 2.0);
        let n = sm.n_games() as f64;
        let a = reml_loglik(&sm, 3.0, 20.0).unwrap();
        let b = reml_loglik(&scaled, 12.0, 80.0).unwrap();
        assert!((b - a + (n - 1.0) * 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn noiseless_balanced_fit() {
        let pairs = [(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0), (0, 1), (1, 0)];
        let eta = [4.0, -2.0, 1.0];
        let d: Vec<f64> = pairs.iter().map(|&(h, a)| 3.0 + eta[h] - eta[a]).collect();
        let sm = schedule(3, &pairs, &d);
        let fit = fit_mixed(&sm, &EmConfig::default()).unwrap();
        assert!((fit.lambda_hat - 3.0).abs() < 1e-10, "{}", fit.lambda_hat);
        let var_d = crate::stats::sample_variance(sm.d.as_slice());
        assert!(fit.sigma2 <= 1e-6 * var_d, "{}", fit.sigma2);
    }

    #[test]
    fn not_estimable_is_an_error() {
        let sm = schedule(2, &[(0, 1), (0, 1), (0, 1)], &[1.0, 2.0, 3.0]);
        assert!(matches!(fit_mixed(&sm, &EmConfig::default()), Err(HfaError::NotEstimable)));
    }

    #[test]
    fn config_validation() {
        assert!(EmConfig { max_iter: 0, ..EmConfig::default() }.validate().is_err());
        assert!(EmConfig { rel_tol: 0.0, ..EmConfig::default() }.validate().is_err());
    }

    #[test]
    fn iteration_cap_flags_nonconvergence() {
        let cfg = EmConfig { max_iter: 1, ..EmConfig::default() };
        let fit = fit_mixed(&unbalanced(), &cfg).unwrap();
        assert!(fit.boundary || !fit.converged);
        assert_eq!(fit.iterations, 1);
    }
}
