//! Random-coefficient trend model
//! `λ_ij = (α₀ + b₀j) + (α₁ + b₁j) t_i + ε_ij`, `(b₀j, b₁j) ~ N(0, G)`,
//! `ε_ij ~ N(0, σ²_λ w_ij²)`, fitted by REML.
//!
//! Write `V_j = σ²_λ (W_j + X_j Γ X_j')` with `Γ = G/σ²_λ = LL'`. The
//! scale `σ²_λ` is profiled out, leaving the three log-Cholesky
//! coordinates of `L` to a quasi-Newton search. Because each conference's
//! fixed and random design is the same `[1, t]`, Woodbury's identity
//! reduces every conference to 2×2 sufficient statistics
//! (`X'W⁻¹X`, `X'W⁻¹y`, `y'W⁻¹y`), so an objective evaluation costs
//! O(conferences).

use nalgebra::{DVector, Matrix2, Vector2};
use serde::Serialize;

use super::series::HfaSeries;
use super::{DEFAULT_TIME_ORIGIN, LN_2PI};
use crate::error::{HfaError, Result};
use crate::optim::{minimize, BfgsOptions};
use crate::stats::{normal_quantile, normal_two_sided_p};

#[derive(Debug, Clone, Copy)]
pub struct RandomCoefOptions {
    pub time_origin: i32,
    pub bfgs: BfgsOptions,
}

impl Default for RandomCoefOptions {
    fn default() -> Self {
        Self {
            time_origin: DEFAULT_TIME_ORIGIN,
            bfgs: BfgsOptions {
                max_iter: 1000,
                grad_tol: 1e-9,
                f_tol: 1e-15,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConferenceBlup {
    pub conference: String,
    pub b0: f64,
    pub b1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomCoefFit {
    pub alpha0: f64,
    pub alpha1: f64,
    pub se_alpha0: f64,
    pub se_alpha1: f64,
    pub ci95_alpha0: [f64; 2],
    pub ci95_alpha1: [f64; 2],
    /// Wald z-test p-values for `α₀ = 0` and `α₁ = 0`.
    pub p_alpha0: f64,
    pub p_alpha1: f64,
    /// Lower triangle of `G`: `σ²₁`, `σ₁₂`, `σ²₂`.
    pub sigma2_1: f64,
    pub sigma12: f64,
    pub sigma2_2: f64,
    pub sigma2_lambda: f64,
    pub blups: Vec<ConferenceBlup>,
    pub reml_loglik: f64,
    pub converged: bool,
    /// `G` estimated as exactly zero.
    pub boundary: bool,
    pub time_origin: i32,
    pub n_obs: usize,
    pub n_conferences: usize,
    /// Mean squared standard error of the rows at the time origin, if any.
    pub mean_w2_at_origin: Option<f64>,
}

impl RandomCoefFit {
    pub fn g(&self) -> Matrix2<f64> {
        Matrix2::new(self.sigma2_1, self.sigma12, self.sigma12, self.sigma2_2)
    }

    /// Conference-specific fitted line at `year`.
    pub fn fitted(&self, conference: &str, year: i32) -> Option<f64> {
        let b = self.blups.iter().find(|b| b.conference == conference)?;
        let t = f64::from(year - self.time_origin);
        Some(self.alpha0 + b.b0 + (self.alpha1 + b.b1) * t)
    }

    /// Population line at `year`.
    pub fn population(&self, year: i32) -> f64 {
        self.alpha0 + self.alpha1 * f64::from(year - self.time_origin)
    }
}

/// Per-conference sufficient statistics with `X_j = [1, t]`.
#[derive(Debug, Clone)]
pub(crate) struct Group {
    pub name: String,
    pub s: Matrix2<f64>,
    pub r: Vector2<f64>,
    pub q: f64,
    pub log_w2: f64,
    pub xtx: Matrix2<f64>,
}

/// Design of the model: times, weights and grouping, independent of `y`.
#[derive(Debug, Clone)]
pub(crate) struct RcDesign {
    pub names: Vec<String>,
    /// For each conference, `(t, w²)` per row.
    pub rows: Vec<Vec<(f64, f64)>>,
    /// Row order of the source series mapped to `(group, position)`.
    pub index: Vec<(usize, usize)>,
    pub n_obs: usize,
}

impl RcDesign {
    pub fn new(series: &HfaSeries, origin: i32) -> Self {
        let names = series.conferences();
        let mut rows: Vec<Vec<(f64, f64)>> = vec![Vec::new(); names.len()];
        let mut index = Vec::with_capacity(series.len());
        for r in series.rows() {
            let g = names.binary_search(&r.conference).expect("conference listed");
            index.push((g, rows[g].len()));
            rows[g].push((f64::from(r.year - origin), r.se * r.se));
        }
        Self {
            names,
            rows,
            index,
            n_obs: series.len(),
        }
    }

    /// Responses grouped like `rows`.
    pub fn split(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.rows.iter().map(|r| vec![0.0; r.len()]).collect();
        for (&(g, k), &v) in self.index.iter().zip(y) {
            out[g][k] = v;
        }
        out
    }

    pub fn groups(&self, y: &[f64]) -> Vec<Group> {
        self.split(y)
            .into_iter()
            .zip(&self.rows)
            .zip(&self.names)
            .map(|((ys, rows), name)| {
                let mut g = Group {
                    name: name.clone(),
                    s: Matrix2::zeros(),
                    r: Vector2::zeros(),
                    q: 0.0,
                    log_w2: 0.0,
                    xtx: Matrix2::zeros(),
                };
                for (&(t, w2), y) in rows.iter().zip(ys) {
                    let x = Vector2::new(1.0, t);
                    g.s += x * x.transpose() / w2;
                    g.xtx += x * x.transpose();
                    g.r += x * y / w2;
                    g.q += y * y / w2;
                    g.log_w2 += w2.ln();
                }
                g
            })
            .collect()
    }
}

/// Profiled REML quantities at a given `L`.
#[derive(Debug, Clone)]
pub(crate) struct Profile {
    pub loglik: f64,
    pub alpha: Vector2<f64>,
    pub sigma2: f64,
    pub f_inv: Matrix2<f64>,
}

pub(crate) fn lower_from_theta(theta: &DVector<f64>) -> Matrix2<f64> {
    Matrix2::new(theta[0].exp(), 0.0, theta[1], theta[2].exp())
}

pub(crate) fn profile(groups: &[Group], n_obs: usize, l: &Matrix2<f64>) -> Option<Profile> {
    let mut f = Matrix2::zeros();
    let mut gv = Vector2::zeros();
    let mut yhy = 0.0;
    let mut logdet = 0.0;
    let mut xtx = Matrix2::zeros();
    for g in groups {
        let m = Matrix2::identity() + l.transpose() * g.s * l;
        let m_inv = m.try_inverse()?;
        let k = l * m_inv * l.transpose();
        f += g.s - g.s * k * g.s;
        gv += g.r - g.s * k * g.r;
        yhy += g.q - (g.r.transpose() * k * g.r)[(0, 0)];
        logdet += g.log_w2 + m.determinant().ln();
        xtx += g.xtx;
    }
    let f_inv = f.try_inverse()?;
    let alpha = f_inv * gv;
    let rss = yhy - gv.dot(&alpha);
    let dof = n_obs as f64 - 2.0;
    let sigma2 = rss / dof;
    let det_f = f.determinant();
    if !(sigma2 > 0.0) || !(det_f > 0.0) {
        return None;
    }
    let loglik = -0.5
        * (dof * (LN_2PI + sigma2.ln() + 1.0) + logdet + det_f.ln() - xtx.determinant().ln());
    Some(Profile {
        loglik,
        alpha,
        sigma2,
        f_inv,
    })
}

pub(crate) struct Optimum {
    pub l: Matrix2<f64>,
    pub profile: Profile,
    pub converged: bool,
    pub boundary: bool,
}

fn start_points(groups: &[Group], design: &RcDesign) -> Vec<DVector<f64>> {
    let mean_w2 = design.rows.iter().flatten().map(|&(_, w2)| w2).sum::<f64>() / design.n_obs as f64;
    let t_var = {
        let ts: Vec<f64> = design.rows.iter().flatten().map(|&(t, _)| t).collect();
        let m = ts.iter().sum::<f64>() / ts.len() as f64;
        (ts.iter().map(|t| (t - m).powi(2)).sum::<f64>() / ts.len() as f64).max(1.0)
    };
    // Spread of per-conference weighted lines, relative to the error scale.
    let lines: Vec<Vector2<f64>> = groups
        .iter()
        .filter_map(|g| g.s.try_inverse().map(|inv| inv * g.r))
        .collect();
    let spread = |k: usize| -> f64 {
        if lines.len() < 2 {
            return 0.0;
        }
        let m = lines.iter().map(|v| v[k]).sum::<f64>() / lines.len() as f64;
        lines.iter().map(|v| (v[k] - m).powi(2)).sum::<f64>() / (lines.len() - 1) as f64
    };
    let g0 = (spread(0) / mean_w2).max(1e-2);
    let g1 = (spread(1) / mean_w2).max(1e-2 / t_var);
    [1.0, 1e-2, 1e2]
        .iter()
        .map(|&c| DVector::from_vec(vec![0.5 * (c * g0).ln(), 0.0, 0.5 * (c * g1).ln()]))
        .collect()
}

pub(crate) fn optimize(groups: &[Group], design: &RcDesign, opts: &BfgsOptions) -> Result<Optimum> {
    let n = design.n_obs;
    let objective = |theta: &DVector<f64>| -> f64 {
        profile(groups, n, &lower_from_theta(theta))
            .map(|p| -p.loglik)
            .unwrap_or(f64::INFINITY)
    };
    let mut best: Option<(DVector<f64>, f64, bool)> = None;
    for x0 in start_points(groups, design) {
        if !objective(&x0).is_finite() {
            continue;
        }
        let m = minimize(objective, x0, opts);
        if best.as_ref().map_or(true, |b| m.value < b.1) {
            best = Some((m.x, m.value, m.converged));
        }
    }
    let zero = profile(groups, n, &Matrix2::zeros());
    match (best, zero) {
        (Some((theta, value, converged)), zero) => {
            let l = lower_from_theta(&theta);
            let prof = profile(groups, n, &l).expect("finite at optimum");
            match zero {
                Some(z) if z.loglik >= -value => Ok(Optimum {
                    l: Matrix2::zeros(),
                    profile: z,
                    converged: true,
                    boundary: true,
                }),
                _ => Ok(Optimum {
                    l,
                    profile: prof,
                    converged,
                    boundary: false,
                }),
            }
        }
        (None, Some(z)) => Ok(Optimum {
            l: Matrix2::zeros(),
            profile: z,
            converged: true,
            boundary: true,
        }),
        (None, None) => Err(HfaError::Numerical("restricted likelihood undefined at every start".into())),
    }
}

/// Ordinary weighted line through pooled data (the `G = 0` model); used
/// when the data are fitted exactly and the likelihood is unbounded.
/// The residual sum is accumulated directly rather than through the
/// sufficient statistics, which cancel badly near an exact fit.
fn exact_line(groups: &[Group], design: &RcDesign, y: &[f64]) -> Option<(Vector2<f64>, f64, Matrix2<f64>)> {
    let (s, r) = groups
        .iter()
        .fold((Matrix2::zeros(), Vector2::zeros()), |acc, g| (acc.0 + g.s, acc.1 + g.r));
    let s_inv = s.try_inverse()?;
    let alpha = s_inv * r;
    let rss = design
        .index
        .iter()
        .zip(y)
        .map(|(&(g, k), v)| {
            let (t, w2) = design.rows[g][k];
            (v - alpha[0] - alpha[1] * t).powi(2) / w2
        })
        .sum();
    Some((alpha, rss, s_inv))
}

/// REML fit of the random-coefficient model.
pub fn fit_random_coefficient(series: &HfaSeries, opts: &RandomCoefOptions) -> Result<RandomCoefFit> {
    let n_conf = series.conferences().len();
    if n_conf < 3 {
        return Err(HfaError::InvalidArgument(format!(
            "random-coefficient model needs at least 3 conferences, found {n_conf}; use the fixed-trend models"
        )));
    }
    let n_years = series.years().len();
    if n_years < 3 {
        return Err(HfaError::InvalidArgument(format!(
            "random-coefficient model needs at least 3 distinct years, found {n_years}"
        )));
    }
    let design = RcDesign::new(series, opts.time_origin);
    let y: Vec<f64> = series.rows().iter().map(|r| r.lambda_hat).collect();
    let groups = design.groups(&y);

    let q_total: f64 = groups.iter().map(|g| g.q).sum();
    let perfect = exact_line(&groups, &design, &y).filter(|&(_, rss, _)| rss <= 1e-24 * q_total.max(1.0));
    let (l, prof, converged, boundary) = if let Some((alpha, rss, s_inv)) = perfect {
        let sigma2 = (rss / (design.n_obs as f64 - 2.0)).max(0.0);
        let prof = Profile {
            loglik: f64::INFINITY,
            alpha,
            sigma2,
            f_inv: s_inv,
        };
        (Matrix2::zeros(), prof, true, true)
    } else {
        let opt = optimize(&groups, &design, &opts.bfgs)?;
        (opt.l, opt.profile, opt.converged, opt.boundary)
    };

    let gamma = l * l.transpose();
    let g = gamma * prof.sigma2;
    let cov = prof.f_inv * prof.sigma2;
    let (se0, se1) = (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt());
    let z = normal_quantile(0.975);
    let (a0, a1) = (prof.alpha[0], prof.alpha[1]);
    let blups = groups
        .iter()
        .map(|grp| {
            let m = Matrix2::identity() + l.transpose() * grp.s * l;
            let b = match m.try_inverse() {
                Some(m_inv) => l * m_inv * l.transpose() * (grp.r - grp.s * prof.alpha),
                None => Vector2::zeros(),
            };
            ConferenceBlup {
                conference: grp.name.clone(),
                b0: b[0],
                b1: b[1],
            }
        })
        .collect();
    let at_origin: Vec<f64> = series
        .rows()
        .iter()
        .filter(|r| r.year == opts.time_origin)
        .map(|r| r.se * r.se)
        .collect();
    Ok(RandomCoefFit {
        alpha0: a0,
        alpha1: a1,
        se_alpha0: se0,
        se_alpha1: se1,
        ci95_alpha0: [a0 - z * se0, a0 + z * se0],
        ci95_alpha1: [a1 - z * se1, a1 + z * se1],
        p_alpha0: normal_two_sided_p(a0 / se0),
        p_alpha1: normal_two_sided_p(a1 / se1),
        sigma2_1: g[(0, 0)],
        sigma12: g[(1, 0)],
        sigma2_2: g[(1, 1)],
        sigma2_lambda: prof.sigma2,
        blups,
        reml_loglik: prof.loglik,
        converged,
        boundary,
        time_origin: opts.time_origin,
        n_obs: design.n_obs,
        n_conferences: n_conf,
        mean_w2_at_origin: (!at_origin.is_empty())
            .then(|| at_origin.iter().sum::<f64>() / at_origin.len() as f64),
    })
}
