//! Weighted fixed-slope trend models for two-conference sports.
//!
//! With conference `A` as reference and `I_B` the indicator of the other
//! conference:
//!
//! * full:         `β₀A + β₁A t + (β₀B + β₁B t) I_B`
//! * common trend: `β₀A + β₁A t`
//! * no trend:     `β₀A + β₀B I_B`

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::series::HfaSeries;
use super::{DEFAULT_TIME_ORIGIN, LN_2PI};
use crate::error::{HfaError, Result};
use crate::linalg::spd_inverse;
use crate::stats::{chi2_sf, normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendModel {
    Full,
    CommonTrend,
    NoTrend,
}

impl TrendModel {
    fn columns(self) -> &'static [&'static str] {
        match self {
            TrendModel::Full => &["beta_0A", "beta_1A", "beta_0B", "beta_1B"],
            TrendModel::CommonTrend => &["beta_0A", "beta_1A"],
            TrendModel::NoTrend => &["beta_0A", "beta_0B"],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrendOptions {
    pub time_origin: Option<i32>,
    /// Conference coded as `A`; defaults to the first lexicographically.
    pub reference_conference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci95: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedTrendFit {
    pub model_id: TrendModel,
    pub coefficients: Vec<Coefficient>,
    /// REML (unbiased) estimate of the dispersion.
    pub sigma2_lambda: f64,
    pub sigma2_ml: f64,
    pub loglik_ml: f64,
    pub reml_loglik: f64,
    pub reference_conference: String,
    pub other_conference: Option<String>,
    pub time_origin: i32,
    pub n_obs: usize,
    /// Identifies the data the model was fitted to, for nesting checks.
    #[serde(skip)]
    data_key: Vec<(i32, String, u64, u64)>,
}

impl FixedTrendFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    fn value(&self, name: &str) -> f64 {
        self.coefficient(name).map_or(0.0, |c| c.estimate)
    }

    /// Fitted value for a conference at `year`.
    pub fn fitted(&self, conference: &str, year: i32) -> f64 {
        let t = f64::from(year - self.time_origin);
        let b = f64::from(u8::from(Some(conference) == self.other_conference.as_deref()));
        self.value("beta_0A") + self.value("beta_1A") * t + (self.value("beta_0B") + self.value("beta_1B") * t) * b
    }
}

/// Weighted least-squares fit of one of the fixed trend models.
pub fn fit_fixed_trend(series: &HfaSeries, model: TrendModel, opts: &TrendOptions) -> Result<FixedTrendFit> {
    let conferences = series.conferences();
    let reference = match &opts.reference_conference {
        Some(r) if conferences.contains(r) => r.clone(),
        Some(r) => {
            return Err(HfaError::InvalidArgument(format!(
                "reference conference {r} not present in the series"
            )))
        }
        None => conferences
            .first()
            .cloned()
            .ok_or_else(|| HfaError::InvalidArgument("empty series".into()))?,
    };
    let other: Vec<&String> = conferences.iter().filter(|c| **c != reference).collect();
    let other = match (model, other.len()) {
        (TrendModel::CommonTrend, 0) => None,
        (_, 1) => Some(other[0].clone()),
        (TrendModel::CommonTrend, _) => None,
        (_, k) => {
            return Err(HfaError::InvalidArgument(format!(
                "{model:?} model needs exactly two conferences, found {}",
                k + 1
            )))
        }
    };
    let origin = opts.time_origin.unwrap_or(DEFAULT_TIME_ORIGIN);
    let cols = model.columns();
    let p = cols.len();
    let n = series.len();
    if n <= p {
        return Err(HfaError::InvalidArgument(format!(
            "{n} observations cannot support {p} coefficients"
        )));
    }
    if series.years().len() < 2 {
        return Err(HfaError::InvalidArgument("trend models need at least two years".into()));
    }

    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut w2 = DVector::zeros(n);
    for (i, r) in series.rows().iter().enumerate() {
        let t = f64::from(r.year - origin);
        let b = f64::from(u8::from(Some(&r.conference) == other.as_ref()));
        for (j, name) in cols.iter().enumerate() {
            x[(i, j)] = match *name {
                "beta_0A" => 1.0,
                "beta_1A" => t,
                "beta_0B" => b,
                _ => b * t,
            };
        }
        y[i] = r.lambda_hat;
        w2[i] = r.se * r.se;
    }
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row /= w2[i];
    }
    let xtwx = x.transpose() * &xw;
    let xtwx_inv = spd_inverse(&xtwx)
        .map_err(|_| HfaError::InvalidArgument("trend design is rank deficient".into()))?;
    let beta = &xtwx_inv * (xw.transpose() * &y);
    let resid = &y - &x * &beta;
    let rss: f64 = resid.iter().zip(w2.iter()).map(|(r, w)| r * r / w).sum();
    let log_w2: f64 = w2.iter().map(|w| w.ln()).sum();
    let (nf, pf) = (n as f64, p as f64);
    let sigma2_ml = rss / nf;
    let sigma2_reml = rss / (nf - pf);
    let loglik_ml = -0.5 * (nf * (LN_2PI + sigma2_ml.ln()) + log_w2 + nf);
    let xtx_det = (x.transpose() * &x).determinant();
    let reml_loglik = -0.5
        * ((nf - pf) * (LN_2PI + sigma2_reml.ln() + 1.0) + log_w2 + xtwx.determinant().ln() - xtx_det.ln());

    let z = normal_quantile(0.975);
    let coefficients = cols
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = (sigma2_reml * xtwx_inv[(j, j)]).sqrt();
            Coefficient {
                name: name.to_string(),
                estimate: beta[j],
                se,
                ci95: [beta[j] - z * se, beta[j] + z * se],
            }
        })
        .collect();
    Ok(FixedTrendFit {
        model_id: model,
        coefficients,
        sigma2_lambda: sigma2_reml,
        sigma2_ml,
        loglik_ml,
        reml_loglik,
        reference_conference: reference,
        other_conference: other,
        time_origin: origin,
        n_obs: n,
        data_key: series
            .rows()
            .iter()
            .map(|r| (r.year, r.conference.clone(), r.lambda_hat.to_bits(), r.se.to_bits()))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrtResult {
    pub stat: f64,
    pub dof: usize,
    pub p: f64,
}

/// Likelihood-ratio test of `reduced` against `full`, both ML fits to the
/// same data.
pub fn lrt(full: &FixedTrendFit, reduced: &FixedTrendFit) -> Result<LrtResult> {
    if full.data_key != reduced.data_key
        || full.reference_conference != reduced.reference_conference
        || full.time_origin != reduced.time_origin
    {
        return Err(HfaError::InvalidArgument("models were fitted to different data".into()));
    }
    let full_cols = full.model_id.columns();
    let reduced_cols = reduced.model_id.columns();
    if !reduced_cols.iter().all(|c| full_cols.contains(c)) {
        return Err(HfaError::InvalidArgument(format!(
            "{:?} is not nested in {:?}",
            reduced.model_id, full.model_id
        )));
    }
    let dof = full_cols.len() - reduced_cols.len();
    let stat = (2.0 * (full.loglik_ml - reduced.loglik_ml)).max(0.0);
    let p = if dof == 0 { 1.0 } else { chi2_sf(stat, dof) };
    Ok(LrtResult { stat, dof, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase2::HfaRow;

    fn two_conf(f: impl Fn(&str, f64) -> f64, se: impl Fn(usize) -> f64) -> HfaSeries {
        let mut rows = Vec::new();
        let mut i = 0;
        for c in ["East", "West"] {
            for year in 2000..=2017 {
                let t = f64::from(year - 2017);
                rows.push(HfaRow {
                    year,
                    conference: c.into(),
                    lambda_hat: f(c, t),
                    se: se(i),
                });
                i += 1;
            }
        }
        HfaSeries::new(rows).unwrap()
    }

    fn noisy(c: &str, t: f64) -> f64 {
        let k = (t as i64 * 31 + c.len() as i64 * 17).rem_euclid(11) as f64;
        3.0 + 0.02 * t + (k - 5.0) * 0.3
    }

    #[test]
    fn identical_lines_have_zero_difference() {
        let s = two_conf(|_, t| 3.0 - 0.05 * t, |_| 1.0);
        let fit = fit_fixed_trend(&s, TrendModel::Full, &TrendOptions::default()).unwrap();
        assert!(fit.coefficient("beta_0B").unwrap().estimate.abs() < 1e-12);
        assert!(fit.coefficient("beta_1B").unwrap().estimate.abs() < 1e-12);
    }

    #[test]
    fn no_trend_intercept_is_weighted_mean() {
        let s = two_conf(|c, t| if c == "East" { 2.0 + (t as i64 % 3) as f64 } else { 5.0 }, |i| 0.5 + (i % 4) as f64);
        let fit = fit_fixed_trend(&s, TrendModel::NoTrend, &TrendOptions::default()).unwrap();
        let (num, den) = s
            .rows()
            .iter()
            .filter(|r| r.conference == "East")
            .fold((0.0, 0.0), |acc, r| (acc.0 + r.lambda_hat / (r.se * r.se), acc.1 + 1.0 / (r.se * r.se)));
        assert!((fit.coefficient("beta_0A").unwrap().estimate - num / den).abs() < 1e-12);
    }

    #[test]
    fn exact_lines_recovered() {
        let s = two_conf(|c, t| if c == "East" { 3.0 } else { 2.0 - 0.05 * t }, |_| 1.0);
        let fit = fit_fixed_trend(&s, TrendModel::Full, &TrendOptions::default()).unwrap();
        assert!((fit.coefficient("beta_0B").unwrap().estimate + 1.0).abs() < 1e-12);
        assert!((fit.coefficient("beta_1B").unwrap().estimate + 0.05).abs() < 1e-12);
        assert!((fit.fitted("West", 2010) - (2.0 + 0.35)).abs() < 1e-12);
    }

    #[test]
    fn lrt_degrees_of_freedom() {
        let s = two_conf(noisy, |i| 0.8 + (i % 3) as f64 * 0.2);
        let o = TrendOptions::default();
        let full = fit_fixed_trend(&s, TrendModel::Full, &o).unwrap();
        let common = fit_fixed_trend(&s, TrendModel::CommonTrend, &o).unwrap();
        let flat = fit_fixed_trend(&s, TrendModel::NoTrend, &o).unwrap();
        let same = lrt(&full, &full).unwrap();
        assert_eq!((same.stat, same.dof, same.p), (0.0, 0, 1.0));
        assert_eq!(lrt(&full, &common).unwrap().dof, 2);
        assert_eq!(lrt(&full, &flat).unwrap().dof, 2);
        assert!(lrt(&common, &flat).is_err());
        assert!(lrt(&common, &full).is_err());
        assert!(full.loglik_ml >= common.loglik_ml && full.loglik_ml >= flat.loglik_ml);
    }

    #[test]
    fn lrt_rejects_different_data() {
        let o = TrendOptions::default();
        let a = fit_fixed_trend(&two_conf(noisy, |_| 1.0), TrendModel::Full, &o).unwrap();
        let b = fit_fixed_trend(&two_conf(noisy, |_| 2.0), TrendModel::CommonTrend, &o).unwrap();
        assert!(lrt(&a, &b).is_err());
    }

    #[test]
    fn full_model_needs_two_conferences() {
        let rows = (2000..2010)
            .map(|year| HfaRow {
                year,
                conference: "Solo".into(),
                lambda_hat: 3.0 + f64::from(year % 3),
                se: 1.0,
            })
            .collect();
        let s = HfaSeries::new(rows).unwrap();
        assert!(fit_fixed_trend(&s, TrendModel::Full, &TrendOptions::default()).is_err());
        assert!(fit_fixed_trend(&s, TrendModel::CommonTrend, &TrendOptions::default()).is_ok());
    }

    #[test]
    fn reference_override() {
        let s = two_conf(|c, _| if c == "East" { 1.0 } else { 4.0 }, |_| 1.0);
        let o = TrendOptions {
            reference_conference: Some("West".into()),
            ..TrendOptions::default()
        };
        let fit = fit_fixed_trend(&s, TrendModel::NoTrend, &o).unwrap();
        assert!((fit.coefficient("beta_0A").unwrap().estimate - 4.0).abs() < 1e-12);
        assert!((fit.coefficient("beta_0B").unwrap().estimate + 3.0).abs() < 1e-12);
        let bad = TrendOptions {
            reference_conference: Some("North".into()),
            ..TrendOptions::default()
        };
        assert!(fit_fixed_trend(&s, TrendModel::NoTrend, &bad).is_err());
    }
}
