//! Small statistical helpers: reference distributions, t-tests, KS test.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` divisor.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Monte Carlo standard error of the mean.
pub fn mc_standard_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Upper tail `P(X > x)` of a chi-square distribution.
pub fn chi2_sf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64)
        .map(|d| d.sf(x))
        .unwrap_or(f64::NAN)
}

pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    1.0 - chi2_sf(x, dof)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided p-value of a standard-normal Wald statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    2.0 * Normal::standard().sf(z.abs())
}

pub fn t_quantile(p: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof)
        .map(|d| d.inverse_cdf(p))
        .unwrap_or(f64::NAN)
}

/// Two-sided one-sample t-test of `xs` against `mu0`.
///
/// Returns `None` when fewer than two observations are given or when the
/// sample has zero variance.
pub fn one_sample_t_test(xs: &[f64], mu0: f64) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let var = sample_variance(xs);
    if !(var > 0.0) {
        return None;
    }
    let n = xs.len() as f64;
    let t = (mean(xs) - mu0) / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).ok()?;
    Some((2.0 * dist.sf(t.abs())).min(1.0))
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n(x) − F(x)|`.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i as f64 + 1.0) / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic with the Stephens small-sample
/// correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if (k as i64) % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Median of a slice; `None` when empty.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] })
}
