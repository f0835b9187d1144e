//! Trend models over per-conference, per-year HFA estimates.
//!
//! Each row carries a Phase-I estimate `λ_ij` and its standard error `w_ij`;
//! errors are modeled as `N(0, σ²_λ w_ij²)` and time is coded as
//! `t = year − origin` (2017 by default).
//!
//! * [`fit_random_coefficient`]: population line plus correlated
//!   conference-level random intercepts and slopes, for sports with many
//!   conferences.
//! * [`fit_fixed_trend`] and [`lrt`]: fixed conference intercepts and
//!   slopes for two-conference sports, compared by likelihood-ratio tests.
//! * [`boundary_test_g`]: parametric-bootstrap test of `G = 0`.

mod boundary;
mod fixed_trend;
mod random_coef;
mod series;

pub use boundary::{boundary_test_g, BoundaryTest};
pub use fixed_trend::{fit_fixed_trend, lrt, Coefficient, FixedTrendFit, LrtResult, TrendModel, TrendOptions};
pub use random_coef::{fit_random_coefficient, ConferenceBlup, RandomCoefFit, RandomCoefOptions};
pub use series::{HfaRow, HfaSeries, ParsedSeries};

/// Default time origin: `t = year − 2017`.
pub const DEFAULT_TIME_ORIGIN: i32 = 2017;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;
