//! Resampling simulations for estimator bias and interval coverage, and a
//! synthetic league generator with a schedule-imbalance knob.
//!
//! Each replicate draws
//!
//! * fixed schedule: `y = λ₀1 + Zη̂ + s₁(ê)`
//! * shuffled teams: `y = λ₀1 + Z s₀(η̂) + s₁(ê)`
//!
//! where `s₁` samples residuals with replacement and `s₀` is a uniform
//! random permutation, and fits both the fixed and the mixed model.
//!
//! Replicate `r` draws from its own ChaCha stream (`seed`, stream `r`), and
//! results are stored by replicate index, so output is identical for any
//! number of worker threads.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{schedule_bias_statistic, DiagnosticResult};
use crate::error::{HfaError, Result};
use crate::fixed_model::FixedDesign;
use crate::mixed_model::{EmConfig, MixedDesign, MixedFit};
use crate::schedule::{Game, GameSet, ScheduleMatrix};
use crate::stats::{mc_standard_error, mean, one_sample_t_test};

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Independent random stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    FixedSchedule,
    ShuffledTeams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub lambda0: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub mode: SimMode,
    pub em: EmConfig,
}

impl SimSpec {
    pub fn new(mode: SimMode, n_reps: usize, seed: u64) -> Self {
        Self {
            lambda0: 3.0,
            n_reps,
            seed,
            mode,
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub mode: SimMode,
    pub lambda0: f64,
    pub lambda_draws_fixed: Vec<f64>,
    pub lambda_draws_mixed: Vec<f64>,
    pub mean_fixed: f64,
    pub mean_mixed: f64,
    pub mc_se_fixed: f64,
    pub mc_se_mixed: f64,
    pub coverage_fixed: f64,
    pub coverage_mixed: f64,
    /// Two-sided one-sample t-test of the draws against `lambda0`; absent
    /// when the draws have zero variance.
    pub t_p_fixed: Option<f64>,
    pub t_p_mixed: Option<f64>,
    /// Replicates excluded because a fit failed.
    pub failures: usize,
    /// Mixed fits that hit the EM iteration cap (kept, flagged).
    pub nonconverged: usize,
}

struct Resampler<'a> {
    sm: &'a ScheduleMatrix,
    eta: Vec<f64>,
    residuals: Vec<f64>,
    spec: &'a SimSpec,
}

impl Resampler<'_> {
    fn new<'a>(sm: &'a ScheduleMatrix, base_fit: &MixedFit, spec: &'a SimSpec) -> Result<Resampler<'a>> {
        if spec.n_reps < 1 {
            return Err(HfaError::InvalidArgument("n_reps must be at least 1".into()));
        }
        if base_fit.boundary {
            return Err(HfaError::InvalidArgument(
                "base fit has zero team-effect variance; nothing to resample".into(),
            ));
        }
        if base_fit.eta_blup.len() != sm.n_teams() {
            return Err(HfaError::InvalidArgument("base fit does not match schedule".into()));
        }
        Ok(Resampler {
            sm,
            eta: base_fit.eta_blup.clone(),
            residuals: base_fit.conditional_residuals(sm).iter().cloned().collect(),
            spec,
        })
    }

    fn response(&self, replicate: usize) -> DVector<f64> {
        let mut rng = stream_rng(self.spec.seed, replicate as u64);
        let mut eta = self.eta.clone();
        if self.spec.mode == SimMode::ShuffledTeams {
            eta.shuffle(&mut rng);
        }
        let n = self.residuals.len();
        DVector::from_iterator(
            n,
            self.sm.pairs.iter().map(|&(h, a)| {
                let e = self.residuals[rng.random_range(0..n)];
                self.spec.lambda0 + eta[h] - eta[a] + e
            }),
        )
    }
}

struct Replicate {
    lambda_fixed: f64,
    covers_fixed: bool,
    lambda_mixed: f64,
    covers_mixed: bool,
    converged: bool,
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(HfaError::TooManyFailures { failed, total });
    }
    Ok(())
}

/// Response vector of replicate `replicate`, exactly as the runners build it.
pub fn replicate_response(
    sm: &ScheduleMatrix,
    base_fit: &MixedFit,
    spec: &SimSpec,
    replicate: usize,
) -> Result<DVector<f64>> {
    Ok(Resampler::new(sm, base_fit, spec)?.response(replicate))
}

/// Refit both models to resampled responses built from `base_fit`.
pub fn run_resampling(sm: &ScheduleMatrix, base_fit: &MixedFit, spec: &SimSpec) -> Result<SimulationReport> {
    let sampler = Resampler::new(sm, base_fit, spec)?;
    let fixed = FixedDesign::new(sm)?;
    let mixed = MixedDesign::new(sm)?;
    let outcomes: Vec<Result<Replicate>> = (0..spec.n_reps)
        .into_par_iter()
        .map(|r| {
            let y = sampler.response(r);
            let ff = fixed.fit(&y)?;
            let mf = mixed.fit(&y, &spec.em)?;
            Ok(Replicate {
                lambda_fixed: ff.lambda_hat,
                covers_fixed: ff.covers(spec.lambda0),
                lambda_mixed: mf.lambda_hat,
                covers_mixed: mf.covers(spec.lambda0),
                converged: mf.converged,
            })
        })
        .collect();

    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    check_failures(failures, spec.n_reps)?;
    let ok: Vec<&Replicate> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let draws_fixed: Vec<f64> = ok.iter().map(|r| r.lambda_fixed).collect();
    let draws_mixed: Vec<f64> = ok.iter().map(|r| r.lambda_mixed).collect();
    let m = ok.len() as f64;
    let se = |xs: &[f64]| if xs.len() > 1 { mc_standard_error(xs) } else { f64::NAN };
    Ok(SimulationReport {
        mode: spec.mode,
        lambda0: spec.lambda0,
        mean_fixed: mean(&draws_fixed),
        mean_mixed: mean(&draws_mixed),
        mc_se_fixed: se(&draws_fixed),
        mc_se_mixed: se(&draws_mixed),
        coverage_fixed: ok.iter().filter(|r| r.covers_fixed).count() as f64 / m,
        coverage_mixed: ok.iter().filter(|r| r.covers_mixed).count() as f64 / m,
        t_p_fixed: one_sample_t_test(&draws_fixed, spec.lambda0),
        t_p_mixed: one_sample_t_test(&draws_mixed, spec.lambda0),
        failures,
        nonconverged: ok.iter().filter(|r| !r.converged).count(),
        lambda_draws_fixed: draws_fixed,
        lambda_draws_mixed: draws_mixed,
    })
}

/// Schedule-bias diagnostic evaluated on resampled responses; with
/// [`SimMode::ShuffledTeams`] this samples its null distribution.
pub fn run_diagnostic_null(
    sm: &ScheduleMatrix,
    base_fit: &MixedFit,
    spec: &SimSpec,
) -> Result<Vec<DiagnosticResult>> {
    let sampler = Resampler::new(sm, base_fit, spec)?;
    let mixed = MixedDesign::new(sm)?;
    let outcomes: Vec<Result<DiagnosticResult>> = (0..spec.n_reps)
        .into_par_iter()
        .map(|r| {
            let y = sampler.response(r);
            let fit = mixed.fit(&y, &spec.em)?;
            schedule_bias_statistic(&fit, &sm.with_response(y))
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    check_failures(failures, spec.n_reps)?;
    Ok(outcomes.into_iter().filter_map(Result::ok).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeagueSpec {
    pub n_teams: usize,
    pub games_per_team: usize,
    pub sigma_g: f64,
    pub sigma: f64,
    /// Probability that the stronger team of a pairing hosts.
    pub home_bias: f64,
    pub seed: u64,
}

impl LeagueSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_teams < 3 {
            return Err(HfaError::InvalidArgument("a league needs at least 3 teams".into()));
        }
        if self.games_per_team < 1 {
            return Err(HfaError::InvalidArgument("games_per_team must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.home_bias) {
            return Err(HfaError::InvalidArgument("home_bias must lie in [0, 1]".into()));
        }
        if !(self.sigma_g >= 0.0) || !(self.sigma >= 0.0) {
            return Err(HfaError::InvalidArgument("standard deviations must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Synthetic league: a schedule (with zero margins) and the true team effects.
#[derive(Debug, Clone, PartialEq)]
pub struct League {
    pub schedule: ScheduleMatrix,
    pub eta_true: Vec<f64>,
    pub sigma: f64,
}

impl League {
    /// `λ1 + Zη + ε` with `ε ~ N(0, σ²)`.
    pub fn margins<R: Rng + ?Sized>(&self, lambda: f64, rng: &mut R) -> DVector<f64> {
        let noise = Normal::new(0.0, self.sigma).expect("validated sigma");
        DVector::from_iterator(
            self.schedule.n_games(),
            self.schedule
                .pairs
                .iter()
                .map(|&(h, a)| lambda + self.eta_true[h] - self.eta_true[a] + noise.sample(rng)),
        )
    }

    /// Schedule with margins drawn from [`League::margins`].
    pub fn season<R: Rng + ?Sized>(&self, lambda: f64, rng: &mut R) -> ScheduleMatrix {
        self.schedule.with_response(self.margins(lambda, rng))
    }

    /// Render margins as game records. Margins are rounded to whole points
    /// and added to a base score of 60 on the winning side.
    pub fn games(&self, season: i32, margins: &DVector<f64>) -> GameSet {
        let games = self
            .schedule
            .pairs
            .iter()
            .zip(margins.iter())
            .map(|(&(h, a), &m)| {
                let m = m.round() as i64;
                Game {
                    season,
                    home_team: self.schedule.teams[h].clone(),
                    away_team: self.schedule.teams[a].clone(),
                    home_score: (60 + m.max(0)) as u32,
                    away_score: (60 + (-m).max(0)) as u32,
                    neutral: false,
                }
            })
            .collect();
        GameSet::new(games, season.to_string())
    }
}

/// Circle-method round robin; odd team counts get a bye each round.
fn round_robin(n_teams: usize) -> Vec<Vec<(usize, usize)>> {
    let slots = n_teams + n_teams % 2;
    let mut order: Vec<usize> = (0..slots).collect();
    let mut rounds = Vec::with_capacity(slots - 1);
    for _ in 0..slots - 1 {
        let round = (0..slots / 2)
            .map(|i| (order[i], order[slots - 1 - i]))
            .filter(|&(a, b)| a < n_teams && b < n_teams)
            .collect();
        rounds.push(round);
        order[1..].rotate_right(1);
    }
    rounds
}

/// Generate a league: `η ~ N(0, σ_g²)`, pairings from a round robin cycled
/// and truncated at `⌊n_teams · games_per_team / 2⌋` games, and for each
/// pairing the stronger team hosts with probability `home_bias`.
pub fn generate_league(ls: &LeagueSpec) -> Result<League> {
    ls.validate()?;
    let mut rng = stream_rng(ls.seed, 0);
    let effect = Normal::new(0.0, ls.sigma_g).expect("validated sigma_g");
    let eta: Vec<f64> = (0..ls.n_teams).map(|_| effect.sample(&mut rng)).collect();
    let target = ls.n_teams * ls.games_per_team / 2;
    let rounds = round_robin(ls.n_teams);
    let mut pairs = Vec::with_capacity(target);
    'outer: for round in rounds.iter().cycle() {
        for &(a, b) in round {
            if pairs.len() == target {
                break 'outer;
            }
            let (strong, weak) = if eta[a] >= eta[b] { (a, b) } else { (b, a) };
            if rng.random::<f64>() < ls.home_bias {
                pairs.push((strong, weak));
            } else {
                pairs.push((weak, strong));
            }
        }
    }
    let width = (ls.n_teams - 1).to_string().len();
    let teams = (0..ls.n_teams).map(|i| format!("T{i:0width$}")).collect();
    let d = DVector::zeros(pairs.len());
    Ok(League {
        schedule: ScheduleMatrix::from_pairs(teams, pairs, d)?,
        eta_true: eta,
        sigma: ls.sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearRow {
    pub year: i32,
    pub mean_fixed: f64,
    pub mean_mixed: f64,
    pub coverage_fixed: f64,
    pub coverage_mixed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearSummary {
    pub rows: Vec<YearRow>,
    pub mean_fixed: f64,
    pub mean_mixed: f64,
    pub coverage_fixed: f64,
    pub coverage_mixed: f64,
    /// Two-sided t-test of the per-year means against `lambda0`; absent for
    /// a single year or zero spread.
    pub p_fixed: Option<f64>,
    pub p_mixed: Option<f64>,
}

/// Pool per-year simulation reports.
pub fn summarize_by_year(reports: &[(i32, SimulationReport)], lambda0: f64) -> Result<YearSummary> {
    if reports.is_empty() {
        return Err(HfaError::InvalidArgument("no yearly reports to summarize".into()));
    }
    let rows: Vec<YearRow> = reports
        .iter()
        .map(|(year, r)| YearRow {
            year: *year,
            mean_fixed: r.mean_fixed,
            mean_mixed: r.mean_mixed,
            coverage_fixed: r.coverage_fixed,
            coverage_mixed: r.coverage_mixed,
        })
        .collect();
    let col = |f: fn(&YearRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let m_fixed = col(|r| r.mean_fixed);
    let m_mixed = col(|r| r.mean_mixed);
    Ok(YearSummary {
        mean_fixed: mean(&m_fixed),
        mean_mixed: mean(&m_mixed),
        coverage_fixed: mean(&col(|r| r.coverage_fixed)),
        coverage_mixed: mean(&col(|r| r.coverage_mixed)),
        p_fixed: one_sample_t_test(&m_fixed, lambda0),
        p_mixed: one_sample_t_test(&m_mixed, lambda0),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{check_estimability, DEFAULT_ESTIMABILITY_TOL};

    fn report(mean: f64) -> SimulationReport {
        SimulationReport {
            mode: SimMode::FixedSchedule,
            lambda0: 3.0,
            lambda_draws_fixed: vec![],
            lambda_draws_mixed: vec![],
            mean_fixed: mean,
            mean_mixed: mean,
            mc_se_fixed: 0.0,
            mc_se_mixed: 0.0,
            coverage_fixed: 0.95,
            coverage_mixed: 0.9,
            t_p_fixed: None,
            t_p_mixed: None,
            failures: 0,
            nonconverged: 0,
        }
    }

    #[test]
    fn summary_of_identical_years_has_no_p() {
        let reps = vec![(2000, report(3.0)), (2001, report(3.0)), (2002, report(3.0))];
        let s = summarize_by_year(&reps, 3.0).unwrap();
        assert_eq!(s.mean_fixed, 3.0);
        assert!(s.p_fixed.is_none() && s.p_mixed.is_none());
    }

    #[test]
    fn symmetric_years_have_unit_p() {
        let reps = vec![(2000, report(2.9)), (2001, report(3.1))];
        let s = summarize_by_year(&reps, 3.0).unwrap();
        assert!((s.mean_mixed - 3.0).abs() < 1e-12);
        assert!((s.p_mixed.unwrap() - 1.0).abs() < 1e-12);
        assert!((s.coverage_mixed - 0.9).abs() < 1e-12);
    }

    #[test]
    fn single_year_summary() {
        let s = summarize_by_year(&[(2017, report(3.2))], 3.0).unwrap();
        assert!(s.p_fixed.is_none());
        assert!(summarize_by_year(&[], 3.0).is_err());
    }

    #[test]
    fn three_team_league_is_a_cycle() {
        for home_bias in [0.0, 0.5, 1.0] {
            let ls = LeagueSpec {
                n_teams: 3,
                games_per_team: 2,
                sigma_g: 1.0,
                sigma: 1.0,
                home_bias,
                seed: 11,
            };
            let league = generate_league(&ls).unwrap();
            assert_eq!(league.schedule.n_games(), 3);
            let mut met: Vec<(usize, usize)> = league
                .schedule
                .pairs
                .iter()
                .map(|&(h, a)| (h.min(a), h.max(a)))
                .collect();
            met.sort();
            assert_eq!(met, vec![(0, 1), (0, 2), (1, 2)]);
            let rep = check_estimability(&league.schedule, DEFAULT_ESTIMABILITY_TOL).unwrap();
            assert!(rep.lambda_estimable);
        }
    }

    #[test]
    fn round_robin_covers_every_pair_once() {
        for n in [4, 5, 8] {
            let mut seen = std::collections::BTreeSet::new();
            for round in round_robin(n) {
                for (a, b) in round {
                    assert!(seen.insert((a.min(b), a.max(b))));
                }
            }
            assert_eq!(seen.len(), n * (n - 1) / 2);
        }
    }

    #[test]
    fn full_bias_means_stronger_hosts() {
        let ls = LeagueSpec {
            n_teams: 8,
            games_per_team: 7,
            sigma_g: 3.0,
            sigma: 1.0,
            home_bias: 1.0,
            seed: 2,
        };
        let league = generate_league(&ls).unwrap();
        for &(h, a) in &league.schedule.pairs {
            assert!(league.eta_true[h] >= league.eta_true[a]);
        }
    }

    #[test]
    fn invalid_league_specs() {
        let ok = LeagueSpec {
            n_teams: 4,
            games_per_team: 3,
            sigma_g: 1.0,
            sigma: 1.0,
            home_bias: 0.5,
            seed: 0,
        };
        assert!(ok.validate().is_ok());
        assert!(LeagueSpec { n_teams: 2, ..ok }.validate().is_err());
        assert!(LeagueSpec { home_bias: 1.5, ..ok }.validate().is_err());
        assert!(LeagueSpec { games_per_team: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn streams_are_independent_of_order() {
        let a: Vec<u64> = (0..4).map(|s| stream_rng(9, s).random()).collect();
        let b: Vec<u64> = (0..4).rev().map(|s| stream_rng(9, s).random()).collect();
        let b: Vec<u64> = b.into_iter().rev().collect();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn games_round_trip_margins() {
        let ls = LeagueSpec {
            n_teams: 4,
            games_per_team: 3,
            sigma_g: 2.0,
            sigma: 5.0,
            home_bias: 0.5,
            seed: 5,
        };
        let league = generate_league(&ls).unwrap();
        let d = league.margins(3.0, &mut stream_rng(1, 0));
        let gs = league.games(2010, &d);
        for (g, m) in gs.games.iter().zip(d.iter()) {
            assert_eq!(g.margin(), m.round());
        }
    }
}
