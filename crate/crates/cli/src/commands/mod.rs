pub mod diagnose;
pub mod generate;
pub mod phase1;
pub mod phase2;
pub mod simulate;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use hfa_core::schedule::DEFAULT_ESTIMABILITY_TOL;
use hfa_core::{filter_intraconference, ConferenceMap, EmConfig, GameSet};

use crate::output::Metadata;
use crate::usage;

/// Label used for the conference column of full-season units.
pub const FULL_SEASON: &str = "ALL";

#[derive(Debug, Clone, clap::Args)]
pub struct EmArgs {
    /// EM iteration cap.
    #[arg(long, default_value_t = EmConfig::default().max_iter)]
    pub max_iter: usize,
    /// Relative-change convergence tolerance for the variance components.
    #[arg(long, default_value_t = EmConfig::default().rel_tol)]
    pub rel_tol: f64,
    /// Use parameter-expanded EM steps.
    #[arg(long)]
    pub px_em: bool,
}

impl EmArgs {
    pub fn config(&self) -> Result<EmConfig> {
        let cfg = EmConfig {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            px_em: self.px_em,
            ..EmConfig::default()
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn record(&self, meta: &mut Metadata) {
        let cfg = EmConfig::default();
        meta.tolerance("em_max_iter", self.max_iter)
            .tolerance("em_rel_tol", self.rel_tol)
            .tolerance("em_var_floor", cfg.var_floor)
            .tolerance("em_px", self.px_em)
            .tolerance("estimability_tol", DEFAULT_ESTIMABILITY_TOL);
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct InputArgs {
    /// Games CSV: season,date,home_team,away_team,home_score,away_score,neutral.
    #[arg(long)]
    pub games: PathBuf,
    /// Conference map CSV: season,team,conference.
    #[arg(long)]
    pub conferences: Option<PathBuf>,
    /// Keep neutral-site games (dropped by default).
    #[arg(long)]
    pub keep_neutral: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    FullSeason,
    PerConference,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::FullSeason => "full_season",
            Scope::PerConference => "per_conference",
        }
    }
}

/// One set of games to fit: a season, or a conference within a season.
pub struct Unit {
    pub season: i32,
    pub conference: String,
    pub games: GameSet,
}

/// Split games into units for the requested scope, in (season, conference)
/// order.
pub fn units(games: &GameSet, cm: Option<&ConferenceMap>, scope: Scope, keep_neutral: bool) -> Result<Vec<Unit>> {
    let mut out = Vec::new();
    for (season, gs) in games.by_season() {
        match scope {
            Scope::FullSeason => {
                let gs = if keep_neutral { gs } else { gs.without_neutral() };
                out.push(Unit {
                    season,
                    conference: FULL_SEASON.into(),
                    games: gs,
                });
            }
            Scope::PerConference => {
                let cm = cm.ok_or_else(|| usage("--conferences is required for per-conference fits"))?;
                let split = filter_intraconference(&gs, cm, !keep_neutral);
                if split.dropped_unmapped > 0 {
                    eprintln!(
                        "warning: season {season}: {} games involve teams missing from the conference map",
                        split.dropped_unmapped
                    );
                }
                for (conference, gs) in split.by_conference {
                    out.push(Unit {
                        season,
                        conference,
                        games: gs,
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Seed from the flag, or a fresh one that is reported so the run can be
/// repeated.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}
