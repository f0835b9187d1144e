use std::path::PathBuf;

use anyhow::Result;
use clap::ValueEnum;
use hfa_core::{build_design, fit_fixed, fit_mixed};
use serde_json::{json, Value};

use super::{ensure_dir, units, EmArgs, InputArgs, Scope};
use crate::input::{load_conferences, load_games};
use crate::output::{csv_num, value, write_csv, write_json, Metadata};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Fixed,
    Mixed,
    Both,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub input: InputArgs,
    /// Fit intraconference games separately for each conference and season (default).
    #[arg(long, conflicts_with = "full_season")]
    pub per_conference: bool,
    /// Fit every game of a season together, ignoring conferences.
    #[arg(long)]
    pub full_season: bool,
    #[arg(long, value_enum, default_value_t = ModelChoice::Both)]
    pub model: ModelChoice,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub em: EmArgs,
}

pub fn run(args: Args) -> Result<()> {
    let scope = if args.full_season { Scope::FullSeason } else { Scope::PerConference };
    if scope == Scope::PerConference && args.input.conferences.is_none() {
        return Err(usage("--conferences is required for per-conference fits (or pass --full-season)"));
    }
    let em = args.em.config()?;
    let mut meta = Metadata::new("phase1");
    let games = load_games(&args.input.games, &mut meta)?;
    let cm = match &args.input.conferences {
        Some(p) if scope == Scope::PerConference => Some(load_conferences(p, &mut meta)?),
        _ => None,
    };
    args.em.record(&mut meta);
    meta.parameter("scope", scope.name())
        .parameter("model", format!("{:?}", args.model).to_lowercase())
        .parameter("keep_neutral", args.input.keep_neutral);

    let want_fixed = args.model != ModelChoice::Mixed;
    let want_mixed = args.model != ModelChoice::Fixed;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut omitted = Vec::new();
    let mut omit = |season: i32, conference: &str, model: &str, reason: String| {
        eprintln!("warning: season {season} {conference} ({model}): {reason}; row omitted");
        omitted.push(json!({"season": season, "conference": conference, "model": model, "reason": reason}));
    };

    for unit in units(&games, cm.as_ref(), scope, args.input.keep_neutral)? {
        let sm = match build_design(&unit.games) {
            Ok(sm) => sm,
            Err(e) => {
                omit(unit.season, &unit.conference, "all", e.to_string());
                continue;
            }
        };
        let mut entry = |model: &str, fit: Value, lambda: f64, se: f64| {
            rows.push(vec![
                unit.season.to_string(),
                unit.conference.clone(),
                csv_num(lambda),
                csv_num(se),
                model.to_string(),
            ]);
            fits.push(json!({
                "season": unit.season,
                "conference": unit.conference,
                "scope": scope.name(),
                "model": model,
                "n_games": sm.n_games(),
                "teams": sm.teams,
                "fit": fit,
            }));
        };
        if want_fixed {
            match fit_fixed(&sm) {
                Ok(f) => entry("fixed", value(&f), f.lambda_hat, f.se_lambda),
                Err(e) => omit(unit.season, &unit.conference, "fixed", e.to_string()),
            }
        }
        if want_mixed {
            match fit_mixed(&sm, &em) {
                Ok(f) => {
                    if !f.converged {
                        eprintln!(
                            "warning: season {} {}: EM stopped after {} iterations without converging",
                            unit.season, unit.conference, f.iterations
                        );
                    }
                    entry("mixed", value(&f), f.lambda_hat, f.se_lambda)
                }
                Err(e) => omit(unit.season, &unit.conference, "mixed", e.to_string()),
            }
        }
    }

    ensure_dir(&args.output_dir)?;
    write_csv(
        &args.output_dir.join("hfa_series.csv"),
        &meta,
        &["year", "conference", "lambda_hat", "se", "model"],
        &rows,
    )?;
    write_json(
        &args.output_dir.join("phase1_fits.json"),
        &meta,
        json!({"fits": fits, "omitted": omitted}),
    )
}
