use std::path::PathBuf;

use anyhow::Result;
use clap::ValueEnum;
use hfa_core::diagnostics::schedule_bias_statistic;
use hfa_core::stats::median;
use hfa_core::{build_design, fit_mixed};

use super::{ensure_dir, units, EmArgs, InputArgs, Scope};
use crate::input::{load_conferences, load_games};
use crate::output::{csv_opt, write_csv, Metadata};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeChoice {
    FullSeason,
    PerConference,
    Both,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub input: InputArgs,
    /// Which units to test; defaults to both when a conference map is given.
    #[arg(long, value_enum)]
    pub scope: Option<ScopeChoice>,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub em: EmArgs,
}

pub fn run(args: Args) -> Result<()> {
    let choice = args.scope.unwrap_or(if args.input.conferences.is_some() {
        ScopeChoice::Both
    } else {
        ScopeChoice::FullSeason
    });
    let scopes: &[Scope] = match choice {
        ScopeChoice::FullSeason => &[Scope::FullSeason],
        ScopeChoice::PerConference => &[Scope::PerConference],
        ScopeChoice::Both => &[Scope::FullSeason, Scope::PerConference],
    };
    if scopes.contains(&Scope::PerConference) && args.input.conferences.is_none() {
        return Err(usage("--conferences is required for the per-conference scope"));
    }
    let em = args.em.config()?;
    let mut meta = Metadata::new("diagnose");
    let games = load_games(&args.input.games, &mut meta)?;
    let cm = match &args.input.conferences {
        Some(p) if scopes.contains(&Scope::PerConference) => Some(load_conferences(p, &mut meta)?),
        _ => None,
    };
    args.em.record(&mut meta);
    meta.parameter("scope", format!("{choice:?}").to_lowercase())
        .parameter("keep_neutral", args.input.keep_neutral);

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &scope in scopes {
        let mut ps = Vec::new();
        for unit in units(&games, cm.as_ref(), scope, args.input.keep_neutral)? {
            let result = build_design(&unit.games)
                .and_then(|sm| fit_mixed(&sm, &em).and_then(|f| schedule_bias_statistic(&f, &sm)));
            let (stat, dof, p, applicable, reason) = match result {
                Ok(r) => (r.statistic, r.dof, r.p_value, r.applicable, r.reason.unwrap_or_default()),
                Err(e) => (None, 1, None, false, e.to_string()),
            };
            if let Some(p) = p {
                ps.push(p);
            }
            rows.push(vec![
                "test".to_string(),
                scope.name().to_string(),
                unit.season.to_string(),
                unit.conference,
                csv_opt(stat),
                dof.to_string(),
                csv_opt(p),
                applicable.to_string(),
                reason,
            ]);
        }
        summary.push(vec![
            "median".to_string(),
            scope.name().to_string(),
            String::new(),
            String::new(),
            String::new(),
            "1".to_string(),
            csv_opt(median(&ps)),
            (!ps.is_empty()).to_string(),
            format!("{} applicable tests", ps.len()),
        ]);
    }
    rows.extend(summary);
    ensure_dir(&args.output_dir)?;
    write_csv(
        &args.output_dir.join("diagnostics.csv"),
        &meta,
        &["kind", "scope", "season", "conference", "statistic", "dof", "p", "applicable", "reason"],
        &rows,
    )
}
