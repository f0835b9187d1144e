use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use hfa_core::simulation::{
    generate_league, run_resampling, stream_rng, summarize_by_year, LeagueSpec, SimMode, SimSpec, SimulationReport,
};
use hfa_core::{build_design, fit_mixed, ScheduleMatrix};
use rand::Rng;
use serde_json::{json, Value};

use super::{ensure_dir, resolve_seed, units, EmArgs, Scope};
use crate::input::{load_conferences, load_games};
use crate::output::{csv_num, value, write_csv, write_json, Metadata};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Replay the observed schedule with fixed team effects.
    Fixed,
    /// Shuffle team effects across the schedule before each replicate.
    Shuffled,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Games CSV to resample from.
    #[arg(long, required_unless_present = "teams", conflicts_with = "teams")]
    pub games: Option<PathBuf>,
    /// Conference map; with it each conference-season is simulated separately.
    #[arg(long, requires = "games")]
    pub conferences: Option<PathBuf>,
    /// Keep neutral-site games (dropped by default).
    #[arg(long)]
    pub keep_neutral: bool,

    /// Synthetic league size (instead of --games).
    #[arg(long)]
    pub teams: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub games_per_team: usize,
    #[arg(long, default_value_t = 5.0)]
    pub sigma_g: f64,
    #[arg(long, default_value_t = 11.0)]
    pub sigma: f64,
    /// Probability that the stronger team of a pairing hosts.
    #[arg(long, default_value_t = 0.5)]
    pub home_bias: f64,
    /// HFA used to generate the synthetic seasons.
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub league_lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub league_seasons: usize,

    #[arg(long, value_enum, default_value_t = ModeArg::Fixed)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// HFA built into the resampled responses.
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub lambda0: f64,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub em: EmArgs,
}

/// Independent seed for unit `k`, derived from the master seed.
fn unit_seed(seed: u64, k: u64) -> u64 {
    stream_rng(seed, (1 << 63) | k).random()
}

pub fn run(args: Args) -> Result<()> {
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    if !args.lambda0.is_finite() {
        return Err(usage("--lambda0 must be finite"));
    }
    let em = args.em.config()?;
    let seed = resolve_seed(args.seed);
    let mode = match args.mode {
        ModeArg::Fixed => SimMode::FixedSchedule,
        ModeArg::Shuffled => SimMode::ShuffledTeams,
    };
    let mut meta = Metadata::new("simulate");
    meta.seed = Some(seed);
    args.em.record(&mut meta);
    meta.parameter("mode", mode)
        .parameter("reps", args.reps)
        .parameter("lambda0", args.lambda0);

    // (season, conference, schedule)
    let mut sources: Vec<(i32, String, ScheduleMatrix)> = Vec::new();
    if let Some(path) = &args.games {
        let games = load_games(path, &mut meta)?;
        let cm = match &args.conferences {
            Some(p) => Some(load_conferences(p, &mut meta)?),
            None => None,
        };
        let scope = if cm.is_some() { Scope::PerConference } else { Scope::FullSeason };
        meta.parameter("scope", scope.name()).parameter("keep_neutral", args.keep_neutral);
        for unit in units(&games, cm.as_ref(), scope, args.keep_neutral)? {
            match build_design(&unit.games) {
                Ok(sm) => sources.push((unit.season, unit.conference, sm)),
                Err(e) => eprintln!("warning: season {} {}: {e}; skipped", unit.season, unit.conference),
            }
        }
    } else {
        let n_teams = args.teams.expect("clap enforces --games or --teams");
        if args.league_seasons == 0 {
            return Err(usage("--league-seasons must be at least 1"));
        }
        let spec = |k: usize| LeagueSpec {
            n_teams,
            games_per_team: args.games_per_team,
            sigma_g: args.sigma_g,
            sigma: args.sigma,
            home_bias: args.home_bias,
            seed: unit_seed(seed, (1 << 32) | k as u64),
        };
        spec(0).validate().map_err(|e| usage(e.to_string()))?;
        meta.parameter(
            "league",
            json!({
                "teams": n_teams,
                "games_per_team": args.games_per_team,
                "sigma_g": args.sigma_g,
                "sigma": args.sigma,
                "home_bias": args.home_bias,
                "lambda": args.league_lambda,
                "seasons": args.league_seasons,
            }),
        );
        for k in 0..args.league_seasons {
            let ls = spec(k);
            let league = generate_league(&ls)?;
            let mut rng = stream_rng(ls.seed, 1);
            sources.push((k as i32 + 1, "ALL".into(), league.season(args.league_lambda, &mut rng)));
        }
    }

    let mut results: Vec<(i32, SimulationReport)> = Vec::new();
    let mut units_json = Vec::new();
    let mut draws = Vec::new();
    for (k, (season, conference, sm)) in sources.iter().enumerate() {
        let base = match fit_mixed(sm, &em) {
            Ok(f) if !f.boundary => f,
            Ok(_) => {
                eprintln!("warning: season {season} {conference}: team-effect variance estimated as zero; skipped");
                continue;
            }
            Err(e) => {
                eprintln!("warning: season {season} {conference}: {e}; skipped");
                continue;
            }
        };
        let spec = SimSpec {
            lambda0: args.lambda0,
            n_reps: args.reps,
            seed: unit_seed(seed, k as u64),
            mode,
            em,
        };
        let report = run_resampling(sm, &base, &spec)
            .with_context(|| format!("season {season} {conference}"))?;
        for (i, (f, m)) in report.lambda_draws_fixed.iter().zip(&report.lambda_draws_mixed).enumerate() {
            draws.push(vec![season.to_string(), conference.clone(), i.to_string(), csv_num(*f), csv_num(*m)]);
        }
        let mut rv = value(&report);
        if let Value::Object(m) = &mut rv {
            m.remove("lambda_draws_fixed");
            m.remove("lambda_draws_mixed");
        }
        units_json.push(json!({
            "season": season,
            "conference": conference,
            "n_games": sm.n_games(),
            "n_teams": sm.n_teams(),
            "base_fit": {
                "lambda_hat": base.lambda_hat,
                "sigma2_g": base.sigma2_g,
                "sigma2": base.sigma2,
            },
            "report": rv,
        }));
        results.push((*season, report));
    }
    if results.is_empty() {
        anyhow::bail!("no season could be simulated");
    }
    let summary = summarize_by_year(&results, args.lambda0)?;

    ensure_dir(&args.output_dir)?;
    write_json(
        &args.output_dir.join("simulation.json"),
        &meta,
        json!({"units": units_json, "summary": value(&summary)}),
    )?;
    write_csv(
        &args.output_dir.join("draws.csv"),
        &meta,
        &["season", "conference", "draw", "lambda_fixed", "lambda_mixed"],
        &draws,
    )
}
