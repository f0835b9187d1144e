use std::path::PathBuf;

use anyhow::Result;
use hfa_core::simulation::{generate_league, stream_rng, LeagueSpec};
use rand::Rng;

use super::{ensure_dir, resolve_seed};
use crate::output::{write_csv, Metadata};
use crate::usage;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Number of conferences; each is an independent league.
    #[arg(long, default_value_t = 2)]
    pub n_conferences: usize,
    /// Teams per conference.
    #[arg(long, default_value_t = 10)]
    pub teams: usize,
    #[arg(long, default_value_t = 18)]
    pub games_per_team: usize,
    #[arg(long, default_value_t = 5.0)]
    pub sigma_g: f64,
    #[arg(long, default_value_t = 11.0)]
    pub sigma: f64,
    /// Probability that the stronger team of a pairing hosts.
    #[arg(long, default_value_t = 0.5)]
    pub home_bias: f64,
    /// HFA in the first season.
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Change in HFA per season.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lambda_trend: f64,
    #[arg(long, default_value_t = 2)]
    pub seasons: usize,
    #[arg(long, default_value_t = 2016)]
    pub first_season: i32,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    if args.n_conferences == 0 || args.seasons == 0 {
        return Err(usage("--n-conferences and --seasons must be at least 1"));
    }
    let seed = resolve_seed(args.seed);
    let spec = |season_idx: usize, conf_idx: usize| LeagueSpec {
        n_teams: args.teams,
        games_per_team: args.games_per_team,
        sigma_g: args.sigma_g,
        sigma: args.sigma,
        home_bias: args.home_bias,
        seed: stream_rng(seed, (season_idx * args.n_conferences + conf_idx) as u64).random(),
    };
    spec(0, 0).validate().map_err(|e| usage(e.to_string()))?;
    let mut meta = Metadata::new("generate");
    meta.seed = Some(seed);
    meta.parameter("n_conferences", args.n_conferences)
        .parameter("teams", args.teams)
        .parameter("games_per_team", args.games_per_team)
        .parameter("sigma_g", args.sigma_g)
        .parameter("sigma", args.sigma)
        .parameter("home_bias", args.home_bias)
        .parameter("lambda", args.lambda)
        .parameter("lambda_trend", args.lambda_trend)
        .parameter("seasons", args.seasons)
        .parameter("first_season", args.first_season);

    let conf_width = args.n_conferences.to_string().len();
    let mut games = Vec::new();
    let mut map = Vec::new();
    for s in 0..args.seasons {
        let season = args.first_season + s as i32;
        let lambda = args.lambda + args.lambda_trend * s as f64;
        for c in 0..args.n_conferences {
            let conference = format!("C{:0w$}", c + 1, w = conf_width);
            let ls = spec(s, c);
            let league = generate_league(&ls)?;
            let mut rng = stream_rng(ls.seed, 1);
            let margins = league.margins(lambda, &mut rng);
            let name = |t: &str| format!("{conference}-{t}");
            for t in &league.schedule.teams {
                map.push(vec![season.to_string(), name(t), conference.clone()]);
            }
            for (i, g) in league.games(season, &margins).games.iter().enumerate() {
                games.push(vec![
                    season.to_string(),
                    format!("{season}-G{i:04}"),
                    name(&g.home_team),
                    name(&g.away_team),
                    g.home_score.to_string(),
                    g.away_score.to_string(),
                    "0".to_string(),
                ]);
            }
        }
    }
    ensure_dir(&args.output_dir)?;
    write_csv(
        &args.output_dir.join("games.csv"),
        &meta,
        &["season", "date", "home_team", "away_team", "home_score", "away_score", "neutral"],
        &games,
    )?;
    write_csv(
        &args.output_dir.join("conferences.csv"),
        &meta,
        &["season", "team", "conference"],
        &map,
    )
}
