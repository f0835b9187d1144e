//! Game ingestion and construction of the ±1 schedule design.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use nalgebra::{DMatrix, DVector};

use crate::error::{HfaError, Result};
use crate::linalg::ThinSvd;

/// Projection tolerance used by [`check_estimability`] when callers have no
/// reason to override it. Entries of `[1|Z]` are bounded by one in absolute
/// value, so no further scaling is applied.
pub const DEFAULT_ESTIMABILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Game {
    pub season: i32,
    pub home_team: String,
    pub away_team: String,
    pub home_score: u32,
    pub away_score: u32,
    pub neutral: bool,
}

impl Game {
    /// Home-minus-away margin.
    pub fn margin(&self) -> f64 {
        f64::from(self.home_score) - f64::from(self.away_score)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GameSet {
    pub games: Vec<Game>,
    pub label: String,
}

impl GameSet {
    pub fn new(games: Vec<Game>, label: impl Into<String>) -> Self {
        Self {
            games,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.games.len()
    }

    pub fn is_empty(&self) -> bool {
        self.games.is_empty()
    }

    /// Split into one set per season, preserving row order inside each.
    pub fn by_season(&self) -> BTreeMap<i32, GameSet> {
        let mut out: BTreeMap<i32, GameSet> = BTreeMap::new();
        for g in &self.games {
            out.entry(g.season)
                .or_insert_with(|| GameSet::new(Vec::new(), format!("{} {}", self.label, g.season).trim()))
                .games
                .push(g.clone());
        }
        out
    }

    pub fn without_neutral(&self) -> GameSet {
        GameSet::new(
            self.games.iter().filter(|g| !g.neutral).cloned().collect(),
            self.label.clone(),
        )
    }
}

const GAMES_HEADER: [&str; 7] = [
    "season",
    "date",
    "home_team",
    "away_team",
    "home_score",
    "away_score",
    "neutral",
];

fn parse_field<T: std::str::FromStr>(raw: &str, what: &str, line: u64) -> Result<T> {
    raw.trim().parse().map_err(|_| HfaError::Parse {
        line,
        message: format!("invalid {what} {raw:?}"),
    })
}

fn parse_bool(raw: &str, line: u64) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(HfaError::Parse {
            line,
            message: format!("invalid neutral flag {other:?}"),
        }),
    }
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(HfaError::Parse {
            line: 1,
            message: format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input)
}

/// Parse a games CSV with header
/// `season,date,home_team,away_team,home_score,away_score,neutral`.
pub fn parse_games<R: Read>(input: R) -> Result<GameSet> {
    let mut rdr = csv_reader(input);
    check_header(&mut rdr, &GAMES_HEADER)?;
    let mut games = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != GAMES_HEADER.len() {
            return Err(HfaError::Parse {
                line,
                message: format!("expected {} fields, found {}", GAMES_HEADER.len(), rec.len()),
            });
        }
        let home_team = rec[2].trim().to_string();
        let away_team = rec[3].trim().to_string();
        if home_team.is_empty() || away_team.is_empty() {
            return Err(HfaError::Parse {
                line,
                message: "empty team name".into(),
            });
        }
        if home_team == away_team {
            return Err(HfaError::Parse {
                line,
                message: format!("self-game: {home_team} listed as both home and away"),
            });
        }
        games.push(Game {
            season: parse_field(&rec[0], "season", line)?,
            home_team,
            away_team,
            home_score: parse_field(&rec[4], "home_score", line)?,
            away_score: parse_field(&rec[5], "away_score", line)?,
            neutral: parse_bool(&rec[6], line)?,
        });
    }
    Ok(GameSet::new(games, ""))
}

/// Conference membership keyed by `(season, team)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConferenceMap {
    entries: BTreeMap<(i32, String), String>,
}

impl ConferenceMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails if the team already belongs to a different conference that season.
    pub fn insert(&mut self, season: i32, team: &str, conference: &str) -> Result<()> {
        match self.entries.get(&(season, team.to_string())) {
            Some(existing) if existing != conference => Err(HfaError::InvalidArgument(format!(
                "{team} mapped to both {existing} and {conference} in {season}"
            ))),
            _ => {
                self.entries
                    .insert((season, team.to_string()), conference.to_string());
                Ok(())
            }
        }
    }

    pub fn get(&self, season: i32, team: &str) -> Option<&str> {
        self.entries
            .get(&(season, team.to_string()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse a conference CSV with header `season,team,conference`.
    pub fn parse<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv_reader(input);
        check_header(&mut rdr, &["season", "team", "conference"])?;
        let mut map = ConferenceMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 3 {
                return Err(HfaError::Parse {
                    line,
                    message: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            let season = parse_field(&rec[0], "season", line)?;
            map.insert(season, rec[1].trim(), rec[2].trim())
                .map_err(|e| HfaError::Parse {
                    line,
                    message: e.to_string(),
                })?;
        }
        Ok(map)
    }
}

/// Result of [`filter_intraconference`]: games grouped by conference plus
/// counts of everything that was left out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntraconferenceSplit {
    pub by_conference: BTreeMap<String, GameSet>,
    pub dropped_neutral: usize,
    pub dropped_unmapped: usize,
    pub dropped_interconference: usize,
}

impl IntraconferenceSplit {
    /// Games dropped because they are not intraconference (neutral drops excluded).
    pub fn dropped(&self) -> usize {
        self.dropped_unmapped + self.dropped_interconference
    }
}

/// Group games by conference, keeping a game only when both teams belong to
/// the same conference in that season.
pub fn filter_intraconference(
    gs: &GameSet,
    cm: &ConferenceMap,
    drop_neutral: bool,
) -> IntraconferenceSplit {
    let mut split = IntraconferenceSplit::default();
    for g in &gs.games {
        if drop_neutral && g.neutral {
            split.dropped_neutral += 1;
            continue;
        }
        match (cm.get(g.season, &g.home_team), cm.get(g.season, &g.away_team)) {
            (Some(h), Some(a)) if h == a => {
                split
                    .by_conference
                    .entry(h.to_string())
                    .or_insert_with(|| {
                        GameSet::new(Vec::new(), format!("{} {}", gs.label, h).trim())
                    })
                    .games
                    .push(g.clone());
            }
            (Some(_), Some(_)) => split.dropped_interconference += 1,
            _ => split.dropped_unmapped += 1,
        }
    }
    split
}

/// Response vector `d` and ±1 schedule matrix `Z`.
///
/// Row `i` of `Z` has `+1` in the home team's column and `−1` in the away
/// team's column.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleMatrix {
    pub d: DVector<f64>,
    pub z: DMatrix<f64>,
    pub teams: Vec<String>,
    /// Column sums `1'Z`: home games minus away games per team.
    pub net_home: Vec<i64>,
    /// `(home, away)` column indices per game.
    pub pairs: Vec<(usize, usize)>,
}

impl ScheduleMatrix {
    /// Build from team names, `(home, away)` index pairs and margins.
    pub fn from_pairs(teams: Vec<String>, pairs: Vec<(usize, usize)>, d: DVector<f64>) -> Result<Self> {
        let n_teams = teams.len();
        if pairs.is_empty() {
            return Err(HfaError::EmptyGameSet);
        }
        if d.len() != pairs.len() {
            return Err(HfaError::InvalidArgument(format!(
                "{} margins for {} games",
                d.len(),
                pairs.len()
            )));
        }
        let mut z = DMatrix::zeros(pairs.len(), n_teams);
        let mut net_home = vec![0_i64; n_teams];
        for (i, &(h, a)) in pairs.iter().enumerate() {
            if h >= n_teams || a >= n_teams || h == a {
                return Err(HfaError::InvalidArgument(format!(
                    "invalid pairing ({h}, {a}) in game {i}"
                )));
            }
            z[(i, h)] = 1.0;
            z[(i, a)] = -1.0;
            net_home[h] += 1;
            net_home[a] -= 1;
        }
        Ok(Self {
            d,
            z,
            teams,
            net_home,
            pairs,
        })
    }

    /// Same schedule with a different response vector.
    pub fn with_response(&self, d: DVector<f64>) -> Self {
        assert_eq!(d.len(), self.n_games(), "response length mismatch");
        Self {
            d,
            ..self.clone()
        }
    }

    pub fn n_games(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_teams(&self) -> usize {
        self.z.ncols()
    }

    /// `1'Z = 0`: every team has as many home as away games.
    pub fn is_balanced(&self) -> bool {
        self.net_home.iter().all(|&v| v == 0)
    }

    pub fn net_home_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_teams(), self.net_home.iter().map(|&v| v as f64))
    }

    /// `W = [1 | Z]`.
    pub fn design_with_intercept(&self) -> DMatrix<f64> {
        let n = self.n_games();
        let mut w = DMatrix::zeros(n, self.n_teams() + 1);
        w.column_mut(0).fill(1.0);
        w.columns_mut(1, self.n_teams()).copy_from(&self.z);
        w
    }

    pub fn mean_margin(&self) -> f64 {
        self.d.mean()
    }
}

/// Encode a game set as `(d, Z)` with teams in lexicographic order.
pub fn build_design(gs: &GameSet) -> Result<ScheduleMatrix> {
    if gs.is_empty() {
        return Err(HfaError::EmptyGameSet);
    }
    let names: BTreeSet<&str> = gs
        .games
        .iter()
        .flat_map(|g| [g.home_team.as_str(), g.away_team.as_str()])
        .collect();
    let teams: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let pairs = gs
        .games
        .iter()
        .map(|g| (index[g.home_team.as_str()], index[g.away_team.as_str()]))
        .collect();
    let d = DVector::from_iterator(gs.len(), gs.games.iter().map(Game::margin));
    ScheduleMatrix::from_pairs(teams, pairs, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimabilityReport {
    pub lambda_estimable: bool,
    pub rank_w: usize,
}

/// λ is estimable iff `e₁'` lies in the row space of `W = [1|Z]`, checked
/// as `‖e₁'W⁺W − e₁'‖∞ < tol`.
pub fn check_estimability(sm: &ScheduleMatrix, tol: f64) -> Result<EstimabilityReport> {
    let svd = ThinSvd::new(&sm.design_with_intercept())?;
    let mut e1 = DVector::zeros(sm.n_teams() + 1);
    e1[0] = 1.0;
    Ok(EstimabilityReport {
        lambda_estimable: svd.row_space_defect(&e1) < tol,
        rank_w: svd.rank(),
    })
}
