use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::Serialize;

use crate::error::{HfaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HfaRow {
    pub year: i32,
    pub conference: String,
    pub lambda_hat: f64,
    /// Phase-I standard error `w`.
    pub se: f64,
}

/// Per-year, per-conference HFA estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HfaSeries {
    rows: Vec<HfaRow>,
}

/// Parsed series plus the rows dropped on the way in.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSeries {
    pub series: HfaSeries,
    pub warnings: Vec<String>,
}

impl HfaSeries {
    /// Validates that every `se` is positive and finite and that
    /// `(year, conference)` pairs are unique.
    pub fn new(rows: Vec<HfaRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !(r.se > 0.0 && r.se.is_finite()) {
                return Err(HfaError::InvalidArgument(format!(
                    "non-positive standard error for {} {}",
                    r.year, r.conference
                )));
            }
            if !r.lambda_hat.is_finite() {
                return Err(HfaError::InvalidArgument(format!(
                    "non-finite estimate for {} {}",
                    r.year, r.conference
                )));
            }
            if !seen.insert((r.year, r.conference.clone())) {
                return Err(HfaError::InvalidArgument(format!(
                    "duplicate row for {} {}",
                    r.year, r.conference
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[HfaRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn conferences(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.conference.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn years(&self) -> Vec<i32> {
        self.rows
            .iter()
            .map(|r| r.year)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Rows grouped by conference, in lexicographic conference order.
    pub fn by_conference(&self) -> BTreeMap<&str, Vec<&HfaRow>> {
        let mut out: BTreeMap<&str, Vec<&HfaRow>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.conference.as_str()).or_default().push(r);
        }
        out
    }

    /// Same rows with every standard error multiplied by `c`.
    pub fn with_scaled_se(&self, c: f64) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| HfaRow { se: r.se * c, ..r.clone() })
                .collect(),
        }
    }

    /// Same design with replacement estimates, in row order.
    pub fn with_estimates(&self, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.rows.len());
        Self {
            rows: self
                .rows
                .iter()
                .zip(values)
                .map(|(r, &v)| HfaRow { lambda_hat: v, ..r.clone() })
                .collect(),
        }
    }

    /// Parse a CSV with columns `year,conference,lambda_hat,se` and an
    /// optional `model` column. When `model` is present, only rows whose
    /// value equals `model_filter` are kept. Rows with a missing, zero or
    /// negative standard error are dropped with a warning.
    pub fn parse<R: Read>(input: R, model_filter: &str) -> Result<ParsedSeries> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (Some(iy), Some(ic), Some(il), Some(is)) =
            (col("year"), col("conference"), col("lambda_hat"), col("se"))
        else {
            return Err(HfaError::Parse {
                line: 1,
                message: format!("expected columns year,conference,lambda_hat,se; found {}", header.join(",")),
            });
        };
        let im = col("model");
        let mut rows = Vec::new();
        let mut warnings = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| rec.get(i).map(str::trim).ok_or(HfaError::Parse {
                line,
                message: format!("missing field {}", header[i]),
            });
            if let Some(im) = im {
                if field(im)? != model_filter {
                    continue;
                }
            }
            let year: i32 = field(iy)?.parse().map_err(|_| HfaError::Parse {
                line,
                message: "invalid year".into(),
            })?;
            let conference = field(ic)?.to_string();
            let lambda_hat: f64 = field(il)?.parse().map_err(|_| HfaError::Parse {
                line,
                message: "invalid lambda_hat".into(),
            })?;
            let se = field(is)?.parse::<f64>().ok().filter(|s| *s > 0.0 && s.is_finite());
            let Some(se) = se else {
                warnings.push(format!(
                    "line {line}: dropping {year} {conference}: standard error missing or not positive"
                ));
                continue;
            };
            rows.push(HfaRow {
                year,
                conference,
                lambda_hat,
                se,
            });
        }
        Ok(ParsedSeries {
            series: HfaSeries::new(rows)?,
            warnings,
        })
    }
}
