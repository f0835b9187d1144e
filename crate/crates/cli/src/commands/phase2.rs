use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use hfa_core::phase2::{
    boundary_test_g, fit_fixed_trend, fit_random_coefficient, lrt, HfaSeries, RandomCoefOptions, TrendModel,
    TrendOptions,
};
use serde_json::json;

use super::{ensure_dir, resolve_seed};
use crate::input::read_input;
use crate::output::{csv_num, value, write_csv, write_json, Metadata};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Design {
    /// Population line with correlated conference-level random intercepts and slopes.
    RandomCoef,
    /// Fixed intercepts and slopes for exactly two conferences.
    FixedTrend,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// HFA series CSV: year,conference,lambda_hat,se[,model].
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long, value_enum)]
    pub design: Design,
    /// Simulations for the G = 0 test (random-coef only); 0 skips the test.
    #[arg(long, default_value_t = 1000)]
    pub boundary_sims: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows to use when the series has a model column.
    #[arg(long, default_value = "fixed")]
    pub model_filter: String,
    /// Conference coded as A in the fixed-trend models (default: first alphabetically).
    #[arg(long)]
    pub reference_conference: Option<String>,
    /// Year coded as t = 0.
    #[arg(long, default_value_t = hfa_core::phase2::DEFAULT_TIME_ORIGIN)]
    pub time_origin: i32,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    if args.design == Design::RandomCoef && (1..100).contains(&args.boundary_sims) {
        return Err(usage("--boundary-sims must be 0 or at least 100"));
    }
    let mut meta = Metadata::new("phase2");
    let bytes = read_input(&args.series, "series", &mut meta)?;
    let parsed = HfaSeries::parse(bytes.as_slice(), &args.model_filter)
        .with_context(|| format!("parsing {}", args.series.display()))?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    let series = parsed.series;
    let design = match args.design {
        Design::RandomCoef => "random_coef",
        Design::FixedTrend => "fixed_trend",
    };
    meta.parameter("design", design)
        .parameter("model_filter", &args.model_filter)
        .parameter("time_origin", args.time_origin);
    ensure_dir(&args.output_dir)?;
    match args.design {
        Design::RandomCoef => random_coef(&args, &series, meta),
        Design::FixedTrend => fixed_trend(&args, &series, meta),
    }
}

fn random_coef(args: &Args, series: &HfaSeries, mut meta: Metadata) -> Result<()> {
    let opts = RandomCoefOptions {
        time_origin: args.time_origin,
        ..RandomCoefOptions::default()
    };
    meta.tolerance("bfgs_max_iter", opts.bfgs.max_iter)
        .tolerance("bfgs_grad_tol", opts.bfgs.grad_tol)
        .tolerance("bfgs_f_tol", opts.bfgs.f_tol)
        .parameter("boundary_sims", args.boundary_sims);
    let fit = fit_random_coefficient(series, &opts)?;
    if !fit.converged {
        eprintln!("warning: optimizer did not converge; estimates are flagged");
    }
    let boundary = if args.boundary_sims > 0 {
        let seed = resolve_seed(args.seed);
        meta.seed = Some(seed);
        Some(boundary_test_g(series, args.boundary_sims, seed, &opts)?)
    } else {
        None
    };
    let table = json!({
        "alpha0": {"estimate": fit.alpha0, "ci95": fit.ci95_alpha0, "p": fit.p_alpha0},
        "alpha1": {"estimate": fit.alpha1, "ci95": fit.ci95_alpha1, "p": fit.p_alpha1},
        "sigma2_1": fit.sigma2_1,
        "sigma12": fit.sigma12,
        "sigma2_2": fit.sigma2_2,
        "p_G_zero": boundary.as_ref().map(|b| b.p),
        "sigma2_lambda": fit.sigma2_lambda,
        "mean_w2_at_origin": fit.mean_w2_at_origin,
    });
    write_json(
        &args.output_dir.join("phase2.json"),
        &meta,
        json!({
            "design": "random_coef",
            "table": table,
            "fit": value(&fit),
            "boundary_test": boundary.as_ref().map(value),
        }),
    )?;
    let rows: Vec<Vec<String>> = series
        .rows()
        .iter()
        .map(|r| {
            vec![
                r.conference.clone(),
                r.year.to_string(),
                csv_num(r.lambda_hat),
                csv_num(r.se),
                csv_num(fit.fitted(&r.conference, r.year).unwrap_or(f64::NAN)),
                csv_num(fit.population(r.year)),
            ]
        })
        .collect();
    write_csv(
        &args.output_dir.join("fitted_lines.csv"),
        &meta,
        &["conference", "year", "lambda_hat", "se", "fitted", "population"],
        &rows,
    )
}

fn fixed_trend(args: &Args, series: &HfaSeries, mut meta: Metadata) -> Result<()> {
    let n_conf = series.conferences().len();
    if n_conf != 2 {
        bail!("fixed-trend design needs exactly 2 conferences, found {n_conf}; use --design random-coef for 3 or more");
    }
    let opts = TrendOptions {
        time_origin: Some(args.time_origin),
        reference_conference: args.reference_conference.clone(),
    };
    let full = fit_fixed_trend(series, TrendModel::Full, &opts)?;
    let common = fit_fixed_trend(series, TrendModel::CommonTrend, &opts)?;
    let flat = fit_fixed_trend(series, TrendModel::NoTrend, &opts)?;
    let same_lines = lrt(&full, &common)?;
    let no_slopes = lrt(&full, &flat)?;
    meta.parameter("reference_conference", &full.reference_conference);
    write_json(
        &args.output_dir.join("phase2.json"),
        &meta,
        json!({
            "design": "fixed_trend",
            "reference_conference": full.reference_conference,
            "other_conference": full.other_conference,
            "models": {
                "full": value(&full),
                "common_trend": value(&common),
                "no_trend": value(&flat),
            },
            "lrt": [
                {"hypothesis": "beta_0B = beta_1B = 0", "reduced": "common_trend", "stat": same_lines.stat, "dof": same_lines.dof, "p": same_lines.p},
                {"hypothesis": "beta_1A = beta_1B = 0", "reduced": "no_trend", "stat": no_slopes.stat, "dof": no_slopes.dof, "p": no_slopes.p},
            ],
        }),
    )?;
    let rows: Vec<Vec<String>> = series
        .rows()
        .iter()
        .map(|r| {
            vec![
                r.conference.clone(),
                r.year.to_string(),
                csv_num(r.lambda_hat),
                csv_num(r.se),
                csv_num(full.fitted(&r.conference, r.year)),
            ]
        })
        .collect();
    write_csv(
        &args.output_dir.join("fitted_lines.csv"),
        &meta,
        &["conference", "year", "lambda_hat", "se", "fitted"],
        &rows,
    )
}
