use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfa")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = hfa(args);
    assert!(
        out.status.success(),
        "hfa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, n_conferences: usize, seasons: usize, seed: u64) -> (PathBuf, PathBuf) {
    let out = dir.join("league");
    ok(&[
        "generate",
        "--n-conferences",
        &n_conferences.to_string(),
        "--seasons",
        &seasons.to_string(),
        "--seed",
        &seed.to_string(),
        "--output-dir",
        p(&out),
    ]);
    (out.join("games.csv"), out.join("conferences.csv"))
}

/// Data rows of a CSV written by the tool (metadata line and header dropped).
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# metadata: {"));
    lines.skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn phase1_row_counts() {
    let tmp = TempDir::new().unwrap();
    let (games, confs) = generate(tmp.path(), 2, 2, 11);

    let per = tmp.path().join("per");
    ok(&["phase1", "--games", p(&games), "--conferences", p(&confs), "--output-dir", p(&per)]);
    let r = rows(&per.join("hfa_series.csv"));
    assert_eq!(r.iter().filter(|row| row[4] == "fixed").count(), 4);
    assert_eq!(r.iter().filter(|row| row[4] == "mixed").count(), 4);

    let full = tmp.path().join("full");
    ok(&["phase1", "--games", p(&games), "--full-season", "--output-dir", p(&full)]);
    let r = rows(&full.join("hfa_series.csv"));
    assert_eq!(r.len(), 4);
    assert!(r.iter().all(|row| row[1] == "ALL"));

    let fits = json(&full.join("phase1_fits.json"));
    assert_eq!(fits["metadata"]["command"], "phase1");
    assert_eq!(fits["metadata"]["inputs"][0]["file"], "games.csv");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let (games, _) = generate(tmp.path(), 2, 1, 3);
    let out = hfa(&["phase1", "--games", p(&games), "--per-conference", "--output-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = hfa(&["simulate", "--teams", "12", "--reps", "0", "--seed", "1", "--output-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = hfa(&["phase1", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn random_coefficients_need_more_than_two_conferences() {
    let tmp = TempDir::new().unwrap();
    let series = tmp.path().join("series.csv");
    let mut text = String::from("year,conference,lambda_hat,se\n");
    for y in 2010..2020 {
        text += &format!("{y},A,{},1\n{y},B,{},1\n", 3.0 + 0.01 * f64::from(y - 2010), 2.5);
    }
    fs::write(&series, text).unwrap();
    let out = hfa(&["phase2", "--series", p(&series), "--design", "random-coef", "--output-dir", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixed-trend"));

    ok(&["phase2", "--series", p(&series), "--design", "fixed-trend", "--output-dir", p(tmp.path())]);
    let report = json(&tmp.path().join("phase2.json"));
    assert_eq!(report["design"], "fixed_trend");
    assert_eq!(report["lrt"].as_array().unwrap().len(), 2);
}

#[test]
fn phase1_output_feeds_phase2() {
    let tmp = TempDir::new().unwrap();
    let (games, confs) = generate(tmp.path(), 3, 4, 21);
    let p1 = tmp.path().join("p1");
    ok(&["phase1", "--games", p(&games), "--conferences", p(&confs), "--output-dir", p(&p1)]);
    let p2 = tmp.path().join("p2");
    let series = p1.join("hfa_series.csv");
    ok(&[
        "phase2", "--series", p(&series), "--design", "random-coef", "--boundary-sims", "100", "--seed", "5",
        "--output-dir", p(&p2),
    ]);
    let report = json(&p2.join("phase2.json"));
    assert_eq!(report["fit"]["n_conferences"], 3);
    assert_eq!(report["fit"]["n_obs"], 12);
    let bt = &report["boundary_test"];
    let pv = bt["p"].as_f64().unwrap();
    assert!(pv > 0.0 && pv <= 1.0);
    assert_eq!(rows(&p2.join("fitted_lines.csv")).len(), 12);
}

#[test]
fn perfect_line_series() {
    let tmp = TempDir::new().unwrap();
    let series = tmp.path().join("series.csv");
    let mut text = String::from("year,conference,lambda_hat,se\n");
    for conf in ["A", "B", "C", "D"] {
        for y in 2000..2018 {
            text += &format!("{y},{conf},{},0.8\n", 2.9 - 0.07 * f64::from(y - 2017));
        }
    }
    fs::write(&series, text).unwrap();
    ok(&["phase2", "--series", p(&series), "--design", "random-coef", "--boundary-sims", "0", "--output-dir", p(tmp.path())]);
    let fit = &json(&tmp.path().join("phase2.json"))["fit"];
    assert!((fit["alpha0"].as_f64().unwrap() - 2.9).abs() < 1e-9);
    assert!((fit["alpha1"].as_f64().unwrap() + 0.07).abs() < 1e-9);
}

#[test]
fn balanced_schedule_makes_diagnostic_inapplicable() {
    let tmp = TempDir::new().unwrap();
    let games = tmp.path().join("games.csv");
    let mut text = String::from("season,date,home_team,away_team,home_score,away_score,neutral\n");
    let teams = ["Ash", "Birch", "Cedar", "Elm", "Fir"];
    let mut k = 0;
    for h in teams {
        for a in teams {
            if h != a {
                k += 1;
                text += &format!("2020,2020-01-{:02},{h},{a},{},{},0\n", k % 28 + 1, 70 + (k * 7) % 13, 65 + (k * 5) % 11);
            }
        }
    }
    fs::write(&games, text).unwrap();
    ok(&["diagnose", "--games", p(&games), "--output-dir", p(tmp.path())]);
    let r = rows(&tmp.path().join("diagnostics.csv"));
    let season_rows: Vec<_> = r.iter().filter(|row| row[0] != "median").collect();
    assert_eq!(season_rows.len(), 1);
    assert_eq!(season_rows[0][7], "false");
}

#[test]
fn outputs_do_not_depend_on_threads() {
    let tmp = TempDir::new().unwrap();
    let (games, confs) = generate(tmp.path(), 2, 2, 8);
    let runs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let dir = tmp.path().join(format!("sim{t}"));
            ok(&[
                "--threads", t, "simulate", "--games", p(&games), "--conferences", p(&confs), "--mode", "shuffled",
                "--reps", "60", "--seed", "17", "--output-dir", p(&dir),
            ]);
            let mut bytes = fs::read(dir.join("simulation.json")).unwrap();
            bytes.extend(fs::read(dir.join("draws.csv")).unwrap());
            bytes
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn missing_seed_is_reported() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&["generate", "--n-conferences", "1", "--seasons", "1", "--output-dir", p(tmp.path())]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let seed: u64 = stderr
        .lines()
        .find_map(|l| l.strip_prefix("seed: "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    let first = fs::read(tmp.path().join("games.csv")).unwrap();
    let again = tmp.path().join("again");
    ok(&["generate", "--n-conferences", "1", "--seasons", "1", "--seed", &seed.to_string(), "--output-dir", p(&again)]);
    assert_eq!(first, fs::read(again.join("games.csv")).unwrap());
}
