use std::path::Path;
use std::process::{Command, Output};

use tcfmr::calibration::{synthetic_quotes, ModelState};
use tcfmr::impliedvol::bs_price;
use tcfmr::presets::Preset;

fn tcfmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcfmr")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
        .parse()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const FIG1: &str = "[model]\nsigma = 0.34\nv2_eps = 0.03\nv3_eps = -0.03\n[clock]\nkind = identity\n[option]\nstrike = 1\nmaturity = 1\n";

#[test]
fn fig1_atm_price_is_black_scholes_plus_correction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fig1.cfg", FIG1);
    let o = tcfmr(&["price", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let bs = bs_price(1.0, 1.0, 0.0, 1.0, 0.34);
    assert!((field(&out, "price0") - bs).abs() < 1e-9);
    let corr = field(&out, "correction");
    assert!(corr.abs() > 1e-4);
    let total = field(&out, "price");
    assert!(total > 0.0 && total < 1.0);

    // same output from the preset alone
    let p = tcfmr(&["price", "--preset", "fig1"]);
    assert_eq!(stdout(&p), out);
}

#[test]
fn identical_config_gives_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "a.cfg",
        "[model]\nsigma = 0.34\nv2_eps = 0.03\nv3_eps = -0.03\n[clock]\nkind = cir\nkappa = 1\ntheta = 1\nvol2 = 2\nz0 = 2\n\
         [option]\nlog_strike = 0.1\nmaturity = 0.5\n[grid]\nlmmr = -0.5, 0.5, 11\nmaturities = 0.25, 0.5\n",
    );
    let (a, b) = (tcfmr(&["price", "--config", &cfg]), tcfmr(&["price", "--config", &cfg]));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);

    let (p, q) = (dir.path().join("p.csv"), dir.path().join("q.csv"));
    assert!(tcfmr(&["surface", "--config", &cfg, "--out", p.to_str().unwrap()]).status.success());
    assert!(tcfmr(&["surface", "--config", &cfg, "--out", q.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
}

#[test]
fn missing_levy_parameter_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.cfg",
        "[model]\nsigma = 0.34\nv2_eps = 0\nv3_eps = 0\n[clock]\nkind = levy\ngamma = 0.25\nalpha = 0.75\n[option]\nstrike = 1\nmaturity = 1\n",
    );
    let o = tcfmr(&["price", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("eta") && err.contains("line 6"), "{err}");
}

#[test]
fn driftless_clock_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "zero.cfg",
        "[model]\nsigma = 0.34\nv2_eps = 0.03\nv3_eps = -0.03\n[clock]\nkind = levy\ngamma = 0\nalpha = 0.75\neta = 0.1\n[option]\nstrike = 1\nmaturity = 1\n",
    );
    let o = tcfmr(&["price", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn surface_csv_schema_and_fig2_smile() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig2.csv");
    let o = tcfmr(&["surface", "--preset", "fig2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>().join(","),
        "maturity,log_strike,lmmr,price0,correction,price,implied_vol,flag"
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 41 * 4);
    let short: Vec<(f64, Option<f64>)> = rows
        .iter()
        .filter(|r| &r[0] == "0.125")
        .map(|r| (r[2].parse().unwrap(), r[6].parse().ok()))
        .collect();
    for r in &rows {
        // flagged cells carry no vol, priced cells always do
        assert_eq!(r[6].is_empty(), &r[7] != "ok");
    }
    let vols: Vec<(f64, f64)> = short.iter().filter_map(|&(l, v)| Some((l, v?))).collect();
    let min = vols.iter().cloned().fold(f64::MAX, |m, (_, v)| m.min(v));
    let right = vols.iter().max_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1;
    assert!(right > min + 0.1, "no right-edge rise: {right} vs {min}");
}

#[test]
fn empty_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.cfg", &format!("{FIG1}[grid]\nlog_strikes =\nmaturities = 1\n"));
    let o = tcfmr(&["surface", "--config", &cfg, "--out", dir.path().join("x.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 11"), "{}", stderr(&o));
}

#[test]
fn verify_default_seed_passes() {
    let o = tcfmr(&["verify"]);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 10);
    assert!(out.contains("residual"));
}

#[test]
fn corrupted_tolerance_names_the_failing_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "v.cfg", "[verify]\nn_paths = 2000\nlaplace_derivative = 1e-30\n");
    let o = tcfmr(&["verify", "--config", &cfg, "--seed", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("FAIL") && l.contains("laplace_derivative")), "{out}");
    assert!(out.contains("failed: laplace_derivative"));
}

fn quotes_csv(dir: &Path, quotes: &[(f64, f64, f64, f64)]) -> String {
    let mut s = String::from("maturity,strike,implied_vol,weight\n");
    for q in quotes {
        s += &format!("{},{},{},{}\n", q.0, q.1, q.2, q.3);
    }
    write(dir, "quotes.csv", &s)
}

fn fig2_quotes() -> Vec<(f64, f64, f64, f64)> {
    let p = Preset::Fig2;
    let truth = ModelState { params: p.params(), clock: p.clock() };
    synthetic_quotes(&truth, 0.0, 0.0, &[0.25, 0.5, 1.0], &[0.85, 0.95, 1.0, 1.05])
        .unwrap()
        .iter()
        .map(|q| (q.t, q.strike, q.implied_vol, q.weight))
        .collect()
}

const CALIB: &str = "[model]\nsigma = 0.3\nv2_eps = 0\nv3_eps = 0\n[calibration]\nfree = sigma, v2_eps, v3_eps\n\
                     sigma = 0.1, 0.6\nv2_eps = -0.1, 0.1\nv3_eps = -0.1, 0.1\n";

#[test]
fn calibration_recovers_fig2_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let quotes = quotes_csv(dir.path(), &fig2_quotes());
    let cfg = write(dir.path(), "c.cfg", CALIB);
    let report = dir.path().join("fit.csv");
    let o = tcfmr(&["calibrate", "--preset", "fig2", "--config", &cfg, "--quotes", &quotes, "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!((field(&out, "sigma") - 0.34).abs() < 1e-3);
    assert!((field(&out, "v2_eps") - 0.03).abs() < 1e-3);
    assert!((field(&out, "v3_eps") + 0.03).abs() < 1e-3);
    assert!(field(&out, "rmse") < 1e-6);
    assert!(out.contains("iterations = "));
    let n = csv::Reader::from_path(&report).unwrap().records().count();
    assert_eq!(n, 12);
}

#[test]
fn heavily_weighted_quote_is_interpolated() {
    let dir = tempfile::tempdir().unwrap();
    // Perturb the quotes so that no parameter set fits them exactly.
    let mut quotes = fig2_quotes();
    for (i, q) in quotes.iter_mut().enumerate() {
        q.2 += 0.002 * if i % 2 == 0 { 1.0 } else { -1.0 };
    }
    quotes[5].3 = 1e6;
    let path = quotes_csv(dir.path(), &quotes);
    let cfg = write(dir.path(), "c.cfg", CALIB);
    let report = dir.path().join("fit.csv");
    let o = tcfmr(&["calibrate", "--preset", "fig2", "--config", &cfg, "--quotes", &path, "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(&report).unwrap().records().map(Result::unwrap).collect();
    let residual = |i: usize| rows[i][5].parse::<f64>().unwrap().abs();
    assert!(residual(5) < 1e-6, "weighted quote residual {}", residual(5));
    assert!(residual(0) > 1e-4);
}

#[test]
fn too_few_quotes_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let quotes = quotes_csv(dir.path(), &fig2_quotes()[..2]);
    let cfg = write(dir.path(), "c.cfg", CALIB);
    let o = tcfmr(&["calibrate", "--preset", "fig2", "--config", &cfg, "--quotes", &quotes]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
