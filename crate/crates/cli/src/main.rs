mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tcfmr::calibration::{calibrate, CalibrationProblem, ModelState, Quote};
use tcfmr::impliedvol::{default_lmmr_grid, default_maturities, implied_vol, surface, SurfaceRow, StrikeAxis};
use tcfmr::presets::Preset;
use tcfmr::pricing::{price, price_with_contour, Payoff, PricingRequest};
use tcfmr::verify::{run_checks, VerifyConfig};

use config::{ConfigError, GridAxis, OptionKind, RunConfig};

pub const SURFACE_HEADER: [&str; 8] = ["maturity", "log_strike", "lmmr", "price0", "correction", "price", "implied_vol", "flag"];

#[derive(Parser)]
#[command(name = "tcfmr", version, about = "Asymptotic option prices and implied-vol surfaces under time-changed fast mean-reverting volatility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price a single option.
    Price {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in parameter set: fig1, fig2, fig3 or fig4.
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
    },
    /// Price a grid of calls and write the implied-vol surface as CSV.
    Surface {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        /// Output CSV; overrides `[output] path`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle checks and print a report.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit model parameters to quoted implied vols.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        /// CSV with columns maturity, strike, implied_vol and optionally weight.
        #[arg(long)]
        quotes: PathBuf,
        /// Per-quote residual report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::from_name(s).ok_or_else(|| format!("unknown preset `{s}`; expected fig1, fig2, fig3 or fig4"))
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<tcfmr::Error> for CliError {
    fn from(e: tcfmr::Error) -> Self {
        use tcfmr::Error::*;
        match e {
            InvalidParameter { .. } | ContourViolation { .. } | DomainViolation { .. } | StepTooCoarse(_) | Unsupported(_) => {
                CliError::Validation(e.to_string())
            }
            PoleHit { .. } | NonConvergent(_) | OutOfBand { .. } | QuadratureFailure(_) => CliError::Numeric(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

type CliResult<T> = Result<T, CliError>;

/// `x` rounded to `digits` significant digits, printed in the shortest form
/// that reads back to the rounded value. Non-finite values become empty.
fn num(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return String::new();
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x);
    if rounded == 0.0 {
        return "0".into();
    }
    let plain = format!("{rounded}");
    let sci = format!("{rounded:e}");
    if plain.len() <= sci.len() + 2 {
        plain
    } else {
        sci
    }
}

fn surface_record(row: &SurfaceRow, digits: usize) -> Vec<String> {
    vec![
        num(row.t, digits),
        num(row.k, digits),
        num(row.lmmr, digits),
        num(row.price0, digits),
        num(row.correction, digits),
        num(row.price, digits),
        row.implied_vol.map(|v| num(v, digits)).unwrap_or_default(),
        row.flag.as_str().to_string(),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn cmd_price(cfg: &RunConfig, preset: Option<Preset>, out: &mut impl Write) -> CliResult<()> {
    let option = match (&cfg.option, preset) {
        (Some(o), _) => o.clone(),
        // A preset alone prices the at-the-money one-year call.
        (None, Some(_)) => config::OptionSpec { kind: OptionKind::Call, log_strike: cfg.x, maturity: 1.0 },
        (None, None) => return Err(CliError::Validation("config has no [option] block".into())),
    };
    let payoff = match option.kind {
        OptionKind::Call => Payoff::Call,
        OptionKind::Put => Payoff::Put,
    };
    let req = PricingRequest::call(cfg.x, option.log_strike, cfg.r, option.maturity, cfg.params, cfg.clock.clone()).with_payoff(payoff);
    let res = match cfg.numerics.contour {
        Some(c) => price_with_contour(&req, &c)?,
        None => price(&req)?,
    };
    // Implied vol of the call with the same strike.
    let call_price = match option.kind {
        OptionKind::Call => res.total,
        OptionKind::Put => res.total + cfg.x.exp() - (option.log_strike - cfg.r * option.maturity).exp(),
    };
    let vol = implied_vol(call_price, cfg.x.exp(), option.log_strike.exp(), cfg.r, option.maturity);
    let d = cfg.output.precision;
    let lines = [
        ("type", if option.kind == OptionKind::Call { "call".into() } else { "put".into() }),
        ("maturity", num(option.maturity, d)),
        ("log_strike", num(option.log_strike, d)),
        ("price0", num(res.p0, d)),
        ("correction", num(res.correction, d)),
        ("price", num(res.total, d)),
        ("implied_vol", vol.as_ref().map(|v| num(*v, d)).unwrap_or_else(|e| format!("none ({e})"))),
        ("imag_residual", num(res.imag_residual, d)),
        ("error_estimate", num(res.error_estimate, d)),
        ("omega_i", num(res.contour_used.omega_i, d)),
        ("evaluations", res.n_evals.to_string()),
    ];
    for (k, v) in lines {
        writeln!(out, "{k} = {v}").map_err(|e| CliError::Validation(e.to_string()))?;
    }
    if let Some(path) = &cfg.output.path {
        let (flag, iv) = match vol {
            Ok(v) => ("ok", num(v, d)),
            Err(tcfmr::Error::OutOfBand { .. }) => ("out_of_band", String::new()),
            Err(_) => ("numeric_failure", String::new()),
        };
        let row = vec![
            num(option.maturity, d),
            num(option.log_strike, d),
            num((option.log_strike - cfg.x) / option.maturity, d),
            num(res.p0, d),
            num(res.correction, d),
            num(res.total, d),
            iv,
            flag.into(),
        ];
        write_csv(Path::new(path), &SURFACE_HEADER, [row])?;
    }
    Ok(())
}

fn cmd_surface(cfg: &RunConfig, preset: Option<Preset>, out_path: Option<PathBuf>, out: &mut impl Write) -> CliResult<()> {
    let (axis, maturities) = match (&cfg.grid, preset) {
        (Some(g), _) => {
            let axis = match &g.axis {
                GridAxis::Lmmr(v) => StrikeAxis::Lmmr(v.clone()),
                GridAxis::LogStrike(v) => StrikeAxis::LogStrike(v.clone()),
            };
            (axis, g.maturities.clone())
        }
        (None, Some(_)) => (StrikeAxis::Lmmr(default_lmmr_grid()), default_maturities()),
        (None, None) => return Err(CliError::Validation("config has no [grid] block".into())),
    };
    let path = out_path
        .or_else(|| cfg.output.path.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Validation("no output path: pass --out or set [output] path".into()))?;
    let template = PricingRequest::call(cfg.x, cfg.x, cfg.r, 1.0, cfg.params, cfg.clock.clone());
    let table = surface(&template, &axis, &maturities)?;
    let d = cfg.output.precision;
    write_csv(&path, &SURFACE_HEADER, table.rows.iter().map(|r| surface_record(r, d)))?;
    writeln!(out, "wrote {} rows to {} ({} flagged)", table.rows.len(), path.display(), table.failures())
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(())
}

fn cmd_verify(cfg: Option<&RunConfig>, seed: Option<u64>, out: &mut impl Write) -> CliResult<bool> {
    let mut vc = VerifyConfig::default();
    if let Some(c) = cfg {
        vc.seed = c.verify.seed.unwrap_or(c.numerics.seed);
        vc.n_paths = c.verify.n_paths.unwrap_or(c.numerics.n_paths);
        vc.tolerances = c.verify.tolerances.clone();
    }
    if let Some(s) = seed {
        vc.seed = s;
    }
    let results = run_checks(&vc);
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| CliError::Validation(e.to_string()));
    w(out, format!("seed = {}, paths = {}", vc.seed, vc.n_paths))?;
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        w(out, format!("{verdict}  {:<22} residual {:<12} tolerance {:<8}  {}", r.name, num(r.residual, 4), num(r.tolerance, 4), r.detail))?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        w(out, format!("all {} checks passed", results.len()))?;
    } else {
        w(out, format!("{} of {} checks failed: {}", failed.len(), results.len(), failed.join(", ")))?;
    }
    Ok(failed.is_empty())
}

fn read_quotes(path: &Path) -> CliResult<Vec<Quote>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| io_err(path, e))?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.to_ascii_lowercase().as_str()));
    let t_col = col(&["maturity", "t"]).ok_or_else(|| io_err(path, "missing `maturity` column"))?;
    let k_col = col(&["strike"]).ok_or_else(|| io_err(path, "missing `strike` column"))?;
    let v_col = col(&["implied_vol", "vol"]).ok_or_else(|| io_err(path, "missing `implied_vol` column"))?;
    let w_col = col(&["weight"]);
    let mut quotes = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let rec = rec.map_err(|e| io_err(path, e))?;
        let field = |c: usize, name: &str| -> CliResult<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Validation(format!("{} line {line}: bad {name} `{s}`", path.display())))
        };
        let weight = match w_col {
            Some(c) if !rec.get(c).unwrap_or("").is_empty() => field(c, "weight")?,
            _ => 1.0,
        };
        quotes.push(Quote { t: field(t_col, "maturity")?, strike: field(k_col, "strike")?, implied_vol: field(v_col, "implied_vol")?, weight });
    }
    Ok(quotes)
}

fn cmd_calibrate(cfg: &RunConfig, quotes: &Path, out_path: Option<PathBuf>, out: &mut impl Write) -> CliResult<()> {
    let spec = cfg
        .calibration
        .as_ref()
        .ok_or_else(|| CliError::Validation("config has no [calibration] block".into()))?;
    let quotes = read_quotes(quotes)?;
    let start = ModelState { params: cfg.params, clock: cfg.clock.clone() };
    let mut problem = CalibrationProblem::new(quotes, spec.free.clone(), start, cfg.x, cfg.r);
    problem.options = spec.options;
    let res = calibrate(&problem)?;
    let d = cfg.output.precision;
    let mut lines = vec![];
    for (p, v) in &res.values {
        lines.push(format!("{} = {}", p.name(), num(*v, d)));
    }
    lines.push(format!("rmse = {}", num(res.rmse, d)));
    lines.push(format!("iterations = {}", res.iterations));
    lines.push(format!("evaluations = {}", res.evaluations));
    lines.push(format!("converged = {}", res.converged));
    lines.push(format!("failed_quotes = {}", res.failed_quotes));
    lines.push(format!("quotes = {}, free parameters = {}", problem.quotes.len(), problem.free.len()));
    for l in lines {
        writeln!(out, "{l}").map_err(|e| CliError::Validation(e.to_string()))?;
    }
    if let Some(path) = out_path.or_else(|| cfg.output.path.as_ref().map(PathBuf::from)) {
        let rows = problem.quotes.iter().zip(&res.residuals).map(|(q, r)| {
            vec![
                num(q.t, d),
                num(q.strike, d),
                num(q.weight, d),
                num(q.implied_vol, d),
                r.map(|r| num(q.implied_vol + r, d)).unwrap_or_default(),
                r.map(|r| num(r, d)).unwrap_or_default(),
            ]
        });
        write_csv(&path, &["maturity", "strike", "weight", "quoted_vol", "model_vol", "residual"], rows)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Price { config, preset } => {
            let cfg = RunConfig::load(config.as_deref(), preset)?;
            cmd_price(&cfg, preset, &mut stdout)
        }
        Command::Surface { config, preset, out } => {
            let cfg = RunConfig::load(config.as_deref(), preset)?;
            cmd_surface(&cfg, preset, out, &mut stdout)
        }
        Command::Verify { config, seed } => {
            // Only [verify] and [numerics] matter here; the preset fills in the model.
            let cfg = config.as_deref().map(|p| RunConfig::load(Some(p), Some(Preset::Fig1))).transpose()?;
            if cmd_verify(cfg.as_ref(), seed, &mut stdout)? {
                Ok(())
            } else {
                Err(CliError::Numeric("verification failed".into()))
            }
        }
        Command::Calibrate { config, preset, quotes, out } => {
            let cfg = RunConfig::load(config.as_deref(), preset)?;
            cmd_calibrate(&cfg, &quotes, out, &mut stdout)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
