//! Line-oriented `key = value` config with `[block]` headers.
//!
//! ```text
//! [model]
//! sigma = 0.34
//! [clock]
//! kind = levy
//! gamma = 0.25
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use tcfmr::calibration::{Bound, FreeParam, NelderMeadOptions};
use tcfmr::presets::Preset;
use tcfmr::spectral::{Contour, GroupParams, DEFAULT_OMEGA_I, DEFAULT_TOLERANCE, DEFAULT_TRUNCATION};
use tcfmr::{CirClock, Clock, LevyExpCP};

pub const BLOCKS: [&str; 8] = ["model", "clock", "option", "grid", "numerics", "output", "calibration", "verify"];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError { line: Some(line), message: message.into() }
    }

    fn global(message: impl Into<String>) -> Self {
        ConfigError { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "config line {n}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = Result<T, ConfigError>;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone)]
struct Block {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

/// Raw parsed file. Every key must be consumed by [`RunConfig::from_raw`],
/// otherwise it is reported as unknown.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    blocks: BTreeMap<String, Block>,
}

impl RawConfig {
    pub fn parse(text: &str) -> CResult<Self> {
        let mut blocks: BTreeMap<String, Block> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(n, "unterminated block header"))?
                    .trim()
                    .to_ascii_lowercase();
                if !BLOCKS.contains(&name.as_str()) {
                    return Err(ConfigError::at(n, format!("unknown block [{name}]; expected one of {}", BLOCKS.join(", "))));
                }
                if blocks.contains_key(&name) {
                    return Err(ConfigError::at(n, format!("block [{name}] appears twice")));
                }
                blocks.insert(name.clone(), Block { line: n, entries: BTreeMap::new() });
                current = Some(name);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at(n, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::at(n, "empty key"));
            }
            let block = current
                .as_ref()
                .ok_or_else(|| ConfigError::at(n, format!("`{key}` appears before any [block] header")))?;
            let entries = &mut blocks.get_mut(block).expect("block exists").entries;
            if let Some(prev) = entries.get(&key) {
                return Err(ConfigError::at(n, format!("`{key}` already set on line {}", prev.line)));
            }
            entries.insert(key, Entry { value, line: n });
        }
        Ok(RawConfig { blocks })
    }

    pub fn load(path: &Path) -> CResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::global(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn block_line(&self, block: &str) -> Option<usize> {
        self.blocks.get(block).map(|b| b.line)
    }

    fn take(&mut self, block: &str, key: &str) -> Option<Entry> {
        self.blocks.get_mut(block)?.entries.remove(key)
    }

    fn take_f64(&mut self, block: &str, key: &str) -> CResult<Option<(f64, usize)>> {
        match self.take(block, key) {
            None => Ok(None),
            Some(e) => parse_f64(&e.value, e.line, key).map(|v| Some((v, e.line))),
        }
    }

    fn take_list(&mut self, block: &str, key: &str) -> CResult<Option<(Vec<f64>, usize)>> {
        match self.take(block, key) {
            None => Ok(None),
            Some(e) => {
                let values = e
                    .value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_f64(s, e.line, key))
                    .collect::<CResult<Vec<f64>>>()?;
                Ok(Some((values, e.line)))
            }
        }
    }

    fn take_count(&mut self, block: &str, key: &str) -> CResult<Option<(u64, usize)>> {
        match self.take(block, key) {
            None => Ok(None),
            Some(e) => {
                let v: u64 = e
                    .value
                    .replace('_', "")
                    .parse()
                    .map_err(|_| ConfigError::at(e.line, format!("`{key}` must be a non-negative integer, got `{}`", e.value)))?;
                Ok(Some((v, e.line)))
            }
        }
    }

    fn take_string(&mut self, block: &str, key: &str) -> Option<(String, usize)> {
        self.take(block, key).map(|e| (e.value, e.line))
    }

    /// Everything not consumed is an error, reported at its own line.
    fn finish(&self) -> CResult<()> {
        let leftover = self
            .blocks
            .iter()
            .flat_map(|(b, blk)| blk.entries.iter().map(move |(k, e)| (e.line, b, k)))
            .min();
        match leftover {
            Some((line, block, key)) => Err(ConfigError::at(line, format!("unknown key `{key}` in [{block}]"))),
            None => Ok(()),
        }
    }

    fn drain(&mut self, block: &str) -> Vec<(String, Entry)> {
        match self.blocks.get_mut(block) {
            Some(b) => std::mem::take(&mut b.entries).into_iter().collect(),
            None => Vec::new(),
        }
    }
}

fn parse_f64(s: &str, line: usize, key: &str) -> CResult<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| ConfigError::at(line, format!("`{key}` must be a number, got `{}`", s.trim())))?;
    if !v.is_finite() {
        return Err(ConfigError::at(line, format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn check(cond: bool, line: usize, message: impl FnOnce() -> String) -> CResult<()> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError::at(line, message()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptionSpec {
    pub kind: OptionKind,
    pub log_strike: f64,
    pub maturity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridAxis {
    Lmmr(Vec<f64>),
    LogStrike(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axis: GridAxis,
    pub maturities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerics {
    pub contour: Option<Contour>,
    pub tolerance: f64,
    pub seed: u64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub path: Option<String>,
    pub precision: usize,
}

#[derive(Debug, Clone)]
pub struct CalibrationSpec {
    pub free: Vec<Bound>,
    pub options: NelderMeadOptions,
}

#[derive(Debug, Clone)]
pub struct VerifySpec {
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: GroupParams,
    pub r: f64,
    /// Log spot.
    pub x: f64,
    pub clock: Clock,
    pub option: Option<OptionSpec>,
    pub grid: Option<GridSpec>,
    pub numerics: Numerics,
    pub output: OutputSpec,
    pub calibration: Option<CalibrationSpec>,
    pub verify: VerifySpec,
}

const LEVY_KEYS: [&str; 3] = ["gamma", "alpha", "eta"];
const CIR_KEYS: [&str; 4] = ["kappa", "theta", "vol2", "z0"];

fn levy_from(raw: &mut RawConfig, line: usize) -> CResult<LevyExpCP> {
    let [g, a, e] = LEVY_KEYS.map(|k| raw.take_f64("clock", k));
    let need = |v: CResult<Option<(f64, usize)>>, name: &str| -> CResult<f64> {
        v?.map(|p| p.0).ok_or_else(|| ConfigError::at(line, format!("[clock] is missing `{name}`")))
    };
    let (drift, intensity, jump_rate) = (need(g, "gamma")?, need(a, "alpha")?, need(e, "eta")?);
    LevyExpCP::new(drift, intensity, jump_rate).map_err(|err| ConfigError::at(line, err.to_string()))
}

fn cir_from(raw: &mut RawConfig, line: usize) -> CResult<CirClock> {
    let [k, t, v, z] = CIR_KEYS.map(|key| raw.take_f64("clock", key));
    let need = |v: CResult<Option<(f64, usize)>>, name: &str| -> CResult<f64> {
        v?.map(|p| p.0).ok_or_else(|| ConfigError::at(line, format!("[clock] is missing `{name}`")))
    };
    let (kappa, theta, vol2, z0) = (need(k, "kappa")?, need(t, "theta")?, need(v, "vol2")?, need(z, "z0")?);
    CirClock::new(kappa, theta, vol2, z0).map_err(|err| ConfigError::at(line, err.to_string()))
}

fn clock_from(raw: &mut RawConfig, preset: Option<Preset>) -> CResult<Clock> {
    let Some(line) = raw.block_line("clock") else {
        return Ok(preset.map(|p| p.clock()).unwrap_or(Clock::Identity));
    };
    let (kind, kind_line) = raw
        .take_string("clock", "kind")
        .ok_or_else(|| ConfigError::at(line, "[clock] needs `kind` (identity, levy, cir or composite)"))?;
    let clock = match kind.to_ascii_lowercase().as_str() {
        "identity" => Clock::Identity,
        "levy" => Clock::levy(levy_from(raw, kind_line)?),
        "cir" => Clock::Cir(cir_from(raw, kind_line)?),
        "composite" => {
            let outer = levy_from(raw, kind_line)?;
            Clock::composite(outer, cir_from(raw, kind_line)?)
        }
        other => {
            return Err(ConfigError::at(
                kind_line,
                format!("unknown clock kind `{other}`; expected identity, levy, cir or composite"),
            ))
        }
    };
    // Parameters that belong to another kind are an error, not silently ignored.
    for key in LEVY_KEYS.iter().chain(&CIR_KEYS) {
        if let Some(e) = raw.take("clock", key) {
            return Err(ConfigError::at(e.line, format!("`{key}` does not apply to a {kind} clock")));
        }
    }
    Ok(clock)
}

fn model_from(raw: &mut RawConfig, preset: Option<Preset>) -> CResult<(GroupParams, f64, f64)> {
    let base = preset.map(|p| p.params());
    let line = raw.block_line("model").unwrap_or(0);
    let get = |raw: &mut RawConfig, key: &str, fallback: Option<f64>| -> CResult<f64> {
        match raw.take_f64("model", key)? {
            Some((v, _)) => Ok(v),
            None => fallback.ok_or_else(|| match raw.block_line("model") {
                Some(l) => ConfigError::at(l, format!("[model] is missing `{key}`")),
                None => ConfigError::global(format!("no [model] block and no preset; `{key}` is required")),
            }),
        }
    };
    let sigma = get(raw, "sigma", base.map(|b| b.sigma))?;
    let v2 = get(raw, "v2_eps", base.map(|b| b.v2_eps))?;
    let v3 = get(raw, "v3_eps", base.map(|b| b.v3_eps))?;
    let r = raw.take_f64("model", "r")?;
    let spot = raw.take_f64("model", "spot")?;
    if let Some((r, l)) = r {
        check(r >= 0.0, l, || format!("`r` must be >= 0, got {r}"))?;
    }
    if let Some((s, l)) = spot {
        check(s > 0.0, l, || format!("`spot` must be > 0, got {s}"))?;
    }
    let params = GroupParams::new(sigma, v2, v3).map_err(|e| ConfigError { line: (line > 0).then_some(line), message: e.to_string() })?;
    Ok((params, r.map_or(0.0, |p| p.0), spot.map_or(0.0, |p| p.0.ln())))
}

fn option_from(raw: &mut RawConfig, x: f64) -> CResult<Option<OptionSpec>> {
    let Some(line) = raw.block_line("option") else {
        return Ok(None);
    };
    let kind = match raw.take_string("option", "type") {
        None => OptionKind::Call,
        Some((s, l)) => match s.to_ascii_lowercase().as_str() {
            "call" => OptionKind::Call,
            "put" => OptionKind::Put,
            other => return Err(ConfigError::at(l, format!("option `type` must be call or put, got `{other}`"))),
        },
    };
    let strike = raw.take_f64("option", "strike")?;
    let log_strike = raw.take_f64("option", "log_strike")?;
    let k = match (strike, log_strike) {
        (Some((s, l)), None) => {
            check(s > 0.0, l, || format!("`strike` must be > 0, got {s}"))?;
            s.ln()
        }
        (None, Some((k, _))) => k,
        (None, None) => x,
        (Some(_), Some((_, l))) => return Err(ConfigError::at(l, "give either `strike` or `log_strike`, not both")),
    };
    let maturity = match raw.take_f64("option", "maturity")? {
        Some((t, l)) => {
            check(t > 0.0, l, || format!("`maturity` must be > 0, got {t}"))?;
            t
        }
        None => return Err(ConfigError::at(line, "[option] is missing `maturity`")),
    };
    Ok(Some(OptionSpec { kind, log_strike: k, maturity }))
}

fn grid_from(raw: &mut RawConfig) -> CResult<Option<GridSpec>> {
    let Some(line) = raw.block_line("grid") else {
        return Ok(None);
    };
    let lmmr = raw.take_list("grid", "lmmr")?;
    let log_strikes = raw.take_list("grid", "log_strikes")?;
    let strikes = raw.take_list("grid", "strikes")?;
    let axis = match (lmmr, log_strikes, strikes) {
        (Some((v, l)), None, None) => {
            // `lo, hi, n` is a range; anything else is an explicit list.
            let range = v.len() == 3 && v[2] >= 2.0 && v[2].fract() == 0.0 && v[0] < v[1];
            let points = if range { tcfmr::impliedvol::linspace(v[0], v[1], v[2] as usize) } else { v };
            check(!points.is_empty(), l, || "`lmmr` is empty".into())?;
            GridAxis::Lmmr(points)
        }
        (None, Some((v, l)), None) => {
            check(!v.is_empty(), l, || "`log_strikes` is empty".into())?;
            GridAxis::LogStrike(v)
        }
        (None, None, Some((v, l))) => {
            check(!v.is_empty(), l, || "`strikes` is empty".into())?;
            check(v.iter().all(|&s| s > 0.0), l, || "`strikes` must all be > 0".into())?;
            GridAxis::LogStrike(v.iter().map(|s| s.ln()).collect())
        }
        (None, None, None) => return Err(ConfigError::at(line, "[grid] needs one of `lmmr`, `log_strikes` or `strikes`")),
        _ => return Err(ConfigError::at(line, "[grid] takes only one of `lmmr`, `log_strikes` and `strikes`")),
    };
    let maturities = match raw.take_list("grid", "maturities")? {
        Some((v, l)) => {
            check(!v.is_empty(), l, || "`maturities` is empty".into())?;
            check(v.iter().all(|&t| t > 0.0), l, || "`maturities` must all be > 0".into())?;
            v
        }
        None => return Err(ConfigError::at(line, "[grid] is missing `maturities`")),
    };
    Ok(Some(GridSpec { axis, maturities }))
}

fn numerics_from(raw: &mut RawConfig) -> CResult<Numerics> {
    let tolerance = match raw.take_f64("numerics", "tolerance")? {
        Some((t, l)) => {
            check(t > 0.0, l, || format!("`tolerance` must be > 0, got {t}"))?;
            t
        }
        None => DEFAULT_TOLERANCE,
    };
    let omega_i = raw.take_f64("numerics", "omega_i")?;
    let truncation = raw.take_f64("numerics", "truncation")?;
    let contour = match (omega_i, truncation) {
        (None, None) => None,
        (w, c) => {
            let l = w.or(c).map_or(0, |p| p.1);
            let w = w.map_or(DEFAULT_OMEGA_I, |p| p.0);
            let c = c.map_or(DEFAULT_TRUNCATION, |p| p.0);
            Some(Contour::new(w, c, tolerance).map_err(|e| ConfigError::at(l, e.to_string()))?)
        }
    };
    let seed = raw.take_count("numerics", "seed")?.map_or(tcfmr::verify::VerifyConfig::default().seed, |p| p.0);
    let n_paths = match raw.take_count("numerics", "n_paths")? {
        Some((n, l)) => {
            check(n >= tcfmr::mc_oracle::MIN_PATHS as u64, l, || format!("`n_paths` must be at least {}", tcfmr::mc_oracle::MIN_PATHS))?;
            n as usize
        }
        None => tcfmr::verify::VerifyConfig::default().n_paths,
    };
    Ok(Numerics { contour, tolerance, seed, n_paths })
}

fn output_from(raw: &mut RawConfig) -> CResult<OutputSpec> {
    let path = raw.take_string("output", "path").map(|p| p.0);
    let precision = match raw.take_count("output", "precision")? {
        Some((p, l)) => {
            check((1..=17).contains(&p), l, || format!("`precision` must be between 1 and 17, got {p}"))?;
            p as usize
        }
        None => 12,
    };
    Ok(OutputSpec { path, precision })
}

fn calibration_from(raw: &mut RawConfig) -> CResult<Option<CalibrationSpec>> {
    let Some(line) = raw.block_line("calibration") else {
        return Ok(None);
    };
    let (names, names_line) = raw
        .take_string("calibration", "free")
        .ok_or_else(|| ConfigError::at(line, "[calibration] is missing `free`"))?;
    let mut options = NelderMeadOptions::default();
    if let Some((n, l)) = raw.take_count("calibration", "max_iterations")? {
        check(n > 0, l, || "`max_iterations` must be > 0".into())?;
        options.max_iterations = n as usize;
    }
    if let Some((n, _)) = raw.take_count("calibration", "restarts")? {
        options.restarts = n as usize;
    }
    let mut free = Vec::new();
    for name in names.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let param = FreeParam::from_name(name).ok_or_else(|| ConfigError::at(names_line, format!("unknown free parameter `{name}`")))?;
        let (b, l) = raw
            .take_list("calibration", name)?
            .ok_or_else(|| ConfigError::at(names_line, format!("free parameter `{name}` needs a `{name} = lower, upper` line")))?;
        check(b.len() == 2, l, || format!("`{name}` must be `lower, upper`"))?;
        check(b[0] < b[1], l, || format!("`{name}`: lower bound must be below upper bound"))?;
        free.push(Bound { param, lower: b[0], upper: b[1] });
    }
    check(!free.is_empty(), names_line, || "`free` lists no parameters".into())?;
    Ok(Some(CalibrationSpec { free, options }))
}

fn verify_from(raw: &mut RawConfig) -> CResult<VerifySpec> {
    let seed = raw.take_count("verify", "seed")?.map(|p| p.0);
    let n_paths = match raw.take_count("verify", "n_paths")? {
        Some((n, l)) => {
            check(n >= tcfmr::mc_oracle::MIN_PATHS as u64, l, || format!("`n_paths` must be at least {}", tcfmr::mc_oracle::MIN_PATHS))?;
            Some(n as usize)
        }
        None => None,
    };
    let mut tolerances = BTreeMap::new();
    for (key, e) in raw.drain("verify") {
        if tcfmr::verify::default_tolerance(&key).is_none() {
            return Err(ConfigError::at(e.line, format!("unknown verify check `{key}`")));
        }
        let v = parse_f64(&e.value, e.line, &key)?;
        check(v >= 0.0, e.line, || format!("tolerance for `{key}` must be >= 0"))?;
        tolerances.insert(key, v);
    }
    Ok(VerifySpec { seed, n_paths, tolerances })
}

impl RunConfig {
    pub fn from_raw(mut raw: RawConfig, preset: Option<Preset>) -> CResult<Self> {
        let (params, r, x) = model_from(&mut raw, preset)?;
        let clock = clock_from(&mut raw, preset)?;
        let option = option_from(&mut raw, x)?;
        let grid = grid_from(&mut raw)?;
        let numerics = numerics_from(&mut raw)?;
        let output = output_from(&mut raw)?;
        let calibration = calibration_from(&mut raw)?;
        let verify = verify_from(&mut raw)?;
        raw.finish()?;
        Ok(RunConfig { params, r, x, clock, option, grid, numerics, output, calibration, verify })
    }

    /// Config file, preset, or both. With both, config values override the preset.
    pub fn load(path: Option<&Path>, preset: Option<Preset>) -> CResult<Self> {
        let raw = match path {
            Some(p) => RawConfig::load(p)?,
            None if preset.is_some() => RawConfig::default(),
            None => return Err(ConfigError::global("either --config or --preset is required")),
        };
        Self::from_raw(raw, preset)
    }
}
