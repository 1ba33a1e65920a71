//! Self-checks of the pricing engine against independent oracles: closed
//! forms, parity, finite differences, Monte-Carlo and ODE shooting.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::impliedvol::bs_price;
use crate::mc_oracle::{group_params_from_model, mc_clock_mean, mc_price_order0_strikes, mc_weighted_laplace, FullModelSpec};
use crate::presets::Preset;
use crate::pricing::{choose_contour, price, price_put_direct, price_with_contour, PricingRequest};
use crate::spectral::{Contour, GroupParams};
use crate::timechange::Clock;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst residual over the check's cases, in the units of `tolerance`.
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seed: u64,
    pub n_paths: usize,
    /// Per-check tolerance overrides keyed by check name.
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 20_240_601,
            n_paths: 100_000,
            tolerances: BTreeMap::new(),
        }
    }
}

pub const CHECKS: [(&str, f64); 10] = [
    ("bs_degeneration", 1e-6),
    ("put_call_parity", 1e-10),
    ("laplace_derivative", 1e-6),
    ("imag_residual", 1e-10),
    ("contour_independence", 1e-8),
    ("clock_sampler_means", 3.0),
    ("mc_price_order0", 3.0),
    ("mc_weighted_laplace", 3.0),
    ("centering_residual", 1e-8),
    ("poisson_shooting", 1e-6),
];

pub fn default_tolerance(name: &str) -> Option<f64> {
    CHECKS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Strikes (as log-strikes) and maturities shared by the grid checks.
pub const CHECK_LOG_STRIKES: [f64; 5] = [-0.3, -0.1, 0.0, 0.1, 0.3];
pub const CHECK_MATURITIES: [f64; 3] = [0.25, 0.5, 1.0];

/// Max relative error against Black–Scholes with the correction switched off.
pub fn bs_degeneration() -> Result<f64> {
    let params = GroupParams::uncorrected(0.34)?;
    let mut worst: f64 = 0.0;
    for &t in &CHECK_MATURITIES {
        for &k in &CHECK_LOG_STRIKES {
            let p = price(&PricingRequest::call(0.0, k, 0.0, t, params, Clock::Identity))?;
            let bs = bs_price(1.0, k.exp(), 0.0, t, 0.34);
            worst = worst.max((p.total - bs).abs() / bs);
        }
    }
    Ok(worst)
}

/// Max `|call - put - (e^x - e^{k-rt})| / e^x`, with the put priced on its
/// own contour rather than through parity.
pub fn put_call_parity(preset: Preset) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in &CHECK_MATURITIES {
        for &k in &CHECK_LOG_STRIKES {
            let req = preset.request(k, t);
            let call = price(&req)?.total;
            let put = price_put_direct(&req)?.total;
            let gap = req.x.exp() - (k - req.r * t).exp();
            worst = worst.max((call - put - gap).abs() / req.x.exp());
        }
    }
    Ok(worst)
}

/// Max relative error of `weighted_laplace` against `lam1 · (L(lam+h) - L(lam-h))/2h`
/// at `n` random in-domain points.
pub fn laplace_derivative(clock: &Clock, t: f64, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = clock.admissible_real_lower_bound();
    let floor = if bound.is_finite() { bound + 0.05 * bound.abs().max(0.2) } else { -1.0 };
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let lam = Complex64::new(floor + rng.random_range(0.0..3.0), rng.random_range(-5.0..5.0));
        let lam1 = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let analytic = clock.weighted_laplace(t, lam, lam1)?;
        let h = 1e-5 * lam.norm().max(1.0);
        let fd = lam1 * (clock.laplace(t, lam + h)? - clock.laplace(t, lam - h)?) / (2.0 * h);
        worst = worst.max((analytic - fd).norm() / analytic.norm());
    }
    Ok(worst)
}

/// Max `|imag| / max(1, price)` and max relative difference between
/// contours `Im omega = -0.8` and `-1.2`.
pub fn contour_checks(preset: Preset) -> Result<(f64, f64)> {
    let (mut imag, mut indep): (f64, f64) = (0.0, 0.0);
    let base = choose_contour(&preset.params(), &preset.clock())?;
    let a = Contour::new(-0.8, base.truncation, base.tolerance)?;
    let b = Contour::new(-1.2, base.truncation, base.tolerance)?;
    for &t in &CHECK_MATURITIES {
        for &k in &CHECK_LOG_STRIKES {
            let req = preset.request(k, t);
            let pa = price_with_contour(&req, &a)?;
            let pb = price_with_contour(&req, &b)?;
            imag = imag.max(pa.imag_residual.abs() / pa.total.abs().max(1.0));
            imag = imag.max(pb.imag_residual.abs() / pb.total.abs().max(1.0));
            indep = indep.max((pa.total - pb.total).abs() / pa.total.abs());
        }
    }
    Ok((imag, indep))
}

/// Max z-score of sampled clock means against `E[T_t]` for the time-changed presets.
pub fn clock_sampler_means(n_paths: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in [Preset::Fig2, Preset::Fig3, Preset::Fig4] {
        let clock = p.clock();
        let est = mc_clock_mean(&clock, 1.0, n_paths, seed)?;
        let exact = clock.mean(1.0).unwrap_or(f64::NAN);
        worst = worst.max((est.mean - exact).abs() / est.stderr);
    }
    Ok(worst)
}

pub const MC_CELLS: [(f64, f64); 6] = [(-0.2, 0.25), (0.0, 0.25), (0.2, 0.25), (-0.2, 1.0), (0.0, 1.0), (0.2, 1.0)];

/// Max `|P0 - MC| / stderr` over six (log-strike, maturity) cells.
pub fn mc_price_order0_check(preset: Preset, n_paths: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in &[0.25, 1.0] {
        let ks: Vec<f64> = MC_CELLS.iter().filter(|c| c.1 == t).map(|c| c.0).collect();
        let req = preset.request(0.0, t);
        let mc = mc_price_order0_strikes(&req, &ks, n_paths, seed)?;
        for (k, est) in ks.iter().zip(mc) {
            let analytic = price(&PricingRequest { k: *k, ..req.clone() })?.p0;
            worst = worst.max((analytic - est.mean).abs() / est.stderr);
        }
    }
    Ok(worst)
}

/// z-score of the sampled weighted Laplace transform at real `lam0 = 0.3`.
pub fn mc_weighted_laplace_check(preset: Preset, n_paths: usize, seed: u64) -> Result<f64> {
    let clock = preset.clock();
    let (lam0, lam1) = (Complex64::new(0.3, 0.0), Complex64::new(0.2, 0.1));
    let exact = clock.weighted_laplace(1.0, lam0, lam1)?;
    let est = mc_weighted_laplace(&clock, 1.0, lam0, lam1, n_paths, seed)?;
    let z_re = (est.mean.re - exact.re).abs() / est.stderr_re;
    let z_im = (est.mean.im - exact.im).abs() / est.stderr_im;
    Ok(z_re.max(z_im))
}

/// Centering residual and max gap between the integrating-factor and
/// shooting solutions for `Phi'` on `[m - 4nu, m + 4nu]`.
pub fn poisson_checks(spec: &FullModelSpec) -> Result<(f64, f64)> {
    let (_, sol) = group_params_from_model(spec)?;
    let ys = crate::impliedvol::linspace(spec.m - 4.0 * spec.nu, spec.m + 4.0 * spec.nu, 81);
    let shot = sol.phi_prime_shooting(&ys);
    let gap = ys.iter().zip(shot).map(|(&y, s)| (sol.phi_prime(y) - s).abs()).fold(0.0, f64::max);
    Ok((sol.centering_residual.abs(), gap))
}

fn finish(name: &'static str, cfg: &VerifyConfig, value: Result<f64>, detail: String) -> CheckResult {
    let tolerance = cfg
        .tolerances
        .get(name)
        .copied()
        .or_else(|| default_tolerance(name))
        .unwrap_or(0.0);
    match value {
        Ok(residual) => CheckResult {
            name,
            residual,
            tolerance,
            passed: residual <= tolerance,
            detail,
        },
        Err(e) => CheckResult {
            name,
            residual: f64::NAN,
            tolerance,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn worst_over<F: Fn(Preset) -> Result<f64>>(presets: &[Preset], f: F) -> (Result<f64>, String) {
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    for &p in presets {
        match f(p) {
            Ok(v) => {
                if v >= worst || at.is_empty() {
                    worst = v;
                    at = format!("worst at {p}");
                }
            }
            Err(e) => return (Err(e), format!("failed at {p}")),
        }
    }
    (Ok(worst), at)
}

/// Runs every check in [`CHECKS`] order.
pub fn run_checks(cfg: &VerifyConfig) -> Vec<CheckResult> {
    let all = Preset::ALL;
    let timed = [Preset::Fig2, Preset::Fig3, Preset::Fig4];
    let mut out = Vec::new();
    out.push(finish("bs_degeneration", cfg, bs_degeneration(), "identity clock, 5 strikes x 3 maturities".into()));
    let (v, d) = worst_over(&all, put_call_parity);
    out.push(finish("put_call_parity", cfg, v, d));
    let (v, d) = worst_over(&all, |p| laplace_derivative(&p.clock(), 1.0, 100, cfg.seed));
    out.push(finish("laplace_derivative", cfg, v, d));
    let contour: Vec<Result<(f64, f64)>> = all.iter().map(|&p| contour_checks(p)).collect();
    let pick = |i: usize| -> Result<f64> {
        contour
            .iter()
            .map(|r| r.clone().map(|v| if i == 0 { v.0 } else { v.1 }))
            .try_fold(0.0, |a: f64, v| Ok(a.max(v?)))
    };
    out.push(finish("imag_residual", cfg, pick(0), "contours -0.8 and -1.2".into()));
    out.push(finish("contour_independence", cfg, pick(1), "Im omega = -0.8 vs -1.2".into()));
    out.push(finish(
        "clock_sampler_means",
        cfg,
        clock_sampler_means(cfg.n_paths, cfg.seed),
        format!("z-score, {} paths", cfg.n_paths),
    ));
    let (v, d) = worst_over(&timed, |p| mc_price_order0_check(p, cfg.n_paths, cfg.seed));
    out.push(finish("mc_price_order0", cfg, v, format!("z-score, {d}")));
    let (v, d) = worst_over(&timed, |p| mc_weighted_laplace_check(p, cfg.n_paths, cfg.seed));
    out.push(finish("mc_weighted_laplace", cfg, v, format!("z-score, {d}")));
    let poisson = poisson_checks(&FullModelSpec::default());
    out.push(finish(
        "centering_residual",
        cfg,
        poisson.clone().map(|p| p.0),
        "f = e^y, nu = 0.5".into(),
    ));
    out.push(finish("poisson_shooting", cfg, poisson.map(|p| p.1), "y in [m - 4nu, m + 4nu]".into()));
    out
}
