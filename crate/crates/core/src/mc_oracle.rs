//! Monte-Carlo and quadrature oracles: clock samplers, conditional
//! Black–Scholes averaging, the Poisson-equation route to the group
//! parameters, and a simulation of the full two-factor model.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, require_finite, require_positive, Error, Result};
use crate::impliedvol::norm_cdf;
use crate::pricing::{Payoff, PricingRequest};
use crate::quadrature::{integrate, integrate_split, GaussianRule};
use crate::spectral::GroupParams;
use crate::timechange::{CirClock, Clock, Subordinator};

pub const MIN_PATHS: usize = 1_000;
pub const CIR_STEPS: usize = 2_000;
const CHUNK: usize = 2_048;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl McEstimate {
    /// Whether `value` lies within `z` standard errors (plus `slack`).
    pub fn brackets(&self, value: f64, z: f64, slack: f64) -> bool {
        (self.mean - value).abs() <= z * self.stderr + slack
    }
}

/// Path `i` draws from its own ChaCha stream, so results do not depend on
/// how paths are split across threads.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    comp: f64,
    sum_sq: f64,
    comp_sq: f64,
    n: usize,
}

// Neumaier summation; chunks are merged in index order.
fn neumaier(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

impl Moments {
    fn push(&mut self, v: f64) {
        neumaier(&mut self.sum, &mut self.comp, v);
        neumaier(&mut self.sum_sq, &mut self.comp_sq, v * v);
        self.n += 1;
    }

    fn merge(mut self, o: Moments) -> Moments {
        neumaier(&mut self.sum, &mut self.comp, o.sum + o.comp);
        neumaier(&mut self.sum_sq, &mut self.comp_sq, o.sum_sq + o.comp_sq);
        self.n += o.n;
        self
    }

    fn estimate(&self, n_paths: usize) -> McEstimate {
        let n = self.n as f64;
        let mean = (self.sum + self.comp) / n;
        let var = ((self.sum_sq + self.comp_sq) / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        McEstimate {
            mean,
            stderr: (var / n).sqrt(),
            n_paths,
        }
    }
}

/// Runs `sample(i)` for `i in 0..n` in fixed chunks and reduces in order.
fn run_paths<F>(n: usize, sample: F) -> Result<Moments>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|a| (a, (a + CHUNK).min(n))).collect();
    let parts: Vec<Result<Moments>> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let mut m = Moments::default();
            for i in a..b {
                m.push(sample(i as u64)?);
            }
            Ok(m)
        })
        .collect();
    parts.into_iter().try_fold(Moments::default(), |acc, p| Ok(acc.merge(p?)))
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < MIN_PATHS {
        return Err(invalid("n_paths", format!("need at least {MIN_PATHS}, got {n_paths}")));
    }
    Ok(())
}

/// `∫_0^t Z ds` along a full-truncation Euler path, trapezoid in time.
pub fn sample_cir_integral<R: Rng + ?Sized>(c: &CirClock, t: f64, steps: usize, rng: &mut R) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let dt = t / steps as f64;
    let sq = dt.sqrt();
    let mut z = c.z0;
    let mut acc = 0.5 * z.max(0.0);
    for i in 0..steps {
        let zp = z.max(0.0);
        let n: f64 = rng.sample(StandardNormal);
        z += c.kappa * (c.theta - zp) * dt + (c.vol2 * zp).sqrt() * sq * n;
        acc += if i + 1 == steps { 0.5 * z.max(0.0) } else { z.max(0.0) };
    }
    acc * dt
}

/// Subordinator value after `s` units of its own time.
pub fn sample_subordinator<R: Rng + ?Sized>(sub: &Subordinator, s: f64, rng: &mut R) -> Result<f64> {
    let p = match sub {
        Subordinator::CompoundPoissonExp(p) => p,
        Subordinator::Custom(_) => {
            return Err(Error::Unsupported("sampling a user-supplied Lévy exponent".into()));
        }
    };
    if s <= 0.0 {
        return Ok(0.0);
    }
    let mean_jumps = p.intensity * s;
    let jumps = if mean_jumps > 0.0 {
        Poisson::new(mean_jumps)
            .map_err(|e| invalid("intensity", e.to_string()))?
            .sample(rng)
    } else {
        0.0
    };
    let sizes = if jumps >= 1.0 {
        if jumps == 1.0 {
            Exp::new(p.jump_rate).map_err(|e| invalid("jump_rate", e.to_string()))?.sample(rng)
        } else {
            Gamma::new(jumps, 1.0 / p.jump_rate)
                .map_err(|e| invalid("jump_rate", e.to_string()))?
                .sample(rng)
        }
    } else {
        0.0
    };
    Ok(p.drift * s + sizes)
}

/// One draw of `T_t`.
pub fn sample_clock<R: Rng + ?Sized>(clock: &Clock, t: f64, rng: &mut R) -> Result<f64> {
    sample_clock_with_steps(clock, t, CIR_STEPS, rng)
}

pub fn sample_clock_with_steps<R: Rng + ?Sized>(clock: &Clock, t: f64, cir_steps: usize, rng: &mut R) -> Result<f64> {
    match clock {
        Clock::Identity => Ok(t),
        Clock::Levy(s) => sample_subordinator(s, t, rng),
        Clock::Cir(c) => Ok(sample_cir_integral(c, t, cir_steps, rng)),
        Clock::Composite(c) => {
            let inner = sample_cir_integral(c.inner(), t, cir_steps, rng);
            sample_subordinator(c.outer(), inner, rng)
        }
    }
}

/// Independent draws of `T_t`, path `i` on stream `i`.
pub fn sample_clocks(clock: &Clock, t: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| sample_clock(clock, t, &mut path_rng(seed, i)))
        .collect()
}

/// Undiscounted call value given elapsed business time `big_t`:
/// `e^{rt+x}N(d+) - e^k N(d-)`.
pub fn conditional_bs_value(big_t: f64, x: f64, t: f64, k: f64, r: f64, sigma: f64) -> f64 {
    let fwd = r * t + x;
    let sd = sigma * big_t.max(0.0).sqrt();
    if !(sd > 0.0) {
        return (fwd.exp() - k.exp()).max(0.0);
    }
    let d1 = (fwd - k) / sd + 0.5 * sd;
    fwd.exp() * norm_cdf(d1) - k.exp() * norm_cdf(d1 - sd)
}

/// Discounted payoff value when `X_T ~ N(mean, sd²)`, with `S = e^{rt + X_T}`.
fn gaussian_payoff_value(payoff: &Payoff, mean: f64, sd: f64, k: f64, r: f64, t: f64) -> f64 {
    let disc = (-r * t).exp();
    let fwd = r * t + mean + 0.5 * sd * sd;
    let call = || {
        if !(sd > 0.0) {
            return ((r * t + mean).exp() - k.exp()).max(0.0);
        }
        let d1 = (fwd - k) / sd + 0.5 * sd;
        fwd.exp() * norm_cdf(d1) - k.exp() * norm_cdf(d1 - sd)
    };
    disc * match payoff {
        Payoff::Call => call(),
        Payoff::Put => call() - fwd.exp() + k.exp(),
        Payoff::Custom(p) => gaussian_expect(r * t + mean, sd, |y| p.eval(y.exp())),
    }
}

/// `E[g(mean + sd·Z)]` by adaptive quadrature. Gauss–Hermite converges
/// slowly for steep payoffs, whose poles sit close to the real axis in log
/// space.
pub fn gaussian_expect<G: Fn(f64) -> f64>(mean: f64, sd: f64, g: G) -> f64 {
    if !(sd > 0.0) {
        return g(mean);
    }
    let phi = |z: f64| g(mean + sd * z) * (-0.5 * z * z).exp() * crate::spectral::INV_SQRT_2PI;
    let mut f = phi;
    match integrate_split(&mut f, -12.0, 12.0, 12, 1e-12, 0.0, 400) {
        Ok(r) => r.value,
        Err(_) => f64::NAN,
    }
}

/// `e^{-rt}·E[u0(T_t)]` averaged over sampled clocks.
pub fn mc_price_order0(req: &PricingRequest, n_paths: usize, seed: u64) -> Result<McEstimate> {
    req.validate()?;
    check_paths(n_paths)?;
    let sigma = req.params.sigma;
    let m = run_paths(n_paths, |i| {
        let big_t = sample_clock(&req.clock, req.t, &mut path_rng(seed, i))?;
        let mean = req.x - 0.5 * sigma * sigma * big_t;
        Ok(gaussian_payoff_value(&req.payoff, mean, sigma * big_t.sqrt(), req.k, req.r, req.t))
    })?;
    Ok(m.estimate(n_paths))
}

/// As [`mc_price_order0`] over several strikes sharing one set of clock
/// draws. Estimates are correlated across strikes.
pub fn mc_price_order0_strikes(req: &PricingRequest, strikes: &[f64], n_paths: usize, seed: u64) -> Result<Vec<McEstimate>> {
    req.validate()?;
    check_paths(n_paths)?;
    let draws = sample_clocks(&req.clock, req.t, n_paths, seed)?;
    let sigma = req.params.sigma;
    strikes
        .iter()
        .map(|&k| {
            let m = run_paths(n_paths, |i| {
                let big_t = draws[i as usize];
                let mean = req.x - 0.5 * sigma * sigma * big_t;
                Ok(gaussian_payoff_value(&req.payoff, mean, sigma * big_t.sqrt(), k, req.r, req.t))
            })?;
            Ok(m.estimate(n_paths))
        })
        .collect()
}

/// Complex sample mean with the standard error of its modulus-scale noise,
/// `sqrt((Var Re + Var Im) / n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McComplexEstimate {
    pub mean: Complex64,
    pub stderr: f64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

/// `E[(-lam1·T) exp(-lam0·T)]` from clock draws.
pub fn mc_weighted_laplace(
    clock: &Clock,
    t: f64,
    lam0: Complex64,
    lam1_scaled: Complex64,
    n_paths: usize,
    seed: u64,
) -> Result<McComplexEstimate> {
    check_paths(n_paths)?;
    let bound = clock.admissible_real_lower_bound();
    if !(lam0.re > bound) {
        return Err(Error::DomainViolation { re: lam0.re, bound });
    }
    let draws = sample_clocks(clock, t, n_paths, seed)?;
    let value = |i: u64| -> Complex64 {
        let big_t = draws[i as usize];
        -lam1_scaled * big_t * (-lam0 * big_t).exp()
    };
    let re = run_paths(n_paths, |i| Ok(value(i).re))?.estimate(n_paths);
    let im = run_paths(n_paths, |i| Ok(value(i).im))?.estimate(n_paths);
    Ok(McComplexEstimate {
        mean: Complex64::new(re.mean, im.mean),
        stderr: re.stderr.hypot(im.stderr),
        stderr_re: re.stderr,
        stderr_im: im.stderr,
    })
}

/// `E[exp(-lam·T_t)]` from clock draws; an oracle for the Laplace transforms.
pub fn mc_laplace(clock: &Clock, t: f64, lam: f64, n_paths: usize, seed: u64) -> Result<McEstimate> {
    check_paths(n_paths)?;
    let m = run_paths(n_paths, |i| Ok((-lam * sample_clock(clock, t, &mut path_rng(seed, i))?).exp()))?;
    Ok(m.estimate(n_paths))
}

/// `E[T_t]` from clock draws.
pub fn mc_clock_mean(clock: &Clock, t: f64, n_paths: usize, seed: u64) -> Result<McEstimate> {
    check_paths(n_paths)?;
    let m = run_paths(n_paths, |i| sample_clock(clock, t, &mut path_rng(seed, i)))?;
    Ok(m.estimate(n_paths))
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum VolFunction {
    /// `f(y) = e^y`
    Exp,
    Constant(f64),
    Custom(RealFn),
}

impl VolFunction {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            VolFunction::Exp => y.exp(),
            VolFunction::Constant(s) => *s,
            VolFunction::Custom(f) => f(y),
        }
    }
}

impl fmt::Debug for VolFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VolFunction::Exp => f.write_str("Exp"),
            VolFunction::Constant(s) => write!(f, "Constant({s})"),
            VolFunction::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Market price of volatility risk.
#[derive(Clone)]
pub enum RiskPrice {
    Constant(f64),
    /// A bounded function; the bound is checked on a grid at construction.
    Custom(RealFn),
}

impl RiskPrice {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            RiskPrice::Constant(c) => *c,
            RiskPrice::Custom(g) => g(y),
        }
    }
}

impl fmt::Debug for RiskPrice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskPrice::Constant(c) => write!(f, "Constant({c})"),
            RiskPrice::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Primitives of the fast factor: `dY = [(m - Y)/eps - nu·sqrt(2/eps)·Gamma(Y)]dt
/// + nu·sqrt(2/eps) dB`, `dX = -f²/2 dt + f dW`, `d<W, B> = rho dt`.
#[derive(Debug, Clone)]
pub struct FullModelSpec {
    pub f: VolFunction,
    pub gamma: RiskPrice,
    pub gamma_cap: f64,
    pub m: f64,
    pub nu: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub y0: f64,
}

impl Default for FullModelSpec {
    fn default() -> Self {
        FullModelSpec {
            f: VolFunction::Exp,
            gamma: RiskPrice::Constant(0.2),
            gamma_cap: 1.0,
            m: 0.0,
            nu: 0.5,
            rho: -0.3,
            epsilon: 0.01,
            y0: 0.0,
        }
    }
}

impl FullModelSpec {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        require_finite("m", self.m)?;
        require_positive("nu", self.nu)?;
        require_positive("epsilon", self.epsilon)?;
        require_finite("y0", self.y0)?;
        require_positive("gamma_cap", self.gamma_cap)?;
        if !(self.rho >= -1.0 && self.rho <= 1.0) {
            return Err(invalid("rho", format!("must lie in [-1, 1], got {}", self.rho)));
        }
        let lo = self.m - 10.0 * self.nu;
        for i in 0..=400 {
            let y = lo + 20.0 * self.nu * i as f64 / 400.0;
            let f = self.f.eval(y);
            if !(f.is_finite() && f > 0.0) {
                return Err(invalid("f", format!("must be finite and > 0, got f({y}) = {f}")));
            }
            let g = self.gamma.eval(y);
            if !(g.abs() <= self.gamma_cap) {
                return Err(invalid("gamma", format!("|Gamma({y})| = {} exceeds the cap {}", g.abs(), self.gamma_cap)));
            }
        }
        Ok(())
    }

    fn density(&self, y: f64) -> f64 {
        let z = (y - self.m) / self.nu;
        (-0.5 * z * z).exp() / (self.nu * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// `Phi'` for the OU Poisson equation `nu² Phi'' + (m - y) Phi' = f² - sigma²`.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub sigma2: f64,
    /// Centering residual `∫(f² - sigma²) rho_N`.
    pub centering_residual: f64,
    spec: FullModelSpec,
    grid: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

const TABLE_HALF_WIDTH: f64 = 10.0;
const TABLE_POINTS: usize = 2_001;
const GH_NODES: usize = 120;

impl PoissonSolution {
    /// Integrating-factor solution, evaluated directly:
    /// `Phi'(y) = nu^-2 ∫_{-inf}^y (f²(u) - sigma²) rho_N(u)/rho_N(y) du`, using the
    /// mirrored tail integral above the mean so both ratios stay below one.
    pub fn phi_prime_direct(&self, y: f64) -> Result<f64> {
        let s = &self.spec;
        let nu2 = s.nu * s.nu;
        let dy = y - s.m;
        let g = |u: f64| {
            let du = u - s.m;
            (s.f.eval(u).powi(2) - self.sigma2) * ((dy * dy - du * du) / (2.0 * nu2)).exp()
        };
        let reach = 40.0 * s.nu;
        let v = if y <= s.m {
            integrate(g, y - reach, y, 0.0, 1e-13, 2_000)?.value
        } else {
            -integrate(g, y, y + reach, 0.0, 1e-13, 2_000)?.value
        };
        Ok(v / nu2)
    }

    /// Tabulated `Phi'` with cubic Hermite interpolation, falling back to the
    /// direct formula outside the table.
    pub fn phi_prime(&self, y: f64) -> f64 {
        let (a, b) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if !(y >= a && y <= b) {
            return self.phi_prime_direct(y).unwrap_or(f64::NAN);
        }
        let h = (b - a) / (self.grid.len() - 1) as f64;
        let i = (((y - a) / h) as usize).min(self.grid.len() - 2);
        let s = (y - self.grid[i]) / h;
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1
    }

    /// `<g Phi'>` under `N(m, nu²)`.
    pub fn average_with<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        GaussianRule::new(GH_NODES).expect(self.spec.m, self.spec.nu, |y| g(y) * self.phi_prime(y))
    }

    /// Independent check: RK4 on `nu² p' = f² - sigma² - (m - y)p`, from far
    /// below the mean upward and from far above downward. Both directions
    /// follow the decaying mode, so starting errors die out quickly.
    pub fn phi_prime_shooting(&self, ys: &[f64]) -> Vec<f64> {
        let s = &self.spec;
        let nu2 = s.nu * s.nu;
        let rhs = |y: f64, p: f64| (s.f.eval(y).powi(2) - self.sigma2 - (s.m - y) * p) / nu2;
        // Leading-order balance far from the mean.
        let start = |y: f64| (self.sigma2 - s.f.eval(y).powi(2)) / (y - s.m);
        let h = s.nu / 2_000.0;
        let shoot = |from: f64, to: f64| -> f64 {
            let n = ((to - from).abs() / h).ceil().max(1.0) as usize;
            let step = (to - from) / n as f64;
            let mut y = from;
            let mut p = start(from);
            for _ in 0..n {
                let k1 = rhs(y, p);
                let k2 = rhs(y + 0.5 * step, p + 0.5 * step * k1);
                let k3 = rhs(y + 0.5 * step, p + 0.5 * step * k2);
                let k4 = rhs(y + step, p + step * k3);
                p += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                y += step;
            }
            p
        };
        let far = 12.0 * s.nu;
        ys.iter()
            .map(|&y| if y <= s.m { shoot(s.m - far, y) } else { shoot(s.m + far, y) })
            .collect()
    }
}

fn solve_poisson(spec: &FullModelSpec) -> Result<PoissonSolution> {
    let rule = GaussianRule::new(GH_NODES);
    let sigma2 = rule.expect(spec.m, spec.nu, |y| spec.f.eval(y).powi(2));
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::QuadratureFailure(format!("<f²> = {sigma2}")));
    }
    let reach = 40.0 * spec.nu;
    let centering = integrate(
        |y: f64| (spec.f.eval(y).powi(2) - sigma2) * spec.density(y),
        spec.m - reach,
        spec.m + reach,
        1e-15,
        0.0,
        5_000,
    )?;
    let mut sol = PoissonSolution {
        sigma2,
        centering_residual: centering.value,
        spec: spec.clone(),
        grid: Vec::new(),
        values: Vec::new(),
        slopes: Vec::new(),
    };
    if centering.value.abs() > 1e-8 * sigma2.max(1.0) {
        return Err(Error::QuadratureFailure(format!(
            "centering residual {:.3e} exceeds 1e-8",
            centering.value
        )));
    }
    let lo = spec.m - TABLE_HALF_WIDTH * spec.nu;
    let hi = spec.m + TABLE_HALF_WIDTH * spec.nu;
    let grid = crate::impliedvol::linspace(lo, hi, TABLE_POINTS);
    let values = grid
        .par_iter()
        .map(|&y| sol.phi_prime_direct(y))
        .collect::<Result<Vec<f64>>>()?;
    let nu2 = spec.nu * spec.nu;
    let slopes = grid
        .iter()
        .zip(&values)
        .map(|(&y, &p)| (spec.f.eval(y).powi(2) - sigma2 - (spec.m - y) * p) / nu2)
        .collect();
    sol.grid = grid;
    sol.values = values;
    sol.slopes = slopes;
    Ok(sol)
}

/// Group parameters implied by the full model:
/// `sigma² = <f²>`, `V2^eps = sqrt(eps)(nu/√2)<Gamma Phi'>`,
/// `V3^eps = -sqrt(eps)(rho nu/√2)<f Phi'>`.
pub fn group_params_from_model(spec: &FullModelSpec) -> Result<(GroupParams, PoissonSolution)> {
    spec.validate()?;
    let sol = solve_poisson(spec)?;
    let scale = spec.epsilon.sqrt() * spec.nu / std::f64::consts::SQRT_2;
    let v2 = scale * sol.average_with(|y| spec.gamma.eval(y));
    let v3 = -scale * spec.rho * sol.average_with(|y| spec.f.eval(y));
    Ok((GroupParams::new(sol.sigma2.sqrt(), v2, v3)?, sol))
}

/// Largest allowed `dt / eps`.
pub const MAX_DT_FACTOR: f64 = 1.0 / 50.0;

/// Simulates the full model on the request's clock and returns the
/// discounted price estimate.
///
/// `Y` is advanced exactly as an OU process when `Gamma` is constant, jointly
/// with the increment of `B`. `X` uses left-point volatility on each step,
/// and the part of `W` independent of `B` is integrated out in closed form
/// (or by Gauss–Hermite for custom payoffs). Paths come in antithetic pairs;
/// `n_paths` counts individual paths and is rounded up to even.
pub fn simulate_full_model(
    spec: &FullModelSpec,
    req: &PricingRequest,
    n_paths: usize,
    dt_factor: f64,
    seed: u64,
) -> Result<McEstimate> {
    spec.validate()?;
    req.validate()?;
    check_paths(n_paths)?;
    if !(dt_factor > 0.0) {
        return Err(invalid("dt_factor", format!("must be > 0, got {dt_factor}")));
    }
    if dt_factor > MAX_DT_FACTOR {
        return Err(Error::StepTooCoarse(dt_factor));
    }
    let eps = spec.epsilon;
    let h_target = dt_factor * eps;
    let vol_y = spec.nu * (2.0 / eps).sqrt();
    let rho_perp = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    let pairs = n_paths.div_ceil(2);

    let run_pair = |i: u64| -> Result<f64> {
        let mut rng = path_rng(seed, i);
        let big_t = sample_clock(&req.clock, req.t, &mut rng)?;
        let steps = ((big_t / h_target).ceil() as usize).max(1);
        let h = big_t / steps as f64;
        let a = (-h / eps).exp();
        // Joint law of (ΔB, ∫ e^{-(h-s)/eps} dB_s) over one step.
        let c1 = eps * (1.0 - a) / h.sqrt();
        let c2 = (0.5 * eps * (1.0 - a * a) - c1 * c1).max(0.0).sqrt();
        let sqh = h.sqrt();
        let mut state = [(spec.y0, 0.0, 0.0); 2];
        for _ in 0..steps {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            for (j, sign) in [1.0, -1.0].into_iter().enumerate() {
                let (y, i1, i2) = &mut state[j];
                let f = spec.f.eval(*y);
                let db = sign * sqh * z1;
                *i1 += f * f * h;
                *i2 += f * db;
                let mean = match &spec.gamma {
                    RiskPrice::Constant(c) => spec.m - spec.nu * (2.0 * eps).sqrt() * c,
                    RiskPrice::Custom(g) => spec.m - spec.nu * (2.0 * eps).sqrt() * g(*y),
                };
                *y = mean + (*y - mean) * a + vol_y * sign * (c1 * z1 + c2 * z2);
            }
        }
        let value = |(_, i1, i2): (f64, f64, f64)| {
            let mean = req.x - 0.5 * i1 + spec.rho * i2;
            gaussian_payoff_value(&req.payoff, mean, rho_perp * i1.sqrt(), req.k, req.r, req.t)
        };
        Ok(0.5 * (value(state[0]) + value(state[1])))
    };
    let m = run_paths(pairs, run_pair)?;
    Ok(m.estimate(2 * pairs))
}
