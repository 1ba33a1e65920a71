//! Option prices `P0 + sqrt(eps)·P1` from the spectral representation,
//! integrated along a horizontal contour in the complex frequency plane.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, require_finite, require_positive, Error, Result};
use crate::quadrature::{integrate, QuadValue};
use crate::spectral::{
    call_coefficient, eigenfunction0, eigenvalue0, eigenvalue1_scaled, generic_coefficient, put_coefficient,
    Contour, GroupParams, DEFAULT_TRUNCATION, DEFAULT_X_WINDOW,
};
use crate::timechange::Clock;

/// A payoff `h(S)` given as a closure plus what the contour needs to know.
///
/// `h(s) - constant` must behave like `s^low` as `s -> 0` and like `s^high`
/// as `s -> inf`, with `low > high`. The constant is priced in closed form
/// and the remainder on a contour inside `(1/2 - low, 1/2 - high)`.
#[derive(Clone)]
pub struct CustomPayoff {
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub constant: f64,
    pub low: f64,
    pub high: f64,
}

impl CustomPayoff {
    pub fn new(h: impl Fn(f64) -> f64 + Send + Sync + 'static, constant: f64, low: f64, high: f64) -> Result<Self> {
        require_finite("constant", constant)?;
        if low.is_nan() || high.is_nan() || !(low > high) {
            return Err(invalid("growth", format!("need low > high, got low = {low}, high = {high}")));
        }
        Ok(CustomPayoff {
            h: Arc::new(h),
            constant,
            low,
            high,
        })
    }

    /// A bounded payoff that is differentiable at `s = 0`: splits off `h(0)`
    /// and prices the rest on the strip `(-1/2, 1/2)`.
    pub fn bounded_smooth(h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let h0 = h(0.0);
        Self::new(h, h0, 1.0, 0.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.h)(s)
    }

    /// Admissible range of `Im(omega)` for the remainder's coefficient.
    pub fn strip(&self) -> (f64, f64) {
        (0.5 - self.low, 0.5 - self.high)
    }
}

impl fmt::Debug for CustomPayoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPayoff")
            .field("constant", &self.constant)
            .field("low", &self.low)
            .field("high", &self.high)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum Payoff {
    Call,
    Put,
    Custom(CustomPayoff),
}

#[derive(Debug, Clone)]
pub struct PricingRequest {
    /// Log spot.
    pub x: f64,
    /// Log strike; ignored by custom payoffs.
    pub k: f64,
    pub r: f64,
    pub t: f64,
    pub params: GroupParams,
    pub clock: Clock,
    pub payoff: Payoff,
}

impl PricingRequest {
    pub fn call(x: f64, k: f64, r: f64, t: f64, params: GroupParams, clock: Clock) -> Self {
        PricingRequest {
            x,
            k,
            r,
            t,
            params,
            clock,
            payoff: Payoff::Call,
        }
    }

    pub fn with_payoff(mut self, payoff: Payoff) -> Self {
        self.payoff = payoff;
        self
    }

    pub fn validate(&self) -> Result<()> {
        require_finite("x", self.x)?;
        require_finite("k", self.k)?;
        require_positive("t", self.t)?;
        if !(self.r.is_finite() && self.r >= 0.0) {
            return Err(invalid("r", format!("must be finite and >= 0, got {}", self.r)));
        }
        Ok(())
    }

    fn spot(&self) -> f64 {
        self.x.exp()
    }

    /// `e^x - e^{k - rt}`
    fn parity_gap(&self) -> f64 {
        self.spot() - (self.k - self.r * self.t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceResult {
    pub p0: f64,
    /// `sqrt(eps)·P1`
    pub correction: f64,
    pub total: f64,
    /// Imaginary part of the contour integral; zero up to round-off.
    pub imag_residual: f64,
    pub contour_used: Contour,
    pub n_evals: usize,
    /// Quadrature error estimate plus the discarded tail.
    pub error_estimate: f64,
}

/// Picks `omega_i` so that the leading eigenvalue stays inside the clock's
/// admissible domain with a 10% margin along the whole contour.
pub fn choose_contour(params: &GroupParams, clock: &Clock) -> Result<Contour> {
    let bound = clock.admissible_real_lower_bound();
    if !(bound < 0.0) {
        return Err(Error::Unsupported(format!(
            "clock reports a nonnegative admissible bound {bound}"
        )));
    }
    let half_s2 = 0.5 * params.sigma2();
    let mut omega_i = -1.0;
    for _ in 0..200 {
        if half_s2 * (0.25 - omega_i * omega_i) > 0.9 * bound {
            return Contour::with_omega_i(omega_i);
        }
        omega_i = 0.5 * (omega_i - 0.5);
    }
    Err(Error::Unsupported(format!(
        "no admissible contour for sigma = {} and bound {bound}",
        params.sigma
    )))
}

/// Numeric coefficients are only good to about 1e-10, so a tighter contour
/// tolerance would just resolve quadrature noise.
pub const CUSTOM_TOLERANCE: f64 = 1e-9;

/// Same margin rule, for an arbitrary starting point inside `strip`; moves
/// toward the real axis (where the eigenvalue is positive) until admissible.
fn choose_contour_in_strip(params: &GroupParams, clock: &Clock, strip: (f64, f64)) -> Result<Contour> {
    let bound = clock.admissible_real_lower_bound();
    let half_s2 = 0.5 * params.sigma2();
    let (lo, hi) = strip;
    let target = 0.0f64.clamp(lo.max(-0.5), hi.min(0.5));
    let mut omega_i = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 0.5,
        (false, true) => hi - 0.5,
        (false, false) => 0.0,
    };
    for _ in 0..200 {
        let ok = half_s2 * (0.25 - omega_i * omega_i) > 0.9 * bound;
        if ok && omega_i > lo && omega_i < hi {
            return Contour::in_strip(omega_i, strip, DEFAULT_TRUNCATION, CUSTOM_TOLERANCE);
        }
        omega_i = 0.5 * (omega_i + target);
    }
    Err(Error::Unsupported(format!(
        "no admissible contour in strip ({lo}, {hi})"
    )))
}

/// `(order-0 integrand, correction integrand)`
#[derive(Debug, Clone, Copy, PartialEq)]
struct Pair(Complex64, Complex64);

impl Add for Pair {
    type Output = Pair;
    fn add(self, o: Pair) -> Pair {
        Pair(self.0 + o.0, self.1 + o.1)
    }
}

impl Sub for Pair {
    type Output = Pair;
    fn sub(self, o: Pair) -> Pair {
        Pair(self.0 - o.0, self.1 - o.1)
    }
}

impl Mul<f64> for Pair {
    type Output = Pair;
    fn mul(self, s: f64) -> Pair {
        Pair(self.0 * s, self.1 * s)
    }
}

impl QuadValue for Pair {
    fn zero() -> Self {
        Pair(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
    }
    fn magnitude(&self) -> f64 {
        self.0.norm() + self.1.norm()
    }
}

enum Coefficient<'a> {
    Call,
    Put,
    Numeric(&'a CustomPayoff),
}

/// Raw discounted contour integrals, atom included.
#[derive(Debug, Clone, Copy)]
struct ContourIntegral {
    p0: Complex64,
    correction: Complex64,
    abs_error: f64,
    n_evals: usize,
}

const TAIL_PANELS: usize = 5;
const SUBPANEL_CAP: usize = 4000;

fn integrate_contour(req: &PricingRequest, contour: &Contour, coef: Coefficient<'_>) -> Result<ContourIntegral> {
    let (t, r, x, k) = (req.t, req.r, req.x, req.k);
    let scale = req.spot();
    let atom = req.clock.atom_mass(t);
    let correct = req.params.has_correction();
    let zero = Complex64::new(0.0, 0.0);
    let first_error: RefCell<Option<Error>> = RefCell::new(None);
    let n_evals = Cell::new(0usize);

    let coefficient = |omega: Complex64| -> Result<Complex64> {
        match &coef {
            Coefficient::Call => call_coefficient(omega, t, k, r),
            Coefficient::Put => put_coefficient(omega, t, k, r),
            Coefficient::Numeric(p) => {
                let g = |s: f64| p.eval(s) - p.constant;
                generic_coefficient(&g, t, r, omega, DEFAULT_X_WINDOW)
            }
        }
    };
    let term = |omega: Complex64, c: Complex64| -> Result<Pair> {
        if c == zero {
            return Ok(Pair::zero());
        }
        let lam0 = eigenvalue0(omega, req.params.sigma);
        let (l, dl) = req.clock.laplace_pair(t, lam0)?;
        let psi = eigenfunction0(omega, x);
        let weighted = if correct {
            eigenvalue1_scaled(omega, &req.params) * dl
        } else {
            zero
        };
        Ok(Pair(c * (l - atom) * psi, c * weighted * psi))
    };

    let mut eval = |omega_r: f64| -> Pair {
        let right = contour.point(omega_r);
        let left = contour.point(-omega_r);
        let res = coefficient(right).and_then(|c_right| {
            // Real payoffs have conjugate-symmetric coefficients, so the
            // expensive numeric one is reused at the mirrored point.
            let c_left = match &coef {
                Coefficient::Numeric(_) => c_right.conj(),
                _ => coefficient(left)?,
            };
            Ok(term(right, c_right)? + term(left, c_left)?)
        });
        n_evals.set(n_evals.get() + 1);
        match res {
            Ok(v) if v.magnitude().is_finite() => v,
            Ok(_) => {
                first_error.borrow_mut().get_or_insert(Error::QuadratureFailure(format!(
                    "non-finite integrand at omega_r = {omega_r}"
                )));
                Pair::zero()
            }
            Err(e) => {
                first_error.borrow_mut().get_or_insert(e);
                Pair::zero()
            }
        }
    };

    let panel_tol = 0.02 * contour.tolerance * scale;
    let tail_tol = 0.01 * contour.tolerance * scale;
    let mut total = Pair::zero();
    let mut abs_error = 0.0;
    let mut quiet = 0usize;
    let mut tail = 0.0;
    let mut a = 0.0;
    let mut converged = false;
    while a < contour.truncation {
        let width = (0.2 * a).max(0.5);
        let b = (a + width).min(contour.truncation);
        let res = integrate(&mut eval, a, b, panel_tol, 0.0, SUBPANEL_CAP)?;
        if let Some(e) = first_error.borrow_mut().take() {
            return Err(e);
        }
        total = total + res.value;
        abs_error += res.abs_error;
        if res.abs_integral < tail_tol {
            quiet += 1;
            tail += res.abs_integral;
            if quiet >= TAIL_PANELS {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
            tail = 0.0;
        }
        a = b;
    }
    if !converged {
        return Err(Error::NonConvergent(format!(
            "contour integrand has not decayed below {tail_tol:.1e} by |omega_r| = {}",
            contour.truncation
        )));
    }
    let disc = (-r * t).exp();
    let atom_value = if atom > 0.0 {
        let s = (r * t + x).exp();
        let h = match &coef {
            Coefficient::Call => (s - k.exp()).max(0.0),
            Coefficient::Put => (k.exp() - s).max(0.0),
            Coefficient::Numeric(p) => p.eval(s) - p.constant,
        };
        atom * disc * h
    } else {
        0.0
    };
    Ok(ContourIntegral {
        p0: total.0 * disc + atom_value,
        correction: total.1 * disc,
        abs_error: (abs_error + tail) * disc,
        n_evals: n_evals.get(),
    })
}

fn check_contour_for_call(contour: &Contour) -> Result<()> {
    if contour.omega_i < -0.5 {
        Ok(())
    } else {
        Err(Error::ContourViolation {
            omega_i: contour.omega_i,
            strip: "(-inf, -1/2)",
        })
    }
}

fn raw(req: &PricingRequest, contour: &Contour) -> Result<ContourIntegral> {
    req.validate()?;
    match &req.payoff {
        Payoff::Call | Payoff::Put => {
            check_contour_for_call(contour)?;
            let mut v = integrate_contour(req, contour, Coefficient::Call)?;
            if matches!(req.payoff, Payoff::Put) {
                v.p0 -= req.parity_gap();
            }
            Ok(v)
        }
        Payoff::Custom(p) => {
            let (lo, hi) = p.strip();
            if !(contour.omega_i > lo && contour.omega_i < hi) {
                return Err(Error::ContourViolation {
                    omega_i: contour.omega_i,
                    strip: "payoff convergence strip",
                });
            }
            let mut v = integrate_contour(req, contour, Coefficient::Numeric(p))?;
            v.p0 += p.constant * (-req.r * req.t).exp();
            Ok(v)
        }
    }
}

/// Discounted `P0`; the imaginary part is the quadrature residual.
pub fn price_order0(req: &PricingRequest, contour: &Contour) -> Result<Complex64> {
    Ok(raw(req, contour)?.p0)
}

/// Discounted `sqrt(eps)·P1`; the imaginary part is the quadrature residual.
pub fn price_correction(req: &PricingRequest, contour: &Contour) -> Result<Complex64> {
    Ok(raw(req, contour)?.correction)
}

/// Default contour for a request.
pub fn contour_for(req: &PricingRequest) -> Result<Contour> {
    match &req.payoff {
        Payoff::Call | Payoff::Put => choose_contour(&req.params, &req.clock),
        Payoff::Custom(p) => choose_contour_in_strip(&req.params, &req.clock, p.strip()),
    }
}

pub fn price(req: &PricingRequest) -> Result<PriceResult> {
    let contour = contour_for(req)?;
    price_with_contour(req, &contour)
}

pub fn price_with_contour(req: &PricingRequest, contour: &Contour) -> Result<PriceResult> {
    Ok(assemble(raw(req, contour)?, *contour))
}

fn assemble(v: ContourIntegral, contour: Contour) -> PriceResult {
    PriceResult {
        p0: v.p0.re,
        correction: v.correction.re,
        total: v.p0.re + v.correction.re,
        imag_residual: v.p0.im + v.correction.im,
        contour_used: contour,
        n_evals: v.n_evals,
        error_estimate: v.abs_error,
    }
}

/// A put priced on its own contour in `Im(omega) > 1/2`, independent of
/// parity. Useful as a check on the call route.
pub fn price_put_direct(req: &PricingRequest) -> Result<PriceResult> {
    req.validate()?;
    let call = choose_contour(&req.params, &req.clock)?;
    let contour = Contour::in_strip(-call.omega_i, (0.5, f64::INFINITY), call.truncation, call.tolerance)?;
    let v = integrate_contour(req, &contour, Coefficient::Put)?;
    Ok(assemble(v, contour))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impliedvol::{bs_price, norm_cdf, norm_pdf};
    use crate::timechange::{CirClock, LevyExpCP};

    fn bs_params() -> GroupParams {
        GroupParams::uncorrected(0.34).unwrap()
    }

    fn fig_params() -> GroupParams {
        GroupParams::new(0.34, 0.03, -0.03).unwrap()
    }

    fn clocks() -> Vec<Clock> {
        vec![
            Clock::Identity,
            Clock::levy(LevyExpCP::new(0.25, 0.75, 0.10).unwrap()),
            Clock::Cir(CirClock::new(1.0, 1.0, 2.0, 2.0).unwrap()),
            Clock::composite(LevyExpCP::new(0.05, 0.5, 0.5).unwrap(), CirClock::new(2.0, 1.0, 4.0, 4.0).unwrap()),
        ]
    }

    /// `t·(V2 D2 + V3 D1 D2) C_BS` with `D1 = d/dx`, `D2 = d²/dx² - d/dx`.
    fn bs_correction(x: f64, k: f64, r: f64, t: f64, p: &GroupParams) -> f64 {
        let sd = p.sigma * t.sqrt();
        let d1 = (x - k + r * t) / sd + 0.5 * sd;
        let d2_price = x.exp() * norm_pdf(d1) / sd;
        t * d2_price * (p.v2_eps + p.v3_eps * (1.0 - d1 / sd))
    }

    #[test]
    fn black_scholes_atm_example() {
        let req = PricingRequest::call(0.0, 0.0, 0.0, 1.0, bs_params(), Clock::Identity);
        let p = price(&req).unwrap();
        assert!((p.total - (2.0 * norm_cdf(0.17) - 1.0)).abs() < 1e-12, "{p:?}");
        assert!((p.total - 0.134990).abs() < 1e-6);
        assert_eq!(p.correction, 0.0);
        assert!(p.imag_residual.abs() < 1e-14);
    }

    #[test]
    fn black_scholes_grid_with_rates() {
        for &r in &[0.0, 0.03] {
            for &t in &[0.1, 1.0, 3.0] {
                for &k in &[-0.4, 0.0, 0.3] {
                    let req = PricingRequest::call(0.1, k, r, t, bs_params(), Clock::Identity);
                    let p = price(&req).unwrap();
                    let bs = bs_price(0.1f64.exp(), k.exp(), r, t, 0.34);
                    assert!((p.total - bs).abs() < 1e-12, "r {r} t {t} k {k}: {} vs {bs}", p.total);
                }
            }
        }
    }

    #[test]
    fn correction_matches_black_scholes_greeks() {
        let params = fig_params();
        for &(x, k, r, t) in &[(0.0, 0.0, 0.0, 1.0), (0.0, 0.2, 0.02, 0.5), (0.3, -0.1, 0.0, 0.125)] {
            let req = PricingRequest::call(x, k, r, t, params, Clock::Identity);
            let p = price(&req).unwrap();
            let oracle = bs_correction(x, k, r, t, &params);
            assert!((p.correction - oracle).abs() < 1e-12, "{} vs {oracle}", p.correction);
        }
    }

    #[test]
    fn correction_against_fine_trapezoid() {
        // Independent fixed-step rule on the symmetric contour.
        let params = fig_params();
        let (x, k, r, t) = (0.0, 0.1, 0.01, 0.5);
        let req = PricingRequest::call(x, k, r, t, params, Clock::Identity);
        let p = price(&req).unwrap();
        let h = 0.005;
        let n = (200.0 / h) as usize;
        let mut sum = Complex64::new(0.0, 0.0);
        for i in 0..=n {
            let w = Complex64::new(-100.0 + i as f64 * h, -1.0);
            let lam0 = eigenvalue0(w, params.sigma);
            let lam1 = eigenvalue1_scaled(w, &params);
            let c = call_coefficient(w, t, k, r).unwrap();
            let weight = if i == 0 || i == n { 0.5 } else { 1.0 };
            sum += c * (-lam1 * t) * (-lam0 * t).exp() * eigenfunction0(w, x) * weight;
        }
        let oracle = (sum * h * (-r * t).exp()).re;
        assert!(((p.correction - oracle) / oracle).abs() < 1e-7, "{} vs {oracle}", p.correction);
    }

    #[test]
    fn zero_and_linear_correction() {
        let clock = Clock::levy(LevyExpCP::new(0.25, 0.75, 0.10).unwrap());
        let base = PricingRequest::call(0.0, 0.05, 0.0, 0.5, fig_params(), clock.clone());
        let one = price(&base).unwrap();
        let mut doubled = base.clone();
        doubled.params = GroupParams::new(0.34, 0.06, -0.06).unwrap();
        let two = price(&doubled).unwrap();
        assert!((two.correction - 2.0 * one.correction).abs() < 1e-12);
        assert!((two.p0 - one.p0).abs() < 1e-14);
        let mut none = base;
        none.params = bs_params();
        assert_eq!(price(&none).unwrap().correction, 0.0);
    }

    #[test]
    fn deep_in_the_money_limit() {
        for clock in clocks() {
            let req = PricingRequest::call(0.0, -10.0, 0.02, 0.5, fig_params(), clock);
            let p = price(&req).unwrap();
            let intrinsic = 1.0 - (-10.0f64 - 0.01).exp();
            assert!((p.total - intrinsic).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn parity_route_and_direct_put_agree() {
        for clock in clocks() {
            let call = PricingRequest::call(0.0, 0.15, 0.02, 0.5, fig_params(), clock);
            let put = call.clone().with_payoff(Payoff::Put);
            let c = price(&call).unwrap();
            let p = price(&put).unwrap();
            let direct = price_put_direct(&call).unwrap();
            let gap = 1.0 - (0.15f64 - 0.01).exp();
            assert!((c.total - p.total - gap).abs() < 1e-14);
            assert!((c.total - direct.total - gap).abs() < 1e-10, "{} vs {}", p.total, direct.total);
            assert!((c.correction - direct.correction).abs() < 1e-10);
        }
    }

    #[test]
    fn contour_independence() {
        for clock in clocks() {
            let req = PricingRequest::call(0.0, 0.1, 0.0, 0.25, fig_params(), clock);
            let a = price_with_contour(&req, &Contour::with_omega_i(-0.8).unwrap()).unwrap();
            let b = price_with_contour(&req, &Contour::with_omega_i(-1.2).unwrap()).unwrap();
            assert!(((a.total - b.total) / a.total).abs() < 1e-8, "{a:?} {b:?}");
            assert!(a.imag_residual.abs() < 1e-10 && b.imag_residual.abs() < 1e-10);
        }
    }

    #[test]
    fn choose_contour_examples() {
        let sigma034 = fig_params();
        let levy = Clock::levy(LevyExpCP::new(0.25, 0.75, 0.10).unwrap());
        assert_eq!(choose_contour(&sigma034, &levy).unwrap().omega_i, -1.0);
        assert_eq!(choose_contour(&sigma034, &Clock::Identity).unwrap().omega_i, -1.0);
        let big = GroupParams::uncorrected(2.0).unwrap();
        let c = choose_contour(&big, &levy).unwrap();
        assert!(c.omega_i < -0.5 && c.omega_i > -1.0);
        assert!(2.0 * (c.omega_i * c.omega_i - 0.25) < 0.09);
    }

    #[test]
    fn driftless_clock_prices_through_the_atom() {
        // gamma = 0 leaves mass exp(-alpha t) at T = 0.
        let clock = Clock::levy(LevyExpCP::new(0.0, 0.8, 2.0).unwrap());
        let req = PricingRequest::call(0.0, -0.1, 0.0, 0.5, bs_params(), clock.clone());
        // The atom-free remainder decays like omega^-4: too slow for the default cap.
        assert!(matches!(price(&req), Err(Error::NonConvergent(_))));
        let wide = Contour::new(-1.0, 1e6, crate::spectral::DEFAULT_TOLERANCE).unwrap();
        let p = price_with_contour(&req, &wide).unwrap();
        // Mixture oracle: T = 0 w.p. e^{-0.4}, else T ~ Gamma(N, 2) with N ~ Poisson(0.4) | N >= 1.
        let mut oracle = (-0.4f64).exp() * (1.0 - (-0.1f64).exp());
        let mut pois = (-0.4f64).exp();
        for n in 1..40 {
            pois *= 0.4 / n as f64;
            // E[C_BS(T)] over T ~ Gamma(n, rate 2) by Gauss–Laguerre-free quadrature.
            let g = crate::quadrature::integrate(
                |s: f64| {
                    let dens = (n as f64 * 2f64.ln() + (n as f64 - 1.0) * s.ln() - 2.0 * s - ln_fact(n - 1)).exp();
                    dens * bs_price(1.0, (-0.1f64).exp(), 0.0, s, 0.34)
                },
                0.0,
                80.0,
                1e-14,
                0.0,
                2000,
            )
            .unwrap();
            oracle += pois * g.value;
        }
        assert!((p.total - oracle).abs() < 1e-9, "{} vs {oracle}", p.total);
    }

    fn ln_fact(n: usize) -> f64 {
        (1..=n).map(|i| (i as f64).ln()).sum()
    }

    #[test]
    fn custom_payoff_matches_call_and_lognormal_average() {
        // A smooth bounded payoff priced against a Gaussian average of the payoff.
        let h = |s: f64| 0.5 * (5.0 * (s - 1.0)).tanh() + 0.5;
        let payoff = CustomPayoff::bounded_smooth(h).unwrap();
        let req = PricingRequest::call(0.05, 0.0, 0.01, 0.5, bs_params(), Clock::Identity)
            .with_payoff(Payoff::Custom(payoff));
        let p = price(&req).unwrap();
        let sd = 0.34 * 0.5f64.sqrt();
        let rule = crate::quadrature::GaussianRule::new(120);
        let oracle = (-0.005f64).exp() * rule.expect(0.05 + 0.005 - 0.5 * sd * sd, sd, |y| h(y.exp()));
        assert!((p.total - oracle).abs() < 1e-8, "{} vs {oracle}", p.total);
        assert!(p.imag_residual.abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_requests() {
        let mut req = PricingRequest::call(0.0, 0.0, 0.0, 0.0, bs_params(), Clock::Identity);
        assert!(matches!(price(&req), Err(Error::InvalidParameter { name: "t", .. })));
        req.t = 1.0;
        req.r = -0.01;
        assert!(matches!(price(&req), Err(Error::InvalidParameter { name: "r", .. })));
        req.r = 0.0;
        let bad = Contour::in_strip(0.0, (-0.5, 0.5), 1e3, 1e-12).unwrap();
        assert!(matches!(price_order0(&req, &bad), Err(Error::ContourViolation { .. })));
    }
}
