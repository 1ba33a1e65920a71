//! Leading-order eigen system of the averaged pricing operator, the scaled
//! first-order eigenvalue correction, and payoff coefficients on a shifted
//! contour `omega = omega_r + i·omega_i`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, require_finite, require_positive, Error, Result};
use crate::quadrature::integrate_split;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `1 / sqrt(2π)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// The observable triple `(sigma, V2^eps, V3^eps)`. The time-scale parameter
/// never appears on its own: the correction terms are already scaled by it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupParams {
    pub sigma: f64,
    pub v2_eps: f64,
    pub v3_eps: f64,
}

impl GroupParams {
    pub fn new(sigma: f64, v2_eps: f64, v3_eps: f64) -> Result<Self> {
        require_positive("sigma", sigma)?;
        require_finite("v2_eps", v2_eps)?;
        require_finite("v3_eps", v3_eps)?;
        Ok(GroupParams {
            sigma,
            v2_eps,
            v3_eps,
        })
    }

    /// Same volatility, no correction.
    pub fn uncorrected(sigma: f64) -> Result<Self> {
        Self::new(sigma, 0.0, 0.0)
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn has_correction(&self) -> bool {
        self.v2_eps != 0.0 || self.v3_eps != 0.0
    }
}

/// Integration contour: fixed imaginary part, half-width cap on the real
/// part, and the absolute quadrature tolerance (in units of the spot).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contour {
    pub omega_i: f64,
    pub truncation: f64,
    pub tolerance: f64,
}

pub const DEFAULT_OMEGA_I: f64 = -1.0;
pub const DEFAULT_TRUNCATION: f64 = 1.0e3;
pub const DEFAULT_TOLERANCE: f64 = 1.0e-13;

impl Contour {
    /// A call contour; requires `omega_i < -1/2`.
    pub fn new(omega_i: f64, truncation: f64, tolerance: f64) -> Result<Self> {
        if !(omega_i < -0.5) {
            return Err(Error::ContourViolation {
                omega_i,
                strip: "(-inf, -1/2)",
            });
        }
        Self::unchecked(omega_i, truncation, tolerance)
    }

    /// A contour inside a payoff-specific convergence strip `(lo, hi)`.
    pub fn in_strip(
        omega_i: f64,
        strip: (f64, f64),
        truncation: f64,
        tolerance: f64,
    ) -> Result<Self> {
        if !(omega_i > strip.0 && omega_i < strip.1) {
            return Err(Error::ContourViolation {
                omega_i,
                strip: "payoff convergence strip",
            });
        }
        Self::unchecked(omega_i, truncation, tolerance)
    }

    fn unchecked(omega_i: f64, truncation: f64, tolerance: f64) -> Result<Self> {
        require_finite("omega_i", omega_i)?;
        require_positive("truncation", truncation)?;
        require_positive("tolerance", tolerance)?;
        Ok(Contour {
            omega_i,
            truncation,
            tolerance,
        })
    }

    pub fn with_omega_i(omega_i: f64) -> Result<Self> {
        Self::new(omega_i, DEFAULT_TRUNCATION, DEFAULT_TOLERANCE)
    }

    pub fn point(&self, omega_r: f64) -> Complex64 {
        Complex64::new(omega_r, self.omega_i)
    }
}

impl Default for Contour {
    fn default() -> Self {
        Contour {
            omega_i: DEFAULT_OMEGA_I,
            truncation: DEFAULT_TRUNCATION,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Leading eigenvalue and scaled correction at one spectral point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenData {
    pub lambda0: Complex64,
    pub lambda1_scaled: Complex64,
}

impl EigenData {
    pub fn at(omega: Complex64, params: &GroupParams) -> Self {
        EigenData {
            lambda0: eigenvalue0(omega, params.sigma),
            lambda1_scaled: eigenvalue1_scaled(omega, params),
        }
    }
}

/// `(sigma²/2)(omega² + 1/4)`
pub fn eigenvalue0(omega: Complex64, sigma: f64) -> Complex64 {
    0.5 * sigma * sigma * (omega * omega + 0.25)
}

/// Smallest leading eigenvalue over the real spectrum, `sigma²/8`.
pub fn eigenvalue0_min(sigma: f64) -> f64 {
    sigma * sigma / 8.0
}

/// `sqrt(eps)·Lambda1 = -V3^eps (a³ - a²) - V2^eps (a² - a)` with `a = i·omega + 1/2`.
pub fn eigenvalue1_scaled(omega: Complex64, params: &GroupParams) -> Complex64 {
    let a = I * omega + 0.5;
    let a2 = a * a;
    let a3 = a2 * a;
    -params.v3_eps * (a3 - a2) - params.v2_eps * (a2 - a)
}

/// `exp((i·omega + 1/2)·x) / sqrt(2π)`
pub fn eigenfunction0(omega: Complex64, x: f64) -> Complex64 {
    ((I * omega + 0.5) * x).exp() * INV_SQRT_2PI
}

fn check_pole(omega: Complex64) -> Result<Complex64> {
    let denom = 1.0 + 4.0 * omega * omega;
    if denom.norm() < 1e-300 {
        return Err(Error::PoleHit {
            re: omega.re,
            im: omega.im,
        });
    }
    Ok(denom)
}

fn call_put_formula(omega: Complex64, t: f64, k: f64, r: f64, denom: Complex64) -> Complex64 {
    // ∫ e^{(-iω-1/2)y} (e^{rt+y} - e^k)^± dy = e^{(1/2-iω)k + (iω+1/2)rt} / (a(a+1)),
    // a = -iω - 1/2, a(a+1) = -(1 + 4ω²)/4.
    let growth = k * (0.5 - I * omega) + (I * omega + 0.5) * (r * t);
    -4.0 * growth.exp() / (denom * (2.0 * PI).sqrt())
}

/// Closed-form coefficient of a call with log-strike `k`, valid for
/// `Im(omega) < -1/2` where the defining integral converges.
pub fn call_coefficient(omega: Complex64, t: f64, k: f64, r: f64) -> Result<Complex64> {
    if !(omega.im < -0.5) {
        return Err(Error::ContourViolation {
            omega_i: omega.im,
            strip: "(-inf, -1/2)",
        });
    }
    let denom = check_pole(omega)?;
    Ok(call_put_formula(omega, t, k, r, denom))
}

/// Put coefficient. It is the same analytic expression as the call
/// coefficient, continued into the strip `Im(omega) > 1/2`.
pub fn put_coefficient(omega: Complex64, t: f64, k: f64, r: f64) -> Result<Complex64> {
    if !(omega.im > 0.5) {
        return Err(Error::ContourViolation {
            omega_i: omega.im,
            strip: "(1/2, inf)",
        });
    }
    let denom = check_pole(omega)?;
    Ok(call_put_formula(omega, t, k, r, denom))
}

pub const COEFFICIENT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_X_WINDOW: (f64, f64) = (-40.0, 40.0);
const EDGE_TOLERANCE: f64 = 1e-12;
const MAX_WINDOW: f64 = 700.0;

/// Numerical payoff coefficient
/// `∫ exp((-i·omega + 1/2)·y) h(e^{rt+y}) e^{-y} dy / sqrt(2π)` over a window that
/// is widened geometrically until the integrand is negligible at both edges.
pub fn generic_coefficient<H>(
    payoff: &H,
    t: f64,
    r: f64,
    omega: Complex64,
    x_window: (f64, f64),
) -> Result<Complex64>
where
    H: Fn(f64) -> f64 + ?Sized,
{
    let (mut lo, mut hi) = x_window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(invalid(
            "x_window",
            format!("[{lo}, {hi}] is not an interval"),
        ));
    }
    let drift = r * t;
    let exponent = -I * omega - 0.5;
    let integrand = |y: f64| -> Complex64 {
        let h = payoff((drift + y).exp());
        if h == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            (exponent * y).exp() * (h * INV_SQRT_2PI)
        }
    };
    loop {
        let edge = integrand(lo).norm().max(integrand(hi).norm());
        if edge.is_finite() && edge < EDGE_TOLERANCE {
            break;
        }
        if lo <= -MAX_WINDOW && hi >= MAX_WINDOW {
            return Err(Error::NonConvergent(format!(
                "coefficient integrand still {edge:.3e} at window edges [{lo}, {hi}]"
            )));
        }
        lo = (lo * 1.5).max(-MAX_WINDOW);
        hi = (hi * 1.5).min(MAX_WINDOW);
    }
    // About one panel per oscillation of exp(-i·omega_r·y).
    let panels = (((hi - lo) * (omega.re.abs() + 1.0)) / (2.0 * PI)).ceil() as usize;
    let mut f = integrand;
    let res = integrate_split(
        &mut f,
        lo,
        hi,
        panels.clamp(8, 20_000),
        COEFFICIENT_TOLERANCE,
        0.0,
        100_000,
    )?;
    Ok(res.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn eigenvalue0_examples() {
        assert!((eigenvalue0(c(0.0, 0.0), 0.34).re - 0.01445).abs() < 1e-15);
        assert!(eigenvalue0(c(0.0, 0.5), 0.7).norm() < 1e-16);
        assert!(close(
            eigenvalue0(c(2.0, -1.0), 0.34),
            c(0.187850, -0.231200),
            1e-12
        ));
        assert_eq!(eigenvalue0_min(0.34), eigenvalue0(c(0.0, 0.0), 0.34).re);
    }

    #[test]
    fn eigenvalue1_examples() {
        let zero = GroupParams::uncorrected(0.34).unwrap();
        assert_eq!(eigenvalue1_scaled(c(1.3, -0.7), &zero), c(0.0, 0.0));
        let p = GroupParams::new(0.34, 0.03, -0.03).unwrap();
        assert!(eigenvalue1_scaled(c(0.0, 0.5), &p).norm() < 1e-17);
        assert!(close(
            eigenvalue1_scaled(c(0.0, 0.0), &p),
            c(0.00375, 0.0),
            1e-15
        ));
    }

    #[test]
    fn eigenfunction0_examples() {
        assert!((eigenfunction0(c(0.0, 0.0), 0.0).re - 0.398942).abs() < 1e-6);
        assert!((eigenfunction0(c(0.0, -1.0), 1.0).re - 1.787935).abs() < 1e-6);
        assert!((eigenfunction0(c(1.0, 0.0), 0.0).norm() - 0.398942).abs() < 1e-6);
    }

    #[test]
    fn call_coefficient_closed_forms() {
        let v = call_coefficient(c(0.0, -1.0), 1.0, 0.0, 0.0).unwrap();
        assert!(close(v, c(4.0 / (3.0 * (2.0 * PI).sqrt()), 0.0), 1e-15));
        assert!((v.re - 0.531923).abs() < 1e-6);
        // Against direct integration of the defining inner product:
        // ∫_{-r}^∞ e^{-3y/2}(e^{r+y} - 1) dy = (4/3)e^{3r/2}.
        let v = call_coefficient(c(0.0, -1.0), 1.0, 0.0, 0.05).unwrap();
        let expected = 4.0 / 3.0 * (0.075f64).exp() / (2.0 * PI).sqrt();
        assert!(close(v, c(expected, 0.0), 1e-15));
        assert!((v.re - 0.573351).abs() < 1e-6);
    }

    #[test]
    fn call_coefficient_matches_quadrature_with_rates() {
        let (t, r, k): (f64, f64, f64) = (0.7, 0.04, 0.2);
        let call = |s: f64| (s - k.exp()).max(0.0);
        for &w in &[c(0.0, -1.0), c(1.5, -0.8), c(-3.0, -1.3)] {
            let exact = call_coefficient(w, t, k, r).unwrap();
            let numeric = generic_coefficient(&call, t, r, w, DEFAULT_X_WINDOW).unwrap();
            assert!(close(exact, numeric, 1e-8), "{w}: {exact} vs {numeric}");
        }
    }

    #[test]
    fn put_coefficient_matches_quadrature() {
        let (t, r, k): (f64, f64, f64) = (0.7, 0.04, 0.2);
        let put = |s: f64| (k.exp() - s).max(0.0);
        for &w in &[c(0.0, 1.0), c(2.5, 0.9)] {
            let exact = put_coefficient(w, t, k, r).unwrap();
            let numeric = generic_coefficient(&put, t, r, w, DEFAULT_X_WINDOW).unwrap();
            assert!(close(exact, numeric, 1e-8), "{w}: {exact} vs {numeric}");
        }
    }

    #[test]
    fn call_coefficient_rejects_bad_contours() {
        assert!(matches!(
            call_coefficient(c(0.3, -0.5), 1.0, 0.0, 0.0),
            Err(Error::ContourViolation { .. })
        ));
        assert!(matches!(
            call_coefficient(c(0.3, 0.0), 1.0, 0.0, 0.0),
            Err(Error::ContourViolation { .. })
        ));
        assert!(matches!(
            put_coefficient(c(0.3, -1.0), 1.0, 0.0, 0.0),
            Err(Error::ContourViolation { .. })
        ));
    }

    #[test]
    fn contour_invariants() {
        assert!(Contour::new(-0.5, 1e3, 1e-12).is_err());
        assert!(Contour::new(-0.6, 0.0, 1e-12).is_err());
        assert!(Contour::new(-0.6, 1e3, -1.0).is_err());
        assert!(Contour::new(-0.6, 1e3, 1e-12).is_ok());
        assert!(Contour::in_strip(0.0, (-0.5, 0.5), 1e3, 1e-12).is_ok());
        assert!(Contour::in_strip(0.7, (-0.5, 0.5), 1e3, 1e-12).is_err());
        assert_eq!(Contour::default().omega_i, -1.0);
    }

    #[test]
    fn group_params_invariants() {
        assert!(GroupParams::new(0.0, 0.0, 0.0).is_err());
        assert!(GroupParams::new(0.2, f64::NAN, 0.0).is_err());
        assert!(GroupParams::new(0.2, 0.03, -0.03).unwrap().has_correction());
    }

    #[test]
    fn generic_coefficient_matches_call_formula() {
        let call = |s: f64| (s - 1.0).max(0.0);
        let v = generic_coefficient(&call, 1.0, 0.0, c(0.0, -1.0), DEFAULT_X_WINDOW).unwrap();
        let exact = call_coefficient(c(0.0, -1.0), 1.0, 0.0, 0.0).unwrap();
        assert!(close(v, exact, 1e-8), "{v} vs {exact}");
    }

    #[test]
    fn generic_coefficient_zero_and_digital() {
        let zero = |_: f64| 0.0;
        let v = generic_coefficient(&zero, 1.0, 0.0, c(0.4, -1.0), DEFAULT_X_WINDOW).unwrap();
        assert_eq!(v, c(0.0, 0.0));
        let digital = |s: f64| if s > 1.0 { 1.0 } else { 0.0 };
        let v = generic_coefficient(&digital, 1.0, 0.0, c(0.0, -1.0), DEFAULT_X_WINDOW).unwrap();
        assert!(
            close(v, c(2.0 / (3.0 * (2.0 * PI).sqrt()), 0.0), 1e-8),
            "{v}"
        );
    }

    #[test]
    fn generic_coefficient_reports_divergence() {
        // A call on the real axis grows like e^{y/2} and never settles.
        let call = |s: f64| (s - 1.0).max(0.0);
        let r = generic_coefficient(&call, 1.0, 0.0, c(0.0, 0.0), DEFAULT_X_WINDOW);
        assert!(matches!(r, Err(Error::NonConvergent(_))));
    }
}
