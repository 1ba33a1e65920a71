//! Adaptive Gauss–Kronrod quadrature over real intervals for real, complex or
//! vector-valued integrands, plus Gauss–Hermite rules for Gaussian averages.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Values that can be integrated: closed under addition and real scaling,
/// with a magnitude used for error control.
pub trait QuadValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_351_996,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// Result of a single Kronrod panel or an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult<T> {
    pub value: T,
    pub abs_error: f64,
    /// Kronrod estimate of the integral of |f|.
    pub abs_integral: f64,
    pub n_evals: usize,
}

/// One 21-point Gauss–Kronrod panel on `[a, b]`.
pub fn gk21<T, F>(f: &mut F, a: f64, b: f64) -> QuadResult<T>
where
    T: QuadValue,
    F: FnMut(f64) -> T,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[10];
    let mut gauss = T::zero();
    let mut abs_int = fc.magnitude() * WGK[10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        let sum = f1 + f2;
        kronrod = kronrod + sum * WGK[j];
        abs_int += WGK[j] * (f1.magnitude() + f2.magnitude());
        if j % 2 == 1 {
            gauss = gauss + sum * WG[j / 2];
        }
    }
    let width = half.abs();
    QuadResult {
        value: kronrod * half,
        abs_error: (kronrod - gauss).magnitude() * width,
        abs_integral: abs_int * width,
        n_evals: 21,
    }
}

/// Globally adaptive bisection driven by the panel with the largest error
/// estimate. Stops once the summed error is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<T, F>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<QuadResult<T>>
where
    T: QuadValue,
    F: FnMut(f64) -> T,
{
    integrate_split(&mut f, a, b, 1, abs_tol, rel_tol, max_panels)
}

/// As [`integrate`], starting from `initial` equal panels. Useful for
/// oscillatory integrands where a single panel would alias.
pub fn integrate_split<T, F>(
    f: &mut F,
    a: f64,
    b: f64,
    initial: usize,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<QuadResult<T>>
where
    T: QuadValue,
    F: FnMut(f64) -> T,
{
    if a == b {
        return Ok(QuadResult {
            value: T::zero(),
            abs_error: 0.0,
            abs_integral: 0.0,
            n_evals: 0,
        });
    }
    let initial = initial.max(1);
    let step = (b - a) / initial as f64;
    let mut panels = Vec::with_capacity(initial.max(16));
    let mut n_evals = 0;
    for i in 0..initial {
        let lo = a + step * i as f64;
        let hi = if i + 1 == initial { b } else { lo + step };
        let r = gk21(f, lo, hi);
        n_evals += r.n_evals;
        panels.push((lo, hi, r));
    }
    let max_panels = max_panels.max(initial);
    loop {
        let (value, err, abs_int) = panels
            .iter()
            .fold((T::zero(), 0.0, 0.0), |(v, e, s), (_, _, r)| {
                (v + r.value, e + r.abs_error, s + r.abs_integral)
            });
        if !value.magnitude().is_finite() {
            return Err(Error::QuadratureFailure(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        let target = abs_tol.max(rel_tol * value.magnitude());
        // Errors near round-off of the absolute integral cannot be reduced.
        if err <= target || err <= 50.0 * f64::EPSILON * abs_int {
            return Ok(QuadResult {
                value,
                abs_error: err,
                abs_integral: abs_int,
                n_evals,
            });
        }
        if panels.len() >= max_panels {
            return Err(Error::NonConvergent(format!(
                "error estimate {err:.3e} above target {target:.3e} after {max_panels} panels on [{a}, {b}]"
            )));
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.abs_error.total_cmp(&y.1 .2.abs_error))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let left = gk21(f, lo, mid);
        let right = gk21(f, mid, hi);
        n_evals += left.n_evals + right.n_evals;
        panels.push((lo, mid, left));
        panels.push((mid, hi, right));
    }
}

/// Gauss–Hermite nodes and weights for the weight `exp(-x²)` on the real line.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Hermite rule needs at least one node");
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// A Gauss–Hermite rule rescaled to expectations under `N(mean, sd²)`.
#[derive(Debug, Clone)]
pub struct GaussianRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianRule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_hermite(n);
        let norm = std::f64::consts::PI.sqrt();
        GaussianRule {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v / norm).collect(),
        }
    }

    /// `E[g(mean + sd·Z)]` for standard normal `Z`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mean: f64, sd: f64, mut g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * g(mean + sd * z))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk21_is_exact_for_low_degree_polynomials() {
        let r: QuadResult<f64> = gk21(&mut |x: f64| 3.0 * x * x + 2.0 * x + 1.0, 0.0, 2.0);
        assert!((r.value - 14.0).abs() < 1e-13);
    }

    #[test]
    fn adaptive_handles_a_peaked_integrand() {
        let r = integrate(|x: f64| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10, 0.0, 500).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((r.value - exact).abs() < 1e-8, "{} vs {}", r.value, exact);
    }

    #[test]
    fn complex_oscillatory_integral() {
        // ∫_0^π e^{ix} dx = 2i
        let r = integrate(
            |x: f64| Complex64::new(0.0, x).exp(),
            0.0,
            std::f64::consts::PI,
            1e-13,
            0.0,
            100,
        )
        .unwrap();
        assert!((r.value - Complex64::new(0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn panel_cap_reports_non_convergence() {
        let r = integrate(|x: f64| x.sqrt().recip(), 0.0, 1.0, 1e-14, 0.0, 4);
        assert!(matches!(r, Err(Error::NonConvergent(_))));
    }

    #[test]
    fn gauss_hermite_moments() {
        let rule = GaussianRule::new(40);
        assert!((rule.expect(0.0, 1.0, |_| 1.0) - 1.0).abs() < 1e-14);
        assert!((rule.expect(0.0, 1.0, |z| z * z) - 1.0).abs() < 1e-13);
        assert!((rule.expect(1.0, 2.0, |z| z) - 1.0).abs() < 1e-13);
        // E[e^{2Y}], Y ~ N(0, 0.25) = e^{0.5}
        assert!((rule.expect(0.0, 0.5, |y| (2.0 * y).exp()) - 0.5f64.exp()).abs() < 1e-13);
    }
}
