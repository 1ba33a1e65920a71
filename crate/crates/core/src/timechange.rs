//! Random business clocks and their complex-argument Laplace transforms
//! `E_z[exp(-lambda·T_t)]`, with the lambda-derivative used by the first-order
//! correction and the real lower bound of each admissible domain.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, require_positive, Error, Result};

/// A Lévy exponent `phi` with `E[exp(-lambda·T_t)] = exp(-phi(lambda)·t)`.
///
/// Implementors supply the exponent and its derivative analytically; the
/// pricing hot path never differentiates numerically.
pub trait LevyExponent: Send + Sync {
    fn exponent(&self, lam: Complex64) -> Complex64;
    fn derivative(&self, lam: Complex64) -> Complex64;
    /// Infimum of the real admissible set; must be `<= 0`.
    fn lower_bound(&self) -> f64;
    /// `phi(+inf)` when the subordinator is driftless with finite jump
    /// activity, i.e. the clock has an atom at zero of mass `exp(-rate·t)`.
    fn atom_rate(&self) -> Option<f64> {
        None
    }
}

/// Drift plus compound Poisson jumps with exponential sizes:
/// `phi(lambda) = gamma·lambda + alpha·lambda / (lambda + eta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevyExpCP {
    pub drift: f64,
    pub intensity: f64,
    pub jump_rate: f64,
}

impl LevyExpCP {
    pub fn new(drift: f64, intensity: f64, jump_rate: f64) -> Result<Self> {
        if !(drift.is_finite() && drift >= 0.0) {
            return Err(invalid(
                "drift",
                format!("must be finite and >= 0, got {drift}"),
            ));
        }
        require_positive("intensity", intensity)?;
        require_positive("jump_rate", jump_rate)?;
        Ok(LevyExpCP {
            drift,
            intensity,
            jump_rate,
        })
    }

    fn check(&self, lam: Complex64) -> Result<()> {
        check_domain(lam, -self.jump_rate)
    }

    /// `phi(lambda)`; rejects `Re(lambda) <= -eta`.
    pub fn levy_exponent(&self, lam: Complex64) -> Result<Complex64> {
        self.check(lam)?;
        Ok(self.exponent(lam))
    }

    /// `phi'(lambda) = gamma + alpha·eta / (lambda + eta)²`.
    pub fn levy_exponent_derivative(&self, lam: Complex64) -> Result<Complex64> {
        self.check(lam)?;
        Ok(self.derivative(lam))
    }

    pub fn mean_rate(&self) -> f64 {
        self.drift + self.intensity / self.jump_rate
    }
}

impl LevyExponent for LevyExpCP {
    fn exponent(&self, lam: Complex64) -> Complex64 {
        self.drift * lam + self.intensity * lam / (lam + self.jump_rate)
    }

    fn derivative(&self, lam: Complex64) -> Complex64 {
        let d = lam + self.jump_rate;
        self.drift + self.intensity * self.jump_rate / (d * d)
    }

    fn lower_bound(&self) -> f64 {
        -self.jump_rate
    }

    fn atom_rate(&self) -> Option<f64> {
        (self.drift == 0.0).then_some(self.intensity)
    }
}

/// The subordinator driving a Lévy clock.
#[derive(Clone)]
pub enum Subordinator {
    CompoundPoissonExp(LevyExpCP),
    Custom(Arc<dyn LevyExponent>),
}

impl fmt::Debug for Subordinator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subordinator::CompoundPoissonExp(p) => {
                f.debug_tuple("CompoundPoissonExp").field(p).finish()
            }
            Subordinator::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Subordinator {
    fn inner(&self) -> &dyn LevyExponent {
        match self {
            Subordinator::CompoundPoissonExp(p) => p,
            Subordinator::Custom(p) => p.as_ref(),
        }
    }

    pub fn exponent(&self, lam: Complex64) -> Result<Complex64> {
        check_domain(lam, self.lower_bound())?;
        Ok(self.inner().exponent(lam))
    }

    pub fn derivative(&self, lam: Complex64) -> Result<Complex64> {
        check_domain(lam, self.lower_bound())?;
        Ok(self.inner().derivative(lam))
    }

    pub fn lower_bound(&self) -> f64 {
        self.inner().lower_bound()
    }

    pub fn atom_rate(&self) -> Option<f64> {
        self.inner().atom_rate()
    }
}

impl From<LevyExpCP> for Subordinator {
    fn from(p: LevyExpCP) -> Self {
        Subordinator::CompoundPoissonExp(p)
    }
}

/// Integrated CIR clock `T_t = ∫ Z_s ds` with
/// `dZ = kappa (theta - Z) dt + sqrt(vol2·Z) dW`, `Z_0 = z0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirClock {
    pub kappa: f64,
    pub theta: f64,
    pub vol2: f64,
    pub z0: f64,
}

impl CirClock {
    pub fn new(kappa: f64, theta: f64, vol2: f64, z0: f64) -> Result<Self> {
        require_positive("kappa", kappa)?;
        require_positive("theta", theta)?;
        require_positive("vol2", vol2)?;
        require_positive("z0", z0)?;
        // Feller condition, with a little slack for presets sitting on the boundary.
        if 2.0 * kappa * theta < vol2 * (1.0 - 1e-12) {
            return Err(invalid(
                "vol2",
                format!(
                    "Feller condition 2·kappa·theta >= vol2 violated ({} < {vol2})",
                    2.0 * kappa * theta
                ),
            ));
        }
        Ok(CirClock {
            kappa,
            theta,
            vol2,
            z0,
        })
    }

    pub fn lower_bound(&self) -> f64 {
        -self.kappa * self.kappa / (2.0 * self.vol2)
    }

    /// `E[T_t] = theta·t + (z0 - theta)(1 - e^{-kappa t}) / kappa`.
    pub fn mean(&self, t: f64) -> f64 {
        self.theta * t + (self.z0 - self.theta) * (1.0 - (-self.kappa * t).exp()) / self.kappa
    }

    /// Log of the Laplace transform and its lambda-derivative.
    ///
    /// Uses `exp(-gamma_bar·t)` only, so large `gamma_bar·t` cannot overflow.
    /// Every logarithm has its argument in the open right half-plane, which
    /// keeps the principal branch continuous along any admissible path.
    fn log_laplace(&self, t: f64, lam: Complex64) -> (Complex64, Complex64) {
        let (kappa, vol2) = (self.kappa, self.vol2);
        let gamma_bar = (kappa * kappa + 2.0 * vol2 * lam).sqrt();
        let dgamma = vol2 / gamma_bar;
        let e = (-gamma_bar * t).exp();
        let plus = gamma_bar + kappa;
        let minus = gamma_bar - kappa;
        let g = minus / plus;
        let bracket = 1.0 + g * e;
        let denom = plus * bracket;

        // log[2γ e^{(κ-γ)t/2} / D] with D = (γ-κ)e^{-γt} + γ + κ
        let log_ratio =
            (2.0 * gamma_bar).ln() + 0.5 * (kappa - gamma_bar) * t - plus.ln() - bracket.ln();
        let cir_u = -2.0 / vol2 * log_ratio;
        let cir_v = 2.0 * lam * (1.0 - e) / denom;

        // d/dγ of D and of log_ratio
        let ddenom = 1.0 + e - t * minus * e;
        let dlog_ratio = 1.0 / gamma_bar - 0.5 * t - ddenom / denom;
        let du = -2.0 / vol2 * dlog_ratio * dgamma;
        let dv = 2.0 * (1.0 - e) / denom
            + 2.0 * lam * (t * e / denom - (1.0 - e) * ddenom / (denom * denom)) * dgamma;

        let kt = kappa * self.theta;
        (-kt * cir_u - self.z0 * cir_v, -kt * du - self.z0 * dv)
    }

    /// `E_z[exp(-lambda·T_t)]` for `Re(lambda) > -kappa²/(2·vol2)`.
    pub fn cir_laplace(&self, t: f64, lam: Complex64) -> Result<Complex64> {
        check_domain(lam, self.lower_bound())?;
        if lam == Complex64::new(0.0, 0.0) || t == 0.0 {
            return Ok(Complex64::new(1.0, 0.0));
        }
        Ok(self.log_laplace(t, lam).0.exp())
    }

    /// `d/dlambda E_z[exp(-lambda·T_t)]`.
    pub fn cir_laplace_derivative(&self, t: f64, lam: Complex64) -> Result<Complex64> {
        check_domain(lam, self.lower_bound())?;
        if t == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let (log_l, dlog_l) = self.log_laplace(t, lam);
        Ok(log_l.exp() * dlog_l)
    }

    /// Transform and derivative from a single evaluation.
    pub fn cir_laplace_pair(&self, t: f64, lam: Complex64) -> Result<(Complex64, Complex64)> {
        check_domain(lam, self.lower_bound())?;
        if t == 0.0 {
            return Ok((Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)));
        }
        let (log_l, dlog_l) = self.log_laplace(t, lam);
        let l = log_l.exp();
        Ok((l, l * dlog_l))
    }
}

/// A subordinator run on an integrated CIR clock.
#[derive(Debug, Clone)]
pub struct CompositeClock {
    outer: Subordinator,
    inner: CirClock,
    bound: f64,
}

impl CompositeClock {
    pub fn new(outer: impl Into<Subordinator>, inner: CirClock) -> Self {
        let outer = outer.into();
        let bound = chained_lower_bound(&outer, &inner);
        CompositeClock {
            outer,
            inner,
            bound,
        }
    }

    pub fn outer(&self) -> &Subordinator {
        &self.outer
    }

    pub fn inner(&self) -> &CirClock {
        &self.inner
    }

    pub fn lower_bound(&self) -> f64 {
        self.bound
    }
}

/// Largest real `b` such that `Re(lambda) > b` keeps both the exponent and
/// `Re(phi(lambda))` admissible. Uses `Re(phi(lambda)) >= phi(Re(lambda))`,
/// valid for every subordinator, and bisects the increasing real exponent.
fn chained_lower_bound(outer: &Subordinator, inner: &CirClock) -> f64 {
    {
        let inner = inner.lower_bound();
        let mut lo = outer.lower_bound();
        let phi = |x: f64| outer.inner().exponent(Complex64::new(x, 0.0)).re;
        if phi(0.0) <= inner {
            return 0.0;
        }
        let mut hi = 0.0;
        if lo == f64::NEG_INFINITY {
            lo = -1.0;
            while phi(lo) > inner {
                lo *= 2.0;
                if lo < -1e12 {
                    return f64::NEG_INFINITY;
                }
            }
        } else if phi(lo + 1e-300f64.max(lo.abs() * 1e-15)) > inner {
            return lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) > inner {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// A business clock `T_t`.
#[derive(Debug, Clone)]
pub enum Clock {
    /// `T_t = t`
    Identity,
    Levy(Subordinator),
    Cir(CirClock),
    Composite(CompositeClock),
}

fn check_domain(lam: Complex64, bound: f64) -> Result<()> {
    if lam.re > bound && lam.re.is_finite() && lam.im.is_finite() {
        Ok(())
    } else {
        Err(Error::DomainViolation { re: lam.re, bound })
    }
}

impl Clock {
    pub fn levy(p: LevyExpCP) -> Self {
        Clock::Levy(p.into())
    }

    pub fn composite(outer: LevyExpCP, inner: CirClock) -> Self {
        Clock::Composite(CompositeClock::new(outer, inner))
    }

    /// Real lower bound of the admissible Laplace domain.
    pub fn admissible_real_lower_bound(&self) -> f64 {
        match self {
            Clock::Identity => f64::NEG_INFINITY,
            Clock::Levy(s) => s.lower_bound(),
            Clock::Cir(c) => c.lower_bound(),
            Clock::Composite(c) => c.lower_bound(),
        }
    }

    /// `E_z[exp(-lambda·T_t)]`.
    pub fn laplace(&self, t: f64, lam: Complex64) -> Result<Complex64> {
        match self {
            Clock::Identity => {
                check_domain(lam, f64::NEG_INFINITY)?;
                Ok((-lam * t).exp())
            }
            Clock::Levy(s) => Ok((-s.exponent(lam)? * t).exp()),
            Clock::Cir(c) => c.cir_laplace(t, lam),
            Clock::Composite(c) => {
                check_domain(lam, c.lower_bound())?;
                c.inner.cir_laplace(t, c.outer.exponent(lam)?)
            }
        }
    }

    /// `d/dlambda E_z[exp(-lambda·T_t)] = -E_z[T_t exp(-lambda·T_t)]`.
    pub fn laplace_derivative(&self, t: f64, lam: Complex64) -> Result<Complex64> {
        match self {
            Clock::Identity => {
                check_domain(lam, f64::NEG_INFINITY)?;
                Ok(-t * (-lam * t).exp())
            }
            Clock::Levy(s) => {
                let phi = s.exponent(lam)?;
                Ok(-t * s.derivative(lam)? * (-phi * t).exp())
            }
            Clock::Cir(c) => c.cir_laplace_derivative(t, lam),
            Clock::Composite(c) => {
                check_domain(lam, c.lower_bound())?;
                let phi = c.outer.exponent(lam)?;
                Ok(c.inner.cir_laplace_derivative(t, phi)? * c.outer.derivative(lam)?)
            }
        }
    }

    /// `(laplace, laplace_derivative)` sharing the expensive parts.
    pub fn laplace_pair(&self, t: f64, lam: Complex64) -> Result<(Complex64, Complex64)> {
        match self {
            Clock::Identity => {
                check_domain(lam, f64::NEG_INFINITY)?;
                let l = (-lam * t).exp();
                Ok((l, -t * l))
            }
            Clock::Levy(s) => {
                let l = (-s.exponent(lam)? * t).exp();
                Ok((l, -t * s.derivative(lam)? * l))
            }
            Clock::Cir(c) => c.cir_laplace_pair(t, lam),
            Clock::Composite(c) => {
                check_domain(lam, c.lower_bound())?;
                let (l, dl) = c.inner.cir_laplace_pair(t, c.outer.exponent(lam)?)?;
                Ok((l, dl * c.outer.derivative(lam)?))
            }
        }
    }

    /// `E_z[(-lambda1·T_t) exp(-lambda0·T_t)] = lambda1 · dL/dlambda (lambda0)`.
    pub fn weighted_laplace(
        &self,
        t: f64,
        lam0: Complex64,
        lam1_scaled: Complex64,
    ) -> Result<Complex64> {
        if lam1_scaled == Complex64::new(0.0, 0.0) {
            check_domain(lam0, self.admissible_real_lower_bound())?;
            return Ok(Complex64::new(0.0, 0.0));
        }
        Ok(lam1_scaled * self.laplace_derivative(t, lam0)?)
    }

    /// Probability that no business time elapses by `t`.
    pub fn atom_mass(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match self {
            Clock::Identity | Clock::Cir(_) => 0.0,
            Clock::Levy(s) => s.atom_rate().map_or(0.0, |a| (-a * t).exp()),
            Clock::Composite(c) => c.outer.atom_rate().map_or(0.0, |a| {
                c.inner
                    .cir_laplace(t, Complex64::new(a, 0.0))
                    .map(|v| v.re)
                    .unwrap_or(0.0)
            }),
        }
    }

    /// `E[T_t]`, when known in closed form.
    pub fn mean(&self, t: f64) -> Option<f64> {
        match self {
            Clock::Identity => Some(t),
            Clock::Levy(Subordinator::CompoundPoissonExp(p)) => Some(p.mean_rate() * t),
            Clock::Cir(c) => Some(c.mean(t)),
            Clock::Composite(c) => match c.outer() {
                Subordinator::CompoundPoissonExp(p) => Some(p.mean_rate() * c.inner().mean(t)),
                Subordinator::Custom(_) => None,
            },
            _ => None,
        }
    }
}
