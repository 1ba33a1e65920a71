//! Black–Scholes calls, implied-volatility inversion and implied-vol
//! surfaces over log-moneyness-to-maturity (LMMR) grids.

use rayon::prelude::*;
use roots::{find_root_brent, Convergency, SearchError};

use crate::error::{invalid, Error, Result};
use crate::pricing::{price, PriceResult, PricingRequest};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    crate::spectral::INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Black–Scholes call value. Degenerates to the discounted intrinsic value
/// when `vol·sqrt(t)` vanishes.
pub fn bs_price(spot: f64, strike: f64, r: f64, t: f64, vol: f64) -> f64 {
    let disc_strike = strike * (-r * t).exp();
    let sd = vol * t.sqrt();
    if !(sd > 0.0) {
        return (spot - disc_strike).max(0.0);
    }
    let d1 = ((spot / strike).ln() + r * t) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    spot * norm_cdf(d1) - disc_strike * norm_cdf(d2)
}

/// `dC/dvol`
pub fn bs_vega(spot: f64, strike: f64, r: f64, t: f64, vol: f64) -> f64 {
    let sd = vol * t.sqrt();
    if !(sd > 0.0) {
        return 0.0;
    }
    let d1 = ((spot / strike).ln() + r * t) / sd + 0.5 * sd;
    spot * norm_pdf(d1) * t.sqrt()
}

pub const VOL_BRACKET: (f64, f64) = (1e-6, 5.0);
pub const PRICE_TOLERANCE: f64 = 1e-10;

struct Stop {
    price_tol: f64,
}

impl Convergency<f64> for Stop {
    fn is_root_found(&mut self, y: f64) -> bool {
        y.abs() < self.price_tol
    }
    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() < 1e-15
    }
    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= 200
    }
}

/// The volatility reproducing a call price. The price must lie strictly
/// inside `((spot - strike·e^{-rt})+, spot)`.
pub fn implied_vol(price: f64, spot: f64, strike: f64, r: f64, t: f64) -> Result<f64> {
    if !(spot > 0.0 && strike > 0.0 && t > 0.0 && price.is_finite()) {
        return Err(invalid("implied_vol", format!(
            "needs spot, strike, t > 0 and a finite price (spot {spot}, strike {strike}, t {t}, price {price})"
        )));
    }
    let lower = (spot - strike * (-r * t).exp()).max(0.0);
    let upper = spot;
    if !(price > lower && price < upper) {
        return Err(Error::OutOfBand { price, lower, upper });
    }
    let (lo, hi) = VOL_BRACKET;
    // The band is wider than what the bracket can express at its ends.
    let f = |v: f64| bs_price(spot, strike, r, t, v) - price;
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::OutOfBand {
            price,
            lower: bs_price(spot, strike, r, t, lo),
            upper: bs_price(spot, strike, r, t, hi),
        });
    }
    // Scale the price tolerance down for tiny prices so the volatility is
    // still resolved.
    let mut stop = Stop {
        price_tol: (PRICE_TOLERANCE * 1e-2).min(price * 1e-12).max(1e-300),
    };
    match find_root_brent(lo, hi, f, &mut stop) {
        Ok(v) => Ok(v),
        Err(SearchError::NoBracketing) => Err(Error::NonConvergent("implied vol: root not bracketed".into())),
        Err(e) => Err(Error::NonConvergent(format!("implied vol: {e:?}"))),
    }
}

#[derive(Debug, Clone)]
pub enum StrikeAxis {
    /// `(k - x) / t`
    Lmmr(Vec<f64>),
    LogStrike(Vec<f64>),
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn default_lmmr_grid() -> Vec<f64> {
    linspace(-1.0, 1.0, 41)
}

pub fn default_maturities() -> Vec<f64> {
    vec![0.125, 0.25, 0.5, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellFlag {
    Ok,
    OutOfBand,
    NumericFailure,
}

impl CellFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellFlag::Ok => "ok",
            CellFlag::OutOfBand => "out_of_band",
            CellFlag::NumericFailure => "numeric_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRow {
    pub t: f64,
    pub k: f64,
    pub lmmr: f64,
    pub price0: f64,
    pub correction: f64,
    pub price: f64,
    pub implied_vol: Option<f64>,
    pub flag: CellFlag,
    /// Set when the cell failed.
    pub error: Option<Error>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceTable {
    pub rows: Vec<SurfaceRow>,
}

impl SurfaceTable {
    pub fn maturities(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !ts.contains(&r.t) {
                ts.push(r.t);
            }
        }
        ts
    }

    /// Priced rows at one maturity, in grid order.
    pub fn slice(&self, t: f64) -> Vec<&SurfaceRow> {
        self.rows.iter().filter(|r| r.t == t && r.implied_vol.is_some()).collect()
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.flag != CellFlag::Ok).count()
    }

    /// Central-difference slope of implied vol in LMMR at the grid point
    /// nearest to LMMR = 0.
    pub fn atm_slope(&self, t: f64) -> Option<f64> {
        let s = self.slice(t);
        let i = (1..s.len().saturating_sub(1)).min_by(|&a, &b| s[a].lmmr.abs().total_cmp(&s[b].lmmr.abs()))?;
        Some((s[i + 1].implied_vol? - s[i - 1].implied_vol?) / (s[i + 1].lmmr - s[i - 1].lmmr))
    }

    /// `(lmmr, implied_vol)` of the lowest implied vol at a maturity.
    pub fn min_vol(&self, t: f64) -> Option<(f64, f64)> {
        self.slice(t)
            .into_iter()
            .filter_map(|r| Some((r.lmmr, r.implied_vol?)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Rise of the implied vol at the largest LMMR above its minimum. Zero
    /// for a pure downward skew.
    pub fn smile_amplitude(&self, t: f64) -> Option<f64> {
        let s = self.slice(t);
        let right = s.iter().max_by(|a, b| a.lmmr.total_cmp(&b.lmmr))?.implied_vol?;
        Some(right - self.min_vol(t)?.1)
    }

    /// True when the implied vol never increases with LMMR at this maturity.
    pub fn is_monotone_decreasing(&self, t: f64) -> bool {
        self.slice(t)
            .windows(2)
            .all(|w| w[1].implied_vol.unwrap_or(f64::NAN) <= w[0].implied_vol.unwrap_or(f64::NAN))
    }
}

fn row_for(template: &PricingRequest, t: f64, k: f64) -> SurfaceRow {
    let mut req = template.clone();
    req.t = t;
    req.k = k;
    let lmmr = (k - req.x) / t;
    let blank = |flag, error| SurfaceRow {
        t,
        k,
        lmmr,
        price0: f64::NAN,
        correction: f64::NAN,
        price: f64::NAN,
        implied_vol: None,
        flag,
        error: Some(error),
    };
    let priced: PriceResult = match price(&req) {
        Ok(p) => p,
        Err(e) => return blank(CellFlag::NumericFailure, e),
    };
    let vol = implied_vol(priced.total, req.x.exp(), k.exp(), req.r, t);
    let (implied_vol, flag, error) = match vol {
        Ok(v) => (Some(v), CellFlag::Ok, None),
        Err(e @ Error::OutOfBand { .. }) => (None, CellFlag::OutOfBand, Some(e)),
        Err(e) => (None, CellFlag::NumericFailure, Some(e)),
    };
    SurfaceRow {
        t,
        k,
        lmmr,
        price0: priced.p0,
        correction: priced.correction,
        price: priced.total,
        implied_vol,
        flag,
        error,
    }
}

/// Prices every `(maturity, strike)` cell of a call surface. Failed cells
/// are kept and flagged; rows come out maturity-major in grid order.
pub fn surface(template: &PricingRequest, axis: &StrikeAxis, maturities: &[f64]) -> Result<SurfaceTable> {
    let n = match axis {
        StrikeAxis::Lmmr(v) | StrikeAxis::LogStrike(v) => v.len(),
    };
    if n == 0 || maturities.is_empty() {
        return Err(invalid("grid", "strike and maturity grids must be nonempty"));
    }
    if let Some(&t) = maturities.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(invalid("maturities", format!("must be finite and > 0, got {t}")));
    }
    let cells: Vec<(f64, f64)> = maturities
        .iter()
        .flat_map(|&t| {
            let ks: Vec<f64> = match axis {
                StrikeAxis::Lmmr(v) => v.iter().map(|l| template.x + l * t).collect(),
                StrikeAxis::LogStrike(v) => v.clone(),
            };
            ks.into_iter().map(move |k| (t, k))
        })
        .collect();
    let rows = cells.par_iter().map(|&(t, k)| row_for(template, t, k)).collect();
    Ok(SurfaceTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bs_atm_example() {
        // 2Φ(0.17) - 1
        let v = bs_price(1.0, 1.0, 0.0, 1.0, 0.34);
        assert!((v - 0.134_990).abs() < 1e-6, "{v}");
        assert!((v - (2.0 * norm_cdf(0.17) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn norm_cdf_reference_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-17);
        assert!((norm_cdf(-10.0) - 7.619_853_024_160_527e-24).abs() < 1e-36);
    }

    #[test]
    fn bs_limits() {
        assert_eq!(bs_price(1.2, 1.0, 0.05, 2.0, 0.0), 1.2 - (-0.1f64).exp());
        assert!((bs_price(1.2, 1.0, 0.05, 0.0, 0.3) - 0.2).abs() < 1e-15);
        assert!((bs_price(1.0, 1.5, 0.0, 1.0, 1e-9)).abs() < 1e-300);
        assert!((bs_price(1.0, 1.0, 0.0, 1.0, 1e-6) - 1e-6 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bs_put_call_parity_holds() {
        // Put via the same formula at negated log-moneyness.
        let (s, k, r, t, v): (f64, f64, f64, f64, f64) = (1.1, 0.9, 0.03, 0.7, 0.25);
        let sd = v * t.sqrt();
        let d1 = ((s / k).ln() + r * t) / sd + 0.5 * sd;
        let put = k * (-r * t).exp() * norm_cdf(-(d1 - sd)) - s * norm_cdf(-d1);
        assert!((bs_price(s, k, r, t, v) - put - (s - k * (-r * t).exp())).abs() < 1e-15);
    }

    #[test]
    fn vega_matches_finite_difference() {
        let h = 1e-6;
        let fd = (bs_price(1.0, 1.1, 0.01, 0.5, 0.3 + h) - bs_price(1.0, 1.1, 0.01, 0.5, 0.3 - h)) / (2.0 * h);
        assert!((bs_vega(1.0, 1.1, 0.01, 0.5, 0.3) - fd).abs() < 1e-8);
    }

    #[test]
    fn implied_vol_round_trips() {
        for &v in &[0.05, 0.2, 0.34, 1.0, 3.0] {
            for &(k, t) in &[(1.0, 1.0), (1.3, 0.25), (0.8, 2.0)] {
                let p = bs_price(1.0, k, 0.01, t, v);
                let iv = implied_vol(p, 1.0, k, 0.01, t).unwrap();
                assert!((iv - v).abs() < 1e-8, "v {v} k {k} t {t}: {iv}");
                assert!((bs_price(1.0, k, 0.01, t, iv) - p).abs() < PRICE_TOLERANCE);
            }
        }
    }

    #[test]
    fn implied_vol_rejects_band_violations() {
        assert!(matches!(implied_vol(0.0, 1.0, 1.0, 0.0, 1.0), Err(Error::OutOfBand { .. })));
        assert!(matches!(implied_vol(1.0, 1.0, 1.0, 0.0, 1.0), Err(Error::OutOfBand { .. })));
        let lower = 1.0 - 0.9 * (-0.05f64).exp();
        assert!(matches!(implied_vol(lower, 1.0, 0.9, 0.05, 1.0), Err(Error::OutOfBand { .. })));
        assert!(implied_vol(f64::NAN, 1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn grid_helpers() {
        let g = default_lmmr_grid();
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[20], 0.0);
        assert_eq!(g[40], 1.0);
        assert_eq!(linspace(2.0, 3.0, 1), vec![2.0]);
    }
}
