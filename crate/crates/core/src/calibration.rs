//! Weighted least-squares fit of model implied vols to quoted implied vols,
//! minimized by a Nelder–Mead simplex projected onto box bounds.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::impliedvol::implied_vol;
use crate::pricing::{price_with_contour, choose_contour, Payoff, PricingRequest};
use crate::spectral::{Contour, GroupParams};
use crate::timechange::{Clock, Subordinator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub t: f64,
    pub strike: f64,
    pub implied_vol: f64,
    pub weight: f64,
}

/// A parameter the fit may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FreeParam {
    Sigma,
    V2Eps,
    V3Eps,
    /// Subordinator drift gamma.
    LevyDrift,
    /// Jump intensity alpha.
    LevyIntensity,
    /// Exponential jump rate eta.
    LevyJumpRate,
    CirKappa,
    CirTheta,
    CirVol2,
    CirZ0,
}

impl FreeParam {
    pub const ALL: [FreeParam; 10] = [
        FreeParam::Sigma,
        FreeParam::V2Eps,
        FreeParam::V3Eps,
        FreeParam::LevyDrift,
        FreeParam::LevyIntensity,
        FreeParam::LevyJumpRate,
        FreeParam::CirKappa,
        FreeParam::CirTheta,
        FreeParam::CirVol2,
        FreeParam::CirZ0,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FreeParam::Sigma => "sigma",
            FreeParam::V2Eps => "v2_eps",
            FreeParam::V3Eps => "v3_eps",
            FreeParam::LevyDrift => "gamma",
            FreeParam::LevyIntensity => "alpha",
            FreeParam::LevyJumpRate => "eta",
            FreeParam::CirKappa => "kappa",
            FreeParam::CirTheta => "theta",
            FreeParam::CirVol2 => "vol2",
            FreeParam::CirZ0 => "z0",
        }
    }

    pub fn from_name(s: &str) -> Option<FreeParam> {
        FreeParam::ALL.into_iter().find(|p| p.name() == s.trim())
    }
}

/// Model state the fit moves through.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub params: GroupParams,
    pub clock: Clock,
}

impl ModelState {
    pub fn get(&self, p: FreeParam) -> Result<f64> {
        let (levy, cir) = clock_parts(&self.clock);
        let missing = || invalid("free_params", format!("`{}` does not apply to this clock", p.name()));
        Ok(match p {
            FreeParam::Sigma => self.params.sigma,
            FreeParam::V2Eps => self.params.v2_eps,
            FreeParam::V3Eps => self.params.v3_eps,
            FreeParam::LevyDrift => levy.ok_or_else(missing)?.drift,
            FreeParam::LevyIntensity => levy.ok_or_else(missing)?.intensity,
            FreeParam::LevyJumpRate => levy.ok_or_else(missing)?.jump_rate,
            FreeParam::CirKappa => cir.ok_or_else(missing)?.kappa,
            FreeParam::CirTheta => cir.ok_or_else(missing)?.theta,
            FreeParam::CirVol2 => cir.ok_or_else(missing)?.vol2,
            FreeParam::CirZ0 => cir.ok_or_else(missing)?.z0,
        })
    }

    /// Copy with the listed parameters replaced, revalidated.
    pub fn with_values(&self, free: &[FreeParam], values: &[f64]) -> Result<ModelState> {
        let mut params = self.params;
        let (levy, cir) = clock_parts(&self.clock);
        let (mut levy, mut cir) = (levy.copied(), cir.copied());
        for (p, &v) in free.iter().zip(values) {
            match p {
                FreeParam::Sigma => params.sigma = v,
                FreeParam::V2Eps => params.v2_eps = v,
                FreeParam::V3Eps => params.v3_eps = v,
                FreeParam::LevyDrift => levy.as_mut().map(|l| l.drift = v).ok_or_else(|| invalid("free_params", "no Lévy clock"))?,
                FreeParam::LevyIntensity => levy.as_mut().map(|l| l.intensity = v).ok_or_else(|| invalid("free_params", "no Lévy clock"))?,
                FreeParam::LevyJumpRate => levy.as_mut().map(|l| l.jump_rate = v).ok_or_else(|| invalid("free_params", "no Lévy clock"))?,
                FreeParam::CirKappa => cir.as_mut().map(|c| c.kappa = v).ok_or_else(|| invalid("free_params", "no CIR clock"))?,
                FreeParam::CirTheta => cir.as_mut().map(|c| c.theta = v).ok_or_else(|| invalid("free_params", "no CIR clock"))?,
                FreeParam::CirVol2 => cir.as_mut().map(|c| c.vol2 = v).ok_or_else(|| invalid("free_params", "no CIR clock"))?,
                FreeParam::CirZ0 => cir.as_mut().map(|c| c.z0 = v).ok_or_else(|| invalid("free_params", "no CIR clock"))?,
            }
        }
        let params = GroupParams::new(params.sigma, params.v2_eps, params.v3_eps)?;
        let clock = match (&self.clock, levy, cir) {
            (Clock::Identity, _, _) => Clock::Identity,
            (Clock::Levy(_), Some(l), _) => Clock::levy(crate::timechange::LevyExpCP::new(l.drift, l.intensity, l.jump_rate)?),
            (Clock::Cir(_), _, Some(c)) => Clock::Cir(crate::timechange::CirClock::new(c.kappa, c.theta, c.vol2, c.z0)?),
            (Clock::Composite(_), Some(l), Some(c)) => Clock::composite(
                crate::timechange::LevyExpCP::new(l.drift, l.intensity, l.jump_rate)?,
                crate::timechange::CirClock::new(c.kappa, c.theta, c.vol2, c.z0)?,
            ),
            _ => self.clock.clone(),
        };
        Ok(ModelState { params, clock })
    }
}

fn clock_parts(clock: &Clock) -> (Option<&crate::timechange::LevyExpCP>, Option<&crate::timechange::CirClock>) {
    match clock {
        Clock::Identity => (None, None),
        Clock::Levy(Subordinator::CompoundPoissonExp(l)) => (Some(l), None),
        Clock::Levy(Subordinator::Custom(_)) => (None, None),
        Clock::Cir(c) => (None, Some(c)),
        Clock::Composite(c) => match c.outer() {
            Subordinator::CompoundPoissonExp(l) => (Some(l), Some(c.inner())),
            Subordinator::Custom(_) => (None, Some(c.inner())),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub param: FreeParam,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub quotes: Vec<Quote>,
    pub free: Vec<Bound>,
    /// Starting point and the values of every fixed parameter.
    pub start: ModelState,
    /// Log spot.
    pub x: f64,
    pub r: f64,
    pub options: NelderMeadOptions,
    /// Absolute contour tolerance for the model prices.
    pub price_tolerance: f64,
}

/// Penalty charged per quote the model cannot invert to an implied vol.
pub const FAILED_QUOTE_PENALTY: f64 = 1.0;

impl CalibrationProblem {
    pub fn new(quotes: Vec<Quote>, free: Vec<Bound>, start: ModelState, x: f64, r: f64) -> Self {
        CalibrationProblem {
            quotes,
            free,
            start,
            x,
            r,
            options: NelderMeadOptions::default(),
            price_tolerance: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(invalid("free_params", "nothing to fit"));
        }
        if self.quotes.len() < self.free.len() {
            return Err(invalid(
                "quotes",
                format!("{} quotes cannot determine {} free parameters", self.quotes.len(), self.free.len()),
            ));
        }
        for (i, q) in self.quotes.iter().enumerate() {
            if !(q.weight.is_finite() && q.weight > 0.0) {
                return Err(invalid("weight", format!("quote {} has weight {}; weights must be > 0", i + 1, q.weight)));
            }
            if !(q.t.is_finite() && q.t > 0.0 && q.strike.is_finite() && q.strike > 0.0) {
                return Err(invalid("quotes", format!("quote {} needs t > 0 and strike > 0", i + 1)));
            }
            if !(q.implied_vol.is_finite() && q.implied_vol > 0.0) {
                return Err(invalid("implied_vol", format!("quote {} has implied vol {}", i + 1, q.implied_vol)));
            }
        }
        for (i, b) in self.free.iter().enumerate() {
            if !(b.lower.is_finite() && b.upper.is_finite() && b.lower < b.upper) {
                return Err(invalid("bounds", format!("`{}` needs finite lower < upper", b.param.name())));
            }
            if self.free[..i].iter().any(|o| o.param == b.param) {
                return Err(invalid("free_params", format!("`{}` listed twice", b.param.name())));
            }
            let v = self.start.get(b.param)?;
            if !(v >= b.lower && v <= b.upper) {
                return Err(invalid("bounds", format!("start value {v} of `{}` is outside [{}, {}]", b.param.name(), b.lower, b.upper)));
            }
        }
        Ok(())
    }

    fn free_params(&self) -> Vec<FreeParam> {
        self.free.iter().map(|b| b.param).collect()
    }

    /// Model implied vols for every quote; `None` where pricing or inversion fails.
    pub fn model_vols(&self, state: &ModelState) -> Vec<Option<f64>> {
        let contour = choose_contour(&state.params, &state.clock).and_then(|c| Contour::new(c.omega_i, c.truncation, self.price_tolerance));
        self.quotes
            .par_iter()
            .map(|q| {
                let contour = contour.as_ref().ok()?;
                let req = PricingRequest {
                    x: self.x,
                    k: q.strike.ln(),
                    r: self.r,
                    t: q.t,
                    params: state.params,
                    clock: state.clock.clone(),
                    payoff: Payoff::Call,
                };
                let p = price_with_contour(&req, contour).ok()?;
                implied_vol(p.total, self.x.exp(), q.strike, self.r, q.t).ok()
            })
            .collect()
    }

    /// Weighted mean squared implied-vol error plus penalties.
    pub fn objective(&self, state: &ModelState) -> (f64, usize) {
        let vols = self.model_vols(state);
        let wsum: f64 = self.quotes.iter().map(|q| q.weight).sum();
        let mut acc = 0.0;
        let mut failed = 0;
        for (q, v) in self.quotes.iter().zip(vols) {
            match v {
                Some(v) => acc += q.weight * (v - q.implied_vol).powi(2),
                None => {
                    failed += 1;
                    acc += q.weight * FAILED_QUOTE_PENALTY;
                }
            }
        }
        (acc / wsum, failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop when the simplex objective spread falls below this.
    pub f_tolerance: f64,
    /// and every vertex lies within this (relative to the box width) of the best.
    pub x_tolerance: f64,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
    /// Fresh simplices built around the best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iterations: 2_000,
            f_tolerance: 1e-20,
            x_tolerance: 1e-9,
            initial_step: 0.1,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder–Mead on the box `[lower, upper]`; trial points are clamped into
/// the box before evaluation.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &NelderMeadOptions) -> MinimizeResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut evaluations = 0;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut best = x0.to_vec();
    clamp(&mut best);
    let mut iterations = 0;
    let mut converged = false;
    let mut best_value = eval(&best, &mut evaluations);

    for _round in 0..=opts.restarts {
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![(best.clone(), best_value)];
        for i in 0..n {
            let mut v = best.clone();
            let step = opts.initial_step * (upper[i] - lower[i]);
            v[i] = if v[i] + step <= upper[i] { v[i] + step } else { v[i] - step };
            clamp(&mut v);
            let fv = eval(&v, &mut evaluations);
            simplex.push((v, fv));
        }
        converged = false;
        while iterations < opts.max_iterations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            let head = &simplex[0].0;
            let size = simplex[1..]
                .iter()
                .flat_map(|(v, _)| v.iter().zip(head).enumerate().map(|(i, (a, b))| (a - b).abs() / (upper[i] - lower[i])))
                .fold(0.0, f64::max);
            if spread <= opts.f_tolerance.max(0.0) && size <= opts.x_tolerance || size <= 1e-3 * opts.x_tolerance {
                converged = true;
                break;
            }
            iterations += 1;
            let centroid: Vec<f64> = (0..n).map(|i| simplex[..n].iter().map(|(v, _)| v[i]).sum::<f64>() / n as f64).collect();
            let worst = simplex[n].clone();
            let along = |c: f64| {
                let mut p: Vec<f64> = (0..n).map(|i| centroid[i] + c * (worst.0[i] - centroid[i])).collect();
                clamp(&mut p);
                p
            };
            let xr = along(-1.0);
            let fr = eval(&xr, &mut evaluations);
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = eval(&xe, &mut evaluations);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < worst.1 {
                    let xc = along(-0.5);
                    let fc = eval(&xc, &mut evaluations);
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = eval(&xc, &mut evaluations);
                    (xc, fc)
                };
                if fc < worst.1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let b = simplex[0].0.clone();
                    for (v, fv) in simplex.iter_mut().skip(1) {
                        for i in 0..n {
                            v[i] = b[i] + 0.5 * (v[i] - b[i]);
                        }
                        *fv = eval(v, &mut evaluations);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = simplex[0].1 < best_value;
        if simplex[0].1 <= best_value {
            best = simplex[0].0.clone();
            best_value = simplex[0].1;
        }
        if !converged || (!improved && _round > 0) {
            break;
        }
    }
    MinimizeResult {
        x: best,
        value: best_value,
        iterations,
        evaluations,
        converged,
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub fitted: ModelState,
    pub values: Vec<(FreeParam, f64)>,
    /// Weighted root-mean-square implied-vol error.
    pub rmse: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Quotes the fitted model could not invert.
    pub failed_quotes: usize,
    /// Per-quote model vol minus quoted vol.
    pub residuals: Vec<Option<f64>>,
}

pub fn calibrate(problem: &CalibrationProblem) -> Result<CalibrationResult> {
    problem.validate()?;
    let free = problem.free_params();
    let x0: Vec<f64> = free.iter().map(|&p| problem.start.get(p)).collect::<Result<_>>()?;
    let lower: Vec<f64> = problem.free.iter().map(|b| b.lower).collect();
    let upper: Vec<f64> = problem.free.iter().map(|b| b.upper).collect();
    let objective = |x: &[f64]| match problem.start.with_values(&free, x) {
        Ok(state) => problem.objective(&state).0,
        // Parameter combinations the model rejects count as every quote failing.
        Err(_) => FAILED_QUOTE_PENALTY * 10.0,
    };
    let res = nelder_mead(objective, &x0, &lower, &upper, &problem.options);
    let fitted = problem.start.with_values(&free, &res.x)?;
    let vols = problem.model_vols(&fitted);
    let (value, failed) = problem.objective(&fitted);
    if !value.is_finite() {
        return Err(Error::NonConvergent("calibration objective is not finite at the best point".into()));
    }
    let residuals = vols.iter().zip(&problem.quotes).map(|(v, q)| v.map(|v| v - q.implied_vol)).collect();
    Ok(CalibrationResult {
        values: free.iter().copied().zip(res.x.iter().copied()).collect(),
        fitted,
        rmse: value.sqrt(),
        iterations: res.iterations,
        evaluations: res.evaluations,
        converged: res.converged,
        failed_quotes: failed,
        residuals,
    })
}

/// Quotes generated by the model itself, for round-trip checks.
pub fn synthetic_quotes(state: &ModelState, x: f64, r: f64, maturities: &[f64], strikes: &[f64]) -> Result<Vec<Quote>> {
    let problem = CalibrationProblem::new(
        maturities
            .iter()
            .flat_map(|&t| strikes.iter().map(move |&k| Quote { t, strike: k, implied_vol: 1.0, weight: 1.0 }))
            .collect(),
        vec![],
        state.clone(),
        x,
        r,
    );
    problem
        .model_vols(state)
        .into_iter()
        .zip(problem.quotes)
        .map(|(v, q)| {
            let v = v.ok_or_else(|| invalid("quotes", format!("model vol unavailable at t = {}, strike = {}", q.t, q.strike)))?;
            Ok(Quote { implied_vol: v, ..q })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock_in_a_box() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.0, 1.5], &[-2.0, -2.0], &[2.0, 2.0], &NelderMeadOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn nelder_mead_respects_the_box() {
        // Unconstrained minimum at (3, -3); the box pins it to a corner.
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 3.0).powi(2);
        let r = nelder_mead(f, &[0.0, 0.0], &[-1.0, -1.0], &[1.0, 1.0], &NelderMeadOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] + 1.0).abs() < 1e-8, "{:?}", r.x);
    }

    fn identity_problem() -> CalibrationProblem {
        let truth = ModelState {
            params: GroupParams::new(0.3, 0.02, -0.02).unwrap(),
            clock: Clock::Identity,
        };
        let quotes = synthetic_quotes(&truth, 0.0, 0.0, &[0.5, 1.0], &[0.9, 1.0, 1.1]).unwrap();
        let start = ModelState {
            params: GroupParams::new(0.25, 0.0, 0.0).unwrap(),
            clock: Clock::Identity,
        };
        let free = vec![
            Bound { param: FreeParam::Sigma, lower: 0.1, upper: 0.6 },
            Bound { param: FreeParam::V2Eps, lower: -0.1, upper: 0.1 },
            Bound { param: FreeParam::V3Eps, lower: -0.1, upper: 0.1 },
        ];
        CalibrationProblem::new(quotes, free, start, 0.0, 0.0)
    }

    #[test]
    fn identity_clock_round_trip() {
        let res = calibrate(&identity_problem()).unwrap();
        assert!(res.rmse < 1e-7, "{res:?}");
        let p = res.fitted.params;
        assert!((p.sigma - 0.3).abs() < 1e-4 && (p.v2_eps - 0.02).abs() < 1e-4 && (p.v3_eps + 0.02).abs() < 1e-4, "{p:?}");
    }

    #[test]
    fn validation() {
        let mut p = identity_problem();
        p.quotes.truncate(2);
        assert!(matches!(calibrate(&p), Err(Error::InvalidParameter { name: "quotes", .. })));
        let mut p = identity_problem();
        p.quotes[0].weight = 0.0;
        assert!(matches!(calibrate(&p), Err(Error::InvalidParameter { name: "weight", .. })));
        let mut p = identity_problem();
        p.free.push(Bound { param: FreeParam::CirKappa, lower: 0.1, upper: 2.0 });
        assert!(calibrate(&p).is_err());
    }
}
