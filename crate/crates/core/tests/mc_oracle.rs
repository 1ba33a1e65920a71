use num_complex::Complex64;
use tcfmr::mc_oracle::{
    group_params_from_model, mc_clock_mean, mc_price_order0, mc_weighted_laplace, simulate_full_model, FullModelSpec, RiskPrice,
};
use tcfmr::presets::Preset;
use tcfmr::pricing::{price, PricingRequest};
use tcfmr::Clock;

#[test]
fn clock_means_match_closed_forms() {
    // compound-Poisson clock: drift + intensity/jump_rate per unit time
    let m = mc_clock_mean(&Preset::Fig2.clock(), 1.0, 100_000, 3).unwrap();
    assert!(m.brackets(7.75, 3.0, 0.0), "{m:?}");
    // CIR: theta·t + (z0 - theta)(1 - e^{-kappa t})/kappa
    let m = mc_clock_mean(&Preset::Fig3.clock(), 1.0, 100_000, 3).unwrap();
    assert!(m.brackets(1.632121, 3.0, 1e-3), "{m:?}");
}

#[test]
fn fig2_atm_half_year_price_is_bracketed() {
    let req = Preset::Fig2.request(0.0, 0.5);
    let exact = price(&req).unwrap().p0;
    let mc = mc_price_order0(&req, 100_000, 5).unwrap();
    assert!(mc.brackets(exact, 3.0, 0.0), "{exact} vs {mc:?}");
}

#[test]
fn weighted_laplace_bracketed_on_every_clock() {
    let (lam0, lam1) = (Complex64::new(0.3, 0.0), Complex64::new(0.2, 0.1));
    for p in Preset::ALL {
        let clock = p.clock();
        let exact = clock.weighted_laplace(1.0, lam0, lam1).unwrap();
        let est = mc_weighted_laplace(&clock, 1.0, lam0, lam1, 100_000, 9).unwrap();
        assert!((est.mean.re - exact.re).abs() <= 3.0 * est.stderr_re + 1e-12, "{p}");
        assert!((est.mean.im - exact.im).abs() <= 3.0 * est.stderr_im + 1e-12, "{p}");
    }
}

#[test]
fn uncorrelated_full_model_matches_asymptotic_price() {
    let spec = FullModelSpec {
        rho: 0.0,
        gamma: RiskPrice::Constant(0.0),
        ..Default::default()
    };
    let (params, _) = group_params_from_model(&spec).unwrap();
    // with rho = 0 and no risk premium the third-order term vanishes
    assert!(params.v3_eps.abs() < 1e-12);
    let req = PricingRequest::call(0.0, 0.0, 0.0, 0.5, params, Clock::Identity);
    let approx = price(&req).unwrap().total;
    let mc = simulate_full_model(&spec, &req, 40_000, 1.0 / 50.0, 17).unwrap();
    // O(eps) model error on top of the sampling error
    assert!(mc.brackets(approx, 3.0, 2e-2), "{approx} vs {mc:?}");
}
