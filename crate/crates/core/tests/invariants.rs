use num_complex::Complex64;
use proptest::prelude::*;
use tcfmr::presets::Preset;
use tcfmr::pricing::{price, PricingRequest};
use tcfmr::spectral::{call_coefficient, GroupParams};

fn preset() -> impl Strategy<Value = Preset> {
    prop::sample::select(Preset::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplace_is_one_at_zero_and_hermitian(p in preset(), t in 0.05f64..2.0, re in 0.0f64..3.0, im in -20.0f64..20.0) {
        let clock = p.clock();
        let one = clock.laplace(t, Complex64::new(0.0, 0.0)).unwrap();
        prop_assert!((one - 1.0).norm() < 1e-12);
        let lam = Complex64::new(re, im);
        let a = clock.laplace(t, lam).unwrap();
        let b = clock.laplace(t, lam.conj()).unwrap();
        prop_assert!((a - b.conj()).norm() < 1e-12 * a.norm().max(1.0));
        prop_assert!(a.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn call_coefficient_is_hermitian(wr in -30.0f64..30.0, wi in -3.0f64..-0.55, k in -1.0f64..1.0, t in 0.1f64..2.0) {
        let w = Complex64::new(wr, wi);
        let a = call_coefficient(w, t, k, 0.0).unwrap();
        let b = call_coefficient(-w.conj(), t, k, 0.0).unwrap();
        prop_assert!((a - b.conj()).norm() < 1e-12 * a.norm().max(1e-300));
    }

    #[test]
    fn correction_is_linear_in_group_parameters(p in preset(), a in -0.05f64..0.05, b in -0.05f64..0.05, k in -0.3f64..0.3) {
        let corr = |v2: f64, v3: f64| {
            let req = PricingRequest { params: GroupParams::new(0.34, v2, v3).unwrap(), ..p.request(k, 0.5) };
            price(&req).unwrap().correction
        };
        let lhs = corr(a, b);
        let rhs = a / 0.01 * corr(0.01, 0.0) + b / 0.01 * corr(0.0, 0.01);
        prop_assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn order0_call_decreases_in_strike_and_stays_in_bounds(p in preset(), k in -0.8f64..0.8, dk in 0.01f64..0.3, t in 0.1f64..2.0) {
        let req = |k: f64| PricingRequest { params: GroupParams::uncorrected(0.34).unwrap(), ..p.request(k, t) };
        let lo = price(&req(k)).unwrap().p0;
        let hi = price(&req(k + dk)).unwrap().p0;
        prop_assert!(hi < lo);
        prop_assert!(lo <= 1.0 && lo >= (1.0 - k.exp()).max(0.0) - 1e-10);
    }
}
