use coldmirror::model::*;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = OscillatorParams> {
    (1e-6f64..10.0, 0.1f64..1e7, 10.0f64..1e6, 0.0f64..1000.0)
        .prop_map(|(m, w, q, t)| OscillatorParams::from_q(m, w, q, t).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

proptest! {
    /// Thermal spectrum equals `(2 k_B T / Ω) Im χ` at every frequency.
    #[test]
    fn fluctuation_dissipation(p in params(), lo in 1e-3f64..0.9, hi in 1.1f64..10.0) {
        for i in 0..200 {
            let w = p.omega_m * (lo + (hi - lo) * i as f64 / 199.0);
            let fdt = 2.0 * BOLTZMANN * p.temperature / w * susceptibility(&p, w).im;
            prop_assert!(rel(thermal_displacement_psd(&p, w), fdt) < 1e-12);
        }
    }

    /// In-band cold damping is an oscillator with linewidth `Γ + g` at
    /// temperature `T Γ/(Γ + g)`.
    #[test]
    fn cold_damping_is_a_colder_broader_oscillator(p in params(), k in -0.99f64..100.0, x in 0.5f64..1.5) {
        let g = k * p.gamma;
        let fb = FeedbackConfig::disabled(&p).with_gain(g);
        let equiv = OscillatorParams::new(p.mass_eff, p.omega_m, p.gamma + g, effective_temperature(&p, g).unwrap()).unwrap();
        let w = x * p.omega_m;
        let closed = closed_loop_psd(&p, &fb, w, LoopResponse::InBand).unwrap();
        prop_assert!(rel(closed, thermal_displacement_psd(&equiv, w)) < 1e-10);
    }

    #[test]
    fn noise_reduction_times_temperature_ratio_is_one(p in params(), k in -0.99f64..1000.0) {
        let g = k * p.gamma;
        let r = noise_reduction_r(p.gamma, g).unwrap();
        let t_fb = effective_temperature(&p, g).unwrap();
        if p.temperature > 0.0 {
            prop_assert!((r * t_fb / p.temperature - 1.0).abs() < 1e-12);
        }
        prop_assert!(r > 0.0);
    }

    #[test]
    fn unstable_gains_are_rejected(p in params(), k in 1.0f64..10.0) {
        let g = -k * p.gamma;
        prop_assert!(noise_reduction_r(p.gamma, g).is_err());
        let fb = FeedbackConfig::disabled(&p).with_gain(g);
        prop_assert!(closed_loop_psd(&p, &fb, p.omega_m, LoopResponse::InBand).is_err());
    }

    /// Cooling with an untouched background starts at 1, never exceeds the
    /// ideal factor and approaches `1 + V_mode / V_bg`.
    #[test]
    fn background_limited_cooling(p in params(), frac in 1e-4f64..1.0, band in 10.0f64..300.0) {
        prop_assume!(p.temperature > 1e-3);
        let bg = BackgroundModel { level: frac * thermal_displacement_psd(&p, p.omega_m), affected_by_feedback: false };
        let band = band * p.gamma;
        let at = |k: f64| cooling_factor_with_background(&p, &bg, k * p.gamma, band).unwrap();
        prop_assert!((at(0.0) - 1.0).abs() < 1e-12);
        let mut prev = at(0.0);
        for k in [0.5, 2.0, 9.0, 39.0, 1e4] {
            let c = at(k);
            prop_assert!(c >= prev && c <= 1.0 + k + 1e-12);
            prev = c;
        }
        let limit = 1.0 + p.thermal_variance() / background_band_variance(&bg, band);
        prop_assert!(prev < limit * (1.0 + 1e-9));
    }

    #[test]
    fn unit_conversions_round_trip(s in 1e-30f64..1e10, f in 1e-3f64..1e9) {
        prop_assert!(rel(from_single_sided_hz(to_single_sided_hz(s)), s) < 1e-15);
        prop_assert!(rel(rad_to_hz(hz_to_rad(f)), f) < 1e-15);
    }

    /// With the filter centred on the mode the filtered loop damps exactly
    /// like the ideal one at resonance.
    #[test]
    fn filter_is_transparent_at_its_centre(p in params(), k in 0.0f64..50.0, qf in 0.5f64..500.0) {
        let mut fb = FeedbackConfig::disabled(&p).with_gain(k * p.gamma);
        fb.filter_q = qf;
        let ideal = loop_term(&fb, p.omega_m, LoopResponse::InBand);
        let filtered = loop_term(&fb, p.omega_m, LoopResponse::Filtered);
        prop_assert!((ideal - filtered).norm() <= 1e-12 * ideal.norm().max(1e-300));
        prop_assert!(rel(effective_linewidth(&p, &fb, LoopResponse::Filtered), p.gamma + k * p.gamma) < 1e-12);
    }
}

/// The integral of the closed-loop spectrum is the equipartition variance
/// at the effective temperature.
#[test]
fn equipartition_by_quadrature() {
    let p = OscillatorParams::from_q(1.0, 1.0, 1000.0, 300.0).unwrap();
    for k in [-0.9, 0.0, 1.0, 19.0, 39.0] {
        let fb = if k == 0.0 {
            FeedbackConfig::disabled(&p)
        } else {
            FeedbackConfig::disabled(&p).with_gain(k * p.gamma)
        };
        let v = closed_loop_band_variance(&p, &fb, 0.0, 1e3, LoopResponse::InBand).unwrap();
        let expected = BOLTZMANN * effective_temperature(&p, k * p.gamma).unwrap() / p.stiffness();
        assert!(rel(v, expected) < 1e-6, "g = {k}Γ: {v} vs {expected}");
    }
}

#[test]
fn fluctuation_dissipation_on_a_dense_grid() {
    let p = OscillatorParams::from_q(1e-4, 2.0 * std::f64::consts::PI * 1858.9e3, 1858.9e3 / 45.0, 300.0).unwrap();
    let worst = (0..10_000)
        .map(|i| {
            let w = p.omega_m * (0.5 + i as f64 / 9999.0);
            rel(thermal_displacement_psd(&p, w), 2.0 * BOLTZMANN * p.temperature / w * susceptibility(&p, w).im)
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst:e}");
}
