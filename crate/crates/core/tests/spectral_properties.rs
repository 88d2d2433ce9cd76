use std::f64::consts::PI;

use coldmirror::model::*;
use coldmirror::spectral::*;
use coldmirror::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

fn white(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn oscillator() -> OscillatorParams {
    OscillatorParams::from_q(1.0, 1.0, 1000.0, 300.0).unwrap()
}

/// Analytic closed-loop spectrum in m²/Hz sampled on `bins_per_width` bins
/// per closed-loop linewidth, ±`half_widths` linewidths around the mode.
fn analytic(p: &OscillatorParams, g_over_gamma: f64, bins_per_width: f64, half_widths: f64) -> Spectrum {
    let fb = FeedbackConfig::disabled(p).with_gain(g_over_gamma * p.gamma);
    let width = rad_to_hz(p.gamma * (1.0 + g_over_gamma));
    let df = width / bins_per_width;
    let f0 = rad_to_hz(p.omega_m);
    let n = (2.0 * half_widths * bins_per_width) as usize + 1;
    let freq: Vec<f64> = (0..n).map(|i| f0 - half_widths * width + i as f64 * df).collect();
    let psd = freq
        .iter()
        .map(|&f| to_single_sided_hz(closed_loop_psd(p, &fb, hz_to_rad(f), LoopResponse::InBand).unwrap()))
        .collect();
    Spectrum { freq, psd, rbw: df, n_averages: 1, normalized: false, floor: None }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn parseval_for_white_noise() {
    let x = white(1 << 20, 2.5, 1);
    let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    for window in [Window::Hann, Window::Hamming, Window::Rectangular] {
        let s = welch_psd_with(&x, 1e-3, 1024, WelchConfig::with_window(window)).unwrap();
        let total: f64 = s.psd.iter().sum::<f64>() * s.bin_width();
        assert!(rel(total, var) < 0.01, "{window:?}: {total} vs {var}");
    }
}

/// A bin-centred sinusoid carries `A²/2` and peaks at `A²/(2 rbw)`.
#[test]
fn resolution_bandwidth_contract() {
    let dt = 1e-3;
    let requested = 0.7;
    let s_len = segment_length(requested, dt, Window::Hann).unwrap();
    let df = 1.0 / (s_len as f64 * dt);
    let (a, f) = (3.0, 100.0 * df);
    let x: Vec<f64> = (0..s_len * 40).map(|i| a * (2.0 * PI * f * i as f64 * dt).sin()).collect();
    let s = welch_psd(&x, dt, requested, Window::Hann).unwrap();
    assert!(rel(s.rbw, requested) < 0.02, "rbw {}", s.rbw);
    let k = s.peak_index().unwrap();
    assert!((s.freq[k] - f).abs() < 1e-9 * f);
    let power: f64 = s.psd[k - 3..=k + 3].iter().sum::<f64>() * s.bin_width();
    assert!(rel(power, a * a / 2.0) < 1e-6, "{power}");
    assert!(rel(s.psd[k], a * a / (2.0 * s.rbw)) < 1e-6);
}

#[test]
fn streaming_matches_batch() {
    let x = white(100_003, 1.0, 2);
    let y = white(100_003, 0.5, 3);
    let cfg = WelchConfig::default();
    let batch = welch_psd_with(&x, 0.01, 2000, cfg).unwrap();
    let mut acc = WelchAccumulator::new(2000, 0.01, cfg).unwrap();
    for chunk in x.chunks(777) {
        acc.extend(chunk);
    }
    assert_eq!(acc.finish().unwrap(), batch);
    let mut one = WelchAccumulator::new(2000, 0.01, cfg).unwrap();
    x.iter().for_each(|&v| one.push(v));
    assert_eq!(one.finish().unwrap(), batch);

    let c = cross_spectrum(&x, &y, 0.01, 2000, cfg).unwrap();
    assert_eq!(c.n_averages, batch.n_averages);
    for (a, b) in c.sxx.iter().zip(&batch.psd) {
        assert!(rel(*a, *b) < 1e-12);
    }
    // Independent series: the cross spectrum averages towards zero.
    let coherence: f64 = c.sxy.iter().map(|z| z.norm_sqr()).sum::<f64>()
        / c.sxx.iter().zip(&c.syy).map(|(a, b)| a * b).sum::<f64>();
    assert!(coherence < 0.05, "{coherence}");
}

#[test]
fn noiseless_fit_recovers_the_lorentzian() {
    let p = oscillator();
    for g in [0.0, 4.0, 19.0] {
        let s = analytic(&p, g, 8.0, 30.0);
        let fit = lorentzian_fit(&s, None).unwrap();
        assert!(fit.converged);
        let gamma_fb = p.gamma * (1.0 + g);
        assert!(rel(fit.width, rad_to_hz(gamma_fb)) < 1e-6, "width at g={g}");
        assert!(rel(fit.center, rad_to_hz(p.omega_m)) < 1e-6);
        let temp = effective_temperature(&p, g * p.gamma).unwrap();
        assert!(rel(fit.area, BOLTZMANN * temp / p.stiffness()) < 1e-6, "area at g={g}");
        assert!(fit.background.abs() < 1e-6 * fit.peak);

        let refit_input = Spectrum { psd: s.freq.iter().map(|&f| fit.eval(f)).collect(), ..s.clone() };
        let refit = lorentzian_fit(&refit_input, None).unwrap();
        for (a, b) in [(refit.center, fit.center), (refit.width, fit.width), (refit.area, fit.area)] {
            assert!(rel(a, b) < 1e-9);
        }
    }
}

/// Each bin of an `n`-average Welch estimate scatters like `χ²_{2n}/2n`.
/// Over many realisations the fitted parameters are unbiased with an RMS
/// error below 2% at a thousand averages.
#[test]
fn fit_with_averaging_noise() {
    let p = oscillator();
    let clean = analytic(&p, 4.0, 8.0, 12.0);
    let truth = lorentzian_fit(&clean, None).unwrap();
    let scatter = Gamma::new(1000.0, 1.0 / 1000.0).unwrap();
    let mut sq = [0.0; 3];
    let mut bias = [0.0; 3];
    let n = 40;
    for seed in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = Spectrum {
            psd: clean.psd.iter().map(|v| v * scatter.sample(&mut rng)).collect(),
            ..clean.clone()
        };
        let fit = lorentzian_fit(&noisy, None).unwrap();
        let errs = [
            fit.center / truth.center - 1.0,
            fit.width / truth.width - 1.0,
            fit.area / truth.area - 1.0,
        ];
        for k in 0..3 {
            sq[k] += errs[k] * errs[k] / n as f64;
            bias[k] += errs[k] / n as f64;
        }
    }
    for k in 0..3 {
        assert!(sq[k].sqrt() < 0.02, "parameter {k}: rms {}", sq[k].sqrt());
        assert!(bias[k].abs() < 0.005, "parameter {k}: bias {}", bias[k]);
    }
}

#[test]
fn flat_spectrum_has_no_peak() {
    let s = Spectrum {
        freq: (0..200).map(|i| i as f64).collect(),
        psd: vec![1e-20; 200],
        rbw: 1.5,
        n_averages: 10,
        normalized: false,
        floor: None,
    };
    assert!(matches!(lorentzian_fit(&s, None), Err(Error::NoPeak(_))));
}

#[test]
fn metrics_from_analytic_spectra() {
    let p = oscillator();
    let open = lorentzian_fit(&analytic(&p, 0.0, 8.0, 30.0), None).unwrap();
    for g in [1.0, 4.0, 19.0, 39.0] {
        let closed = lorentzian_fit(&analytic(&p, g, 8.0, 30.0), None).unwrap();
        let m = extract_metrics(&open, &closed, &p).unwrap();
        assert!(rel(m.gamma_ratio, 1.0 + g) < 0.01);
        assert!(rel(m.r_amplitude, noise_reduction_r(p.gamma, g * p.gamma).unwrap()) < 0.01);
        assert!(rel(m.cooling_factor, 1.0 + g) < 0.01);
        assert!(rel(m.effective_temperature, p.temperature / (1.0 + g)) < 0.01);
    }
}

#[test]
fn band_variance_matches_quadrature() {
    let p = oscillator();
    let fb = FeedbackConfig::disabled(&p).with_gain(9.0 * p.gamma);
    let s = analytic(&p, 9.0, 20.0, 60.0);
    let (lo, hi) = (s.freq[0], s.freq[s.len() - 1]);
    let measured = band_variance(&s, (lo, hi), false).unwrap();
    let expected = closed_loop_band_variance(&p, &fb, hz_to_rad(lo), hz_to_rad(hi), LoopResponse::InBand).unwrap();
    assert!(rel(measured, expected) < 1e-3, "{measured} vs {expected}");

    let floor = 0.01 * s.psd.iter().cloned().fold(0.0, f64::max);
    let with_floor = Spectrum { psd: s.psd.iter().map(|v| v + floor).collect(), floor: Some(floor), ..s.clone() };
    let cleaned = band_variance(&with_floor, (lo, hi), true).unwrap();
    assert!(rel(cleaned, measured) < 1e-9);
}

proptest! {
    #[test]
    fn normalization_round_trips(
        psd in prop::collection::vec(1e-30f64..1e-10, 8..64),
        floor in 1e-30f64..1e-10,
        included in any::<bool>(),
    ) {
        let s = Spectrum {
            freq: (0..psd.len()).map(|i| i as f64).collect(),
            psd: psd.clone(),
            rbw: 1.5,
            n_averages: 4,
            normalized: false,
            floor: included.then_some(floor),
        };
        let n = normalize_to_shot_noise(&s, floor, included).unwrap();
        prop_assert!(n.normalized);
        prop_assert!(normalize_to_shot_noise(&n, floor, included).is_err());
        let back = denormalize(&n, floor, included).unwrap();
        prop_assert!(!back.normalized);
        for (a, b) in back.psd.iter().zip(&psd) {
            let scale = if included { *b } else { b + floor };
            prop_assert!((a - b).abs() <= 1e-14 * scale);
        }
    }

    /// Welch variance of a scaled series scales with the square.
    #[test]
    fn welch_is_quadratic_in_amplitude(seed in any::<u64>(), k in 0.1f64..10.0) {
        let x = white(8192, 1.0, seed);
        let y: Vec<f64> = x.iter().map(|v| k * v).collect();
        let a = welch_psd_with(&x, 1.0, 256, WelchConfig::default()).unwrap();
        let b = welch_psd_with(&y, 1.0, 256, WelchConfig::default()).unwrap();
        for (u, v) in a.psd.iter().zip(&b.psd) {
            prop_assert!((v - k * k * u).abs() <= 1e-12 * v.abs().max(1e-300));
        }
    }
}
