//! Browser bindings: closed-form spectra, cooling numbers and a short
//! simulated spectrum, all in scaled units (`Ω_M = 1 rad/s`).
//!
//! Spectra come back as flat arrays `[x₀…x_{n−1}, y₀…]` with `x` the
//! detuning from the mode in units of the intrinsic linewidth and `y` in dB
//! relative to the open-loop peak.

use std::f64::consts::PI;

use coldmirror::model::{effective_temperature, hz_to_rad, noise_reduction_r, rad_to_hz, LoopResponse};
use coldmirror::scenarios::{Profile, ScenarioConfig, ScenarioName};
use coldmirror::sim::{Experiment, Simulator};
use coldmirror::spectral::{model_psd_hz, WelchAccumulator, WelchConfig};
use wasm_bindgen::prelude::*;

fn config(q: f64, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::defaults(ScenarioName::CoolingSpectra, Profile::Scaled);
    cfg.oscillator.q = q;
    cfg.seed = seed;
    cfg
}

fn db(v: f64, reference: f64) -> f64 {
    10.0 * (v / reference).log10()
}

fn open_peak(cfg: &ScenarioConfig) -> coldmirror::Result<(Experiment, f64)> {
    let open = cfg.experiment(0.0)?;
    let peak = model_psd_hz(&open, cfg.sim.sensing, rad_to_hz(open.oscillator.omega_m))?;
    Ok((open, peak))
}

/// Detuning grid, open-loop and closed-loop model spectra.
pub fn model_spectra(g_over_gamma: f64, q: f64, span: f64, n: usize) -> coldmirror::Result<Vec<f64>> {
    let cfg = config(q, 1);
    let (open, peak) = open_peak(&cfg)?;
    let closed = cfg.experiment(g_over_gamma)?;
    let p = open.oscillator;
    let n = n.clamp(16, 20_000);
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let x = -span + 2.0 * span * i as f64 / (n - 1) as f64;
        let f = rad_to_hz(p.omega_m + x * p.gamma);
        out[i] = x;
        out[n + i] = db(model_psd_hz(&open, cfg.sim.sensing, f)?, peak);
        out[2 * n + i] = db(model_psd_hz(&closed, cfg.sim.sensing, f)?, peak);
    }
    Ok(out)
}

/// Closed-form figures of merit at one gain.
#[wasm_bindgen]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoolingSummary {
    /// Amplitude noise reduction at resonance.
    pub noise_reduction: f64,
    pub temperature_ratio: f64,
    pub effective_temperature_k: f64,
    /// `Γ_fb / Γ` with an ideal loop.
    pub linewidth_ratio: f64,
    /// `Γ_fb / Γ` including the loop filter.
    pub filtered_linewidth_ratio: f64,
    pub q_eff: f64,
}

pub fn summary(g_over_gamma: f64, q: f64) -> coldmirror::Result<CoolingSummary> {
    let cfg = config(q, 1);
    let exp = cfg.experiment(g_over_gamma)?;
    let p = exp.oscillator;
    let g = g_over_gamma * p.gamma;
    let t_fb = effective_temperature(&p, g)?;
    let filtered = coldmirror::model::effective_linewidth(&p, &exp.feedback, LoopResponse::Filtered);
    Ok(CoolingSummary {
        noise_reduction: noise_reduction_r(p.gamma, g)?,
        temperature_ratio: p.temperature / t_fb,
        effective_temperature_k: t_fb,
        linewidth_ratio: 1.0 + g_over_gamma,
        filtered_linewidth_ratio: filtered / p.gamma,
        q_eff: p.omega_m / (p.gamma + g),
    })
}

/// Simulated readout spectrum at eight bins per closed-loop linewidth,
/// restricted to `±span` intrinsic linewidths around the mode.
pub fn simulated(g_over_gamma: f64, q: f64, seed: u64, averages: usize, span: f64) -> coldmirror::Result<Vec<f64>> {
    let cfg = config(q, seed);
    let (_, peak) = open_peak(&cfg)?;
    let exp = cfg.experiment(g_over_gamma)?;
    let p = exp.oscillator;
    let gamma_eff = exp.closed_loop_linewidth();
    let mut sim_cfg = cfg.base_sim_config(seed)?;
    let dt = sim_cfg.sample_interval();
    let segment = (8.0 * 2.0 * PI / (gamma_eff * dt)).ceil() as usize;
    let mut acc = WelchAccumulator::new(segment, dt, WelchConfig::default())?;
    let n = segment + (averages.clamp(1, 400) - 1) * acc.hop();
    sim_cfg.n_samples = n;
    sim_cfg.warmup = cfg.sim.warmup_decay_times / gamma_eff;
    let mut sim = Simulator::new(exp, sim_cfg)?;
    let per_meter = exp.readout.phase_per_meter();
    sim.run(n, |r| acc.push(r.phase / per_meter))?;
    let s = acc.finish()?;
    let lo = rad_to_hz(p.omega_m - span * p.gamma);
    let hi = rad_to_hz(p.omega_m + span * p.gamma);
    let bins = s.bins_in(lo, hi);
    let mut x: Vec<f64> = s.freq[bins.clone()].iter().map(|&f| (hz_to_rad(f) - p.omega_m) / p.gamma).collect();
    x.extend(s.psd[bins].iter().map(|&v| db(v, peak)));
    Ok(x)
}

fn js(e: coldmirror::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `[x…, open dB…, closed dB…]` over `±span` linewidths on `n` points.
#[wasm_bindgen(js_name = modelSpectra)]
pub fn model_spectra_js(g_over_gamma: f64, q: f64, span: f64, n: usize) -> Result<Vec<f64>, JsError> {
    model_spectra(g_over_gamma, q, span, n).map_err(js)
}

#[wasm_bindgen(js_name = coolingSummary)]
pub fn summary_js(g_over_gamma: f64, q: f64) -> Result<CoolingSummary, JsError> {
    summary(g_over_gamma, q).map_err(js)
}

/// `[x…, dB…]` of a simulated Welch spectrum.
#[wasm_bindgen(js_name = simulatedSpectrum)]
pub fn simulated_js(g_over_gamma: f64, q: f64, seed: u64, averages: usize, span: f64) -> Result<Vec<f64>, JsError> {
    simulated(g_over_gamma, q, seed, averages, span).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_loop_peaks_at_zero_db() {
        let v = model_spectra(0.0, 1000.0, 10.0, 201).unwrap();
        let n = 201;
        assert_eq!(v[100], 0.0);
        assert!(v[n + 100].abs() < 1e-9);
        assert!((v[2 * n + 100] - v[n + 100]).abs() < 1e-12);
    }

    #[test]
    fn cooling_lowers_the_peak_by_r_squared() {
        let n = 201;
        let v = model_spectra(19.0, 1000.0, 10.0, n).unwrap();
        let s = summary(19.0, 1000.0).unwrap();
        assert!((s.noise_reduction - 20.0).abs() < 1e-9);
        assert!((s.temperature_ratio - 20.0).abs() < 1e-9);
        assert!((-v[2 * n + 100] - 20.0 * s.noise_reduction.log10()).abs() < 0.2);
    }

    #[test]
    fn unstable_gain_is_an_error() {
        assert!(summary(-1.5, 1000.0).is_err());
        assert!(model_spectra(-1.5, 1000.0, 10.0, 100).is_err());
    }

    #[test]
    fn simulation_tracks_the_model() {
        let v = simulated(4.0, 1000.0, 2, 100, 5.0).unwrap();
        let n = v.len() / 2;
        assert!(n > 10);
        let peak = v[n..].iter().cloned().fold(f64::MIN, f64::max);
        // Model peak at g = 4Γ sits 20 log10(5) ≈ 14 dB below open loop.
        assert!((peak + 14.0).abs() < 1.0, "{peak}");
        assert_eq!(v, simulated(4.0, 1000.0, 2, 100, 5.0).unwrap());
    }
}
