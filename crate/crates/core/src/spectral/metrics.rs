use serde::{Deserialize, Serialize};

use super::welch::{CrossAccumulator, WelchConfig};
use super::{FitResult, Spectrum};
use crate::error::{Error, Result};
use crate::model::{variance_to_temperature, OscillatorParams};

/// Ratios between an open-loop and a closed-loop fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `Γ_fb / Γ` from the fitted widths.
    pub gamma_ratio: f64,
    /// Amplitude noise reduction at resonance, from the fitted heights.
    pub r_amplitude: f64,
    /// `T / T_fb` from the fitted areas.
    pub cooling_factor: f64,
    /// Temperature implied by the closed-loop area through equipartition, K.
    pub effective_temperature: f64,
}

pub fn extract_metrics(open_fit: &FitResult, closed_fit: &FitResult, p: &OscillatorParams) -> Result<Metrics> {
    if !open_fit.converged || !closed_fit.converged {
        return Err(Error::FitFailed("metrics need converged fits".into()));
    }
    if !(open_fit.width > 0.0 && closed_fit.width > 0.0 && closed_fit.peak > 0.0 && closed_fit.area > 0.0) {
        return Err(Error::FitFailed("fit parameters are not positive".into()));
    }
    Ok(Metrics {
        gamma_ratio: closed_fit.width / open_fit.width,
        r_amplitude: (open_fit.peak / closed_fit.peak).sqrt(),
        cooling_factor: open_fit.area / closed_fit.area,
        effective_temperature: variance_to_temperature(p, closed_fit.area),
    })
}

/// Experimental gain estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainMeasurement {
    /// Quadrature force-to-displacement ratio, proportional to `g`.
    pub g_raw: f64,
    /// `g / Γ` after calibration against the damping line.
    pub g_normalized: f64,
}

/// Scale `k` such that `gamma_ratio ≈ 1 + k g_raw` in the least-squares
/// sense over the damping line.
pub fn damping_line_scale(damping_line: &[(f64, f64)]) -> Result<f64> {
    if damping_line.len() < 2 {
        return Err(Error::DegenerateCalibration("need at least two points on the damping line".into()));
    }
    let first = damping_line[0].0;
    if damping_line.iter().all(|&(g, _)| g == first) {
        return Err(Error::DegenerateCalibration("all raw gains are equal".into()));
    }
    let (num, den) = damping_line
        .iter()
        .fold((0.0, 0.0), |(n, d), &(g, ratio)| (n + g * (ratio - 1.0), d + g * g));
    if !(den > 0.0) || !num.is_finite() {
        return Err(Error::DegenerateCalibration("damping line has no usable points".into()));
    }
    Ok(num / den)
}

/// Gain from the quadrature part of the force/displacement cross spectrum
/// at resonance, normalised with the damping line `(g_raw, Γ_fb/Γ)`.
pub fn calibrate_gain(
    force_spectrum_at_peak: f64,
    displacement_psd_at_peak: f64,
    damping_line: &[(f64, f64)],
) -> Result<GainMeasurement> {
    if !(displacement_psd_at_peak > 0.0) {
        return Err(Error::invalid("displacement PSD at the peak must be positive"));
    }
    let g_raw = force_spectrum_at_peak / displacement_psd_at_peak;
    let k = damping_line_scale(damping_line)?;
    Ok(GainMeasurement { g_raw, g_normalized: k * g_raw })
}

/// Quadrature force spectrum `−Im⟨X* F⟩` and displacement PSD, each summed
/// over `band` Hz. Their ratio is `M g Ω` for velocity feedback: a damping
/// force lags the displacement by a quarter period.
pub fn force_response_at_peak(
    x: &[f64],
    force: &[f64],
    dt: f64,
    segment_len: usize,
    band: (f64, f64),
) -> Result<(f64, f64)> {
    if x.len() != force.len() {
        return Err(Error::invalid("series lengths differ"));
    }
    let mut acc = CrossAccumulator::new(segment_len, dt, WelchConfig::default())?;
    for (&a, &b) in x.iter().zip(force) {
        acc.push(a, b);
    }
    let c = acc.finish()?;
    let (mut quad, mut sxx) = (0.0, 0.0);
    let mut any = false;
    for (k, &f) in c.freq.iter().enumerate() {
        if f >= band.0 && f <= band.1 {
            quad -= c.sxy[k].im;
            sxx += c.sxx[k];
            any = true;
        }
    }
    if !any {
        return Err(Error::InsufficientData("no bins inside the calibration band".into()));
    }
    Ok((quad, sxx))
}

/// Ordinary least-squares line `y = slope x + intercept`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::InsufficientData("need two points for a line".into()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    if !(sxx > 0.0) {
        return Err(Error::DegenerateCalibration("all abscissae are equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Largest relative deviation between a measured spectrum and a reference
/// density over `n_bands` adjacent sub-bands of width `band_width` Hz
/// centred on `center`.
///
/// Each sub-band compares summed power rather than single bins: a Welch
/// bin with `n` averages has a relative scatter of about `1/√n`, so the
/// per-bin maximum over hundreds of bins would be dominated by chance.
pub fn oracle_deviation<F: Fn(f64) -> f64>(
    s: &Spectrum,
    reference: F,
    center: f64,
    band_width: f64,
    n_bands: usize,
) -> Result<f64> {
    if n_bands == 0 || !(band_width > 0.0) {
        return Err(Error::invalid("need a positive number of sub-bands of positive width"));
    }
    let start = center - 0.5 * n_bands as f64 * band_width;
    let mut worst: f64 = 0.0;
    for b in 0..n_bands {
        let lo = start + b as f64 * band_width;
        let range = s.bins_in(lo, lo + band_width);
        if range.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no bins in [{lo}, {}] Hz",
                lo + band_width
            )));
        }
        let (mut measured, mut expected) = (0.0, 0.0);
        for i in range {
            measured += s.psd[i];
            expected += reference(s.freq[i]);
        }
        worst = worst.max((measured - expected).abs() / expected);
    }
    Ok(worst)
}
