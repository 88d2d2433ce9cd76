//! Closed-form physics of a single mechanical mode read out by a cavity and
//! damped by velocity feedback.
//!
//! Spectral convention: every PSD in this module is double-sided in angular
//! frequency, normalised so that the variance is `∫ S(Ω) dΩ / 2π` over the
//! whole real line. [`to_single_sided_hz`] converts to the single-sided,
//! per-hertz densities used by the spectrum analyser and every file format.
//!
//! Fourier convention: `x(t) = ∫ x[Ω] e^{-iΩt} dΩ/2π`, so the velocity is
//! `-iΩ x[Ω]` and a viscous force `-M g ẋ` reads `i M g Ω x[Ω]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Value of χ or χ_fb at one frequency, in s²/kg.
pub type ComplexResponse = Complex64;

/// The fundamental acoustic mode treated as a damped harmonic oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    /// Effective mass, kg.
    pub mass_eff: f64,
    /// Resonance angular frequency, rad/s.
    pub omega_m: f64,
    /// Energy damping rate (full linewidth), rad/s.
    pub gamma: f64,
    /// Bath temperature, K.
    pub temperature: f64,
}

impl OscillatorParams {
    pub fn new(mass_eff: f64, omega_m: f64, gamma: f64, temperature: f64) -> Result<Self> {
        let p = Self { mass_eff, omega_m, gamma, temperature };
        p.validate()?;
        Ok(p)
    }

    /// Builds the mode from its quality factor, `gamma = omega_m / q`.
    pub fn from_q(mass_eff: f64, omega_m: f64, q: f64, temperature: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::invalid(format!("quality factor must be positive, got {q}")));
        }
        Self::new(mass_eff, omega_m, omega_m / q, temperature)
    }

    pub fn validate(&self) -> Result<()> {
        positive("mass_eff", self.mass_eff)?;
        positive("omega_m", self.omega_m)?;
        positive("gamma", self.gamma)?;
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn q(&self) -> f64 {
        self.omega_m / self.gamma
    }

    /// Static stiffness `M Ω_M²`, N/m.
    pub fn stiffness(&self) -> f64 {
        self.mass_eff * self.omega_m * self.omega_m
    }

    /// Equipartition variance `k_B T / (M Ω_M²)` at the bath temperature.
    pub fn thermal_variance(&self) -> f64 {
        BOLTZMANN * self.temperature / self.stiffness()
    }

    /// Same mode at a different bath temperature.
    pub fn with_temperature(&self, temperature: f64) -> Self {
        Self { temperature, ..*self }
    }
}

/// Cavity readout: displacement to reflected-phase conversion plus a flat
/// measurement floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub finesse: f64,
    /// Optical wavelength, m.
    pub wavelength: f64,
    /// Displacement-equivalent shot-noise floor, double-sided, m²·s/rad.
    pub shot_noise_floor: f64,
}

impl ReadoutParams {
    pub fn validate(&self) -> Result<()> {
        positive("finesse", self.finesse)?;
        positive("wavelength", self.wavelength)?;
        if !(self.shot_noise_floor >= 0.0 && self.shot_noise_floor.is_finite()) {
            return Err(Error::invalid("shot_noise_floor must be non-negative"));
        }
        Ok(())
    }

    /// Radians of reflected phase per metre of displacement, `8𝓕/λ`.
    pub fn phase_per_meter(&self) -> f64 {
        8.0 * self.finesse / self.wavelength
    }
}

/// Velocity-feedback loop: band-pass filtered displacement, rotated by the
/// loop phase and applied as radiation pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// Loop gain `g`, rad/s. Negative values heat the mode.
    pub gain: f64,
    /// Phase beyond the ideal viscous quadrature, rad. Zero is pure damping,
    /// `+π/2` is a pure spring.
    pub loop_phase: f64,
    /// Band-pass centre, rad/s.
    pub filter_center: f64,
    pub filter_q: f64,
    /// Full power of the actuator beam, W.
    pub actuator_max_power: f64,
    pub enabled: bool,
}

impl FeedbackConfig {
    /// Feedback switched off, filter centred on the mode.
    pub fn disabled(p: &OscillatorParams) -> Self {
        Self {
            gain: 0.0,
            loop_phase: 0.0,
            filter_center: p.omega_m,
            filter_q: 200.0,
            actuator_max_power: 0.5,
            enabled: false,
        }
    }

    pub fn with_gain(self, gain: f64) -> Self {
        Self { gain, enabled: true, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        positive("filter_center", self.filter_center)?;
        positive("filter_q", self.filter_q)?;
        positive("actuator_max_power", self.actuator_max_power)?;
        if !self.gain.is_finite() || !self.loop_phase.is_finite() {
            return Err(Error::invalid("gain and loop_phase must be finite"));
        }
        Ok(())
    }

    /// Gain actually acting on the mode (zero when the loop is off).
    pub fn active_gain(&self) -> f64 {
        if self.enabled {
            self.gain
        } else {
            0.0
        }
    }

    /// Filter bandwidth `Ω_c / Q_f`, rad/s.
    pub fn filter_bandwidth(&self) -> f64 {
        self.filter_center / self.filter_q
    }
}

/// Flat displacement background from the other acoustic modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BackgroundModel {
    /// Displacement-equivalent double-sided PSD, m²·s/rad.
    pub level: f64,
    /// When set, the background is real mirror motion with the static
    /// compliance `1/(M Ω_M²)` and responds to the feedback force.
    pub affected_by_feedback: bool,
}

impl BackgroundModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0 && self.level.is_finite()) {
            return Err(Error::invalid("background level must be non-negative"));
        }
        Ok(())
    }
}

/// How the loop filter enters the frequency-domain response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoopResponse {
    /// Filter treated as unity: the loop is an ideal velocity sensor with the
    /// gain rotated by the loop phase.
    #[default]
    InBand,
    /// The band-pass filter's complex response multiplies the loop gain.
    Filtered,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Mechanical susceptibility `1 / (M (Ω_M² − Ω² − iΓΩ))`.
pub fn susceptibility(p: &OscillatorParams, omega: f64) -> ComplexResponse {
    let re = (p.omega_m - omega) * (p.omega_m + omega);
    Complex64::new(re, -p.gamma * omega).inv() / p.mass_eff
}

/// Double-sided Langevin force PSD `2 M Γ k_B T`, frequency independent.
pub fn langevin_force_psd(p: &OscillatorParams) -> f64 {
    2.0 * p.mass_eff * p.gamma * BOLTZMANN * p.temperature
}

/// Thermal displacement spectrum without feedback, `S_FT |χ(Ω)|²`.
pub fn thermal_displacement_psd(p: &OscillatorParams, omega: f64) -> f64 {
    let d = (p.omega_m - omega) * (p.omega_m + omega);
    let m = p.mass_eff;
    langevin_force_psd(p) / (m * m * (d * d + p.gamma * p.gamma * omega * omega))
}

/// Response of the continuous band-pass prototype
/// `H(s) = (Ω_c/Q) s / (s² + (Ω_c/Q) s + Ω_c²)` at `s = -iΩ`.
pub fn bandpass_response(center: f64, q: f64, omega: f64) -> Complex64 {
    let a = center / q;
    let s = Complex64::new(0.0, -omega);
    a * s / (s * s + a * s + center * center)
}

/// Feedback contribution `L(Ω)` to the inverse susceptibility per unit mass,
/// so that `1/χ_fb = 1/χ + M L`.
pub fn loop_term(fb: &FeedbackConfig, omega: f64, response: LoopResponse) -> Complex64 {
    if !fb.enabled {
        return Complex64::new(0.0, 0.0);
    }
    let (sin, cos) = fb.loop_phase.sin_cos();
    match response {
        LoopResponse::InBand => fb.gain * Complex64::new(0.0, -omega) * Complex64::new(cos, sin),
        LoopResponse::Filtered => {
            let h = bandpass_response(fb.filter_center, fb.filter_q, omega);
            fb.gain * h * Complex64::new(fb.filter_center * sin, -omega * cos)
        }
    }
}

/// Checks that the closed loop is stable. In-band this is `Γ + g cos φ > 0`;
/// with the filter, the Routh–Hurwitz conditions of the fourth-order
/// characteristic polynomial.
pub fn check_stability(p: &OscillatorParams, fb: &FeedbackConfig, response: LoopResponse) -> Result<()> {
    if !fb.enabled {
        return Ok(());
    }
    let (sin, cos) = fb.loop_phase.sin_cos();
    match response {
        LoopResponse::InBand => {
            let damping = p.gamma + fb.gain * cos;
            if damping > 0.0 {
                Ok(())
            } else {
                Err(Error::Unstable(format!(
                    "effective damping Γ + g cos φ = {damping:e} rad/s is not positive"
                )))
            }
        }
        LoopResponse::Filtered => {
            let a = fb.filter_bandwidth();
            let wc = fb.filter_center;
            let wm = p.omega_m;
            let g = fb.gain;
            let c3 = a + p.gamma;
            let c2 = wc * wc + p.gamma * a + wm * wm + g * a * cos;
            let c1 = p.gamma * wc * wc + a * wm * wm + g * a * wc * sin;
            let c0 = wm * wm * wc * wc;
            let h2 = c3 * c2 - c1;
            let h3 = c3 * c2 * c1 - c1 * c1 - c3 * c3 * c0;
            if c3 > 0.0 && c2 > 0.0 && c1 > 0.0 && c0 > 0.0 && h2 > 0.0 && h3 > 0.0 {
                Ok(())
            } else {
                Err(Error::Unstable(format!(
                    "Routh–Hurwitz test failed for g = {g:e} rad/s, phase = {} rad",
                    fb.loop_phase
                )))
            }
        }
    }
}

/// Closed-loop susceptibility `1 / (1/χ + M L)`.
pub fn closed_loop_susceptibility(
    p: &OscillatorParams,
    fb: &FeedbackConfig,
    omega: f64,
    response: LoopResponse,
) -> Result<ComplexResponse> {
    check_stability(p, fb, response)?;
    Ok(closed_loop_chi_unchecked(p, fb, omega, response))
}

fn closed_loop_chi_unchecked(
    p: &OscillatorParams,
    fb: &FeedbackConfig,
    omega: f64,
    response: LoopResponse,
) -> Complex64 {
    let re = (p.omega_m - omega) * (p.omega_m + omega);
    let inv = Complex64::new(re, -p.gamma * omega) + loop_term(fb, omega, response);
    inv.inv() / p.mass_eff
}

/// Displacement PSD under feedback. In-band with zero loop phase this is
/// `S_FT / (M² [(Ω_M² − Ω²)² + (Γ + g)² Ω²])`.
pub fn closed_loop_psd(
    p: &OscillatorParams,
    fb: &FeedbackConfig,
    omega: f64,
    response: LoopResponse,
) -> Result<f64> {
    check_stability(p, fb, response)?;
    if !fb.enabled {
        return Ok(thermal_displacement_psd(p, omega));
    }
    if response == LoopResponse::InBand && fb.loop_phase == 0.0 {
        let d = (p.omega_m - omega) * (p.omega_m + omega);
        let damping = p.gamma + fb.gain;
        let m = p.mass_eff;
        return Ok(langevin_force_psd(p) / (m * m * (d * d + damping * damping * omega * omega)));
    }
    Ok(langevin_force_psd(p) * closed_loop_chi_unchecked(p, fb, omega, response).norm_sqr())
}

/// Total displacement PSD seen by the sensor: the mode plus the background.
///
/// An unaffected background simply adds. An affected one is motion with the
/// static compliance `χ_b = 1/(M Ω_M²)` driven by its own white force and by
/// the feedback force, giving
/// `(|χ|² S_FT + |χ_b|² S_Fb) / |1 + (χ + χ_b) M L|²`.
pub fn sensed_displacement_psd(
    p: &OscillatorParams,
    fb: &FeedbackConfig,
    bg: &BackgroundModel,
    omega: f64,
    response: LoopResponse,
) -> Result<f64> {
    if !bg.affected_by_feedback || !fb.enabled {
        return Ok(closed_loop_psd(p, fb, omega, response)? + bg.level);
    }
    check_stability(p, fb, response)?;
    let chi = susceptibility(p, omega);
    let chi_b = 1.0 / p.stiffness();
    let l = loop_term(fb, omega, response);
    let denom = (Complex64::new(1.0, 0.0) + (chi + chi_b) * p.mass_eff * l).norm_sqr();
    Ok((chi.norm_sqr() * langevin_force_psd(p) + bg.level) / denom)
}

/// PSD of the displacement inferred from the readout: the mode, the
/// background and the shot-noise floor `shot`. When the loop senses the
/// readout itself (`shot_in_loop`), the shot noise is fed back and is
/// suppressed by the loop exactly like the thermal drive,
/// `(|χ|² S_FT + S_shot [+ S_b]) / |1 + (χ [+ χ_b]) M L|²`.
pub fn readout_psd(
    p: &OscillatorParams,
    fb: &FeedbackConfig,
    bg: &BackgroundModel,
    shot: f64,
    shot_in_loop: bool,
    omega: f64,
    response: LoopResponse,
) -> Result<f64> {
    if !shot_in_loop || !fb.enabled {
        return Ok(sensed_displacement_psd(p, fb, bg, omega, response)? + shot);
    }
    check_stability(p, fb, response)?;
    let chi = susceptibility(p, omega);
    let l = loop_term(fb, omega, response) * p.mass_eff;
    let mut drive = chi.norm_sqr() * langevin_force_psd(p) + shot;
    let mut open = chi;
    let mut outside = bg.level;
    if bg.affected_by_feedback {
        drive += bg.level;
        open += 1.0 / p.stiffness();
        outside = 0.0;
    }
    Ok(drive / (Complex64::new(1.0, 0.0) + open * l).norm_sqr() + outside)
}

/// Energy damping rate of the mode under feedback, `Γ − Im L(Ω_M) / Ω_M`:
/// the part of the loop force in phase with the velocity at resonance.
/// Equals `Γ + g cos φ` for the in-band loop.
pub fn effective_linewidth(p: &OscillatorParams, fb: &FeedbackConfig, response: LoopResponse) -> f64 {
    p.gamma - loop_term(fb, p.omega_m, response).im / p.omega_m
}

/// Amplitude noise reduction at resonance, `R = (Γ + g) / Γ`.
pub fn noise_reduction_r(gamma: f64, gain: f64) -> Result<f64> {
    positive("gamma", gamma)?;
    stable_gain(gamma, gain)?;
    Ok((gamma + gain) / gamma)
}

/// Effective temperature under feedback, `T Γ / (Γ + g)`.
pub fn effective_temperature(p: &OscillatorParams, gain: f64) -> Result<f64> {
    stable_gain(p.gamma, gain)?;
    Ok(p.temperature * p.gamma / (p.gamma + gain))
}

fn stable_gain(gamma: f64, gain: f64) -> Result<()> {
    if gain > -gamma {
        Ok(())
    } else {
        Err(Error::Unstable(format!(
            "gain {gain:e} rad/s is at or below -Γ = {:e} rad/s",
            -gamma
        )))
    }
}

/// Reflected-phase shift `8𝓕 δx / λ` for a displacement `dx`.
pub fn cavity_phase_shift(r: &ReadoutParams, dx: f64) -> f64 {
    r.phase_per_meter() * dx
}

/// Temperature of the bath that would produce the variance `Δx²` through
/// equipartition, `M Ω_M² Δx² / k_B`.
pub fn variance_to_temperature(p: &OscillatorParams, variance: f64) -> f64 {
    p.stiffness() * variance / BOLTZMANN
}

/// Cooling factor `T / T_fb` when a flat background is left untouched by the
/// loop. The mode contributes its full equipartition variance
/// `k_B T_fb/(M Ω_M²)`; the background contributes its integral over the
/// analysis band of full width `analysis_band` centred on `Ω_M`. The result
/// is 1 at zero gain, equals `(Γ + g)/Γ` without background and saturates at
/// `1 + V_mode / V_bg` for large gains.
pub fn cooling_factor_with_background(
    p: &OscillatorParams,
    bg: &BackgroundModel,
    gain: f64,
    analysis_band: f64,
) -> Result<f64> {
    positive("analysis_band", analysis_band)?;
    bg.validate()?;
    let t_fb = effective_temperature(p, gain)?;
    let v_mode = p.thermal_variance();
    let v_mode_fb = BOLTZMANN * t_fb / p.stiffness();
    let v_bg = background_band_variance(bg, analysis_band);
    if v_mode == 0.0 && v_bg == 0.0 {
        return Ok(1.0);
    }
    Ok((v_mode + v_bg) / (v_mode_fb + v_bg))
}

/// Variance a flat background puts into a band of full width `band` (rad/s)
/// counted at both positive and negative frequencies.
pub fn background_band_variance(bg: &BackgroundModel, band: f64) -> f64 {
    2.0 * bg.level * band / (2.0 * std::f64::consts::PI)
}

/// Variance of the closed-loop displacement inside `[lo, hi]` (rad/s, both
/// signs of frequency), by adaptive quadrature.
pub fn closed_loop_band_variance(
    p: &OscillatorParams,
    fb: &FeedbackConfig,
    lo: f64,
    hi: f64,
    response: LoopResponse,
) -> Result<f64> {
    check_stability(p, fb, response)?;
    let f = |w: f64| {
        if fb.enabled {
            langevin_force_psd(p) * closed_loop_chi_unchecked(p, fb, w, response).norm_sqr()
        } else {
            thermal_displacement_psd(p, w)
        }
    };
    let mut breaks = vec![lo];
    if lo < p.omega_m && p.omega_m < hi {
        breaks.push(p.omega_m);
    }
    breaks.push(hi);
    Ok(2.0 * quad::integrate_piecewise(f, &breaks, 1e-10) / (2.0 * std::f64::consts::PI))
}

/// Power suppression `S_fb / S_open` of the mode's motion at `omega` with the
/// filter response included.
pub fn feedback_suppression(p: &OscillatorParams, fb: &FeedbackConfig, omega: f64) -> Result<f64> {
    let closed = closed_loop_psd(p, fb, omega, LoopResponse::Filtered)?;
    Ok(closed / thermal_displacement_psd(p, omega))
}

/// Double-sided angular-frequency PSD to single-sided per-hertz PSD.
///
/// With variance `∫ S dΩ/2π` over the real line, folding negative
/// frequencies doubles the density and `dΩ/2π = df` needs no further factor.
pub fn to_single_sided_hz(psd: f64) -> f64 {
    2.0 * psd
}

/// Inverse of [`to_single_sided_hz`].
pub fn from_single_sided_hz(psd: f64) -> f64 {
    0.5 * psd
}

pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

pub fn rad_to_hz(w: f64) -> f64 {
    w / (2.0 * std::f64::consts::PI)
}
