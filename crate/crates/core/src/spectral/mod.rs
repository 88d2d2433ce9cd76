//! Spectrum-analyser emulation and parameter extraction.

pub mod fit;
pub mod metrics;
mod spectrum;
pub mod welch;

pub use fit::{lorentzian_fit, FitResult};
pub use metrics::{
    calibrate_gain, damping_line_scale, extract_metrics, force_response_at_peak, linear_fit, oracle_deviation,
    GainMeasurement, Metrics,
};
pub use spectrum::{band_variance, denormalize, normalize_to_shot_noise, Spectrum};
pub use welch::{
    cross_spectrum, segment_length, welch_psd, welch_psd_with, CrossAccumulator, CrossSpectrum, Detrend,
    WelchAccumulator, WelchConfig, Window,
};

use crate::model::{to_single_sided_hz, LoopResponse};
use crate::sim::{Experiment, Sensing, Trajectory};
use crate::{model, Result};

/// Welch spectrum of the sensed displacement of a trajectory, with the
/// readout's shot-noise floor recorded.
pub fn trajectory_spectrum(traj: &Trajectory, rbw: f64, window: Window) -> Result<Spectrum> {
    let mut s = welch_psd(&traj.sensed_displacement(), traj.dt, rbw, window)?;
    s.floor = Some(to_single_sided_hz(traj.meta.experiment.readout.shot_noise_floor));
    Ok(s)
}

/// Analytic single-sided PSD (m²/Hz) of the readout for a simulated
/// experiment, filter response included.
pub fn model_psd_hz(exp: &Experiment, sensing: Sensing, f_hz: f64) -> Result<f64> {
    let total = model::readout_psd(
        &exp.oscillator,
        &exp.feedback,
        &exp.background,
        exp.readout.shot_noise_floor,
        sensing == Sensing::Sensor,
        model::hz_to_rad(f_hz),
        LoopResponse::Filtered,
    )?;
    Ok(to_single_sided_hz(total))
}
