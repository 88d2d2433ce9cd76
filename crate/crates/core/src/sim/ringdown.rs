use crate::error::{Error, Result};
use crate::sim::Trajectory;

/// Energy damping rate `Γ_fb` (rad/s) of a recorded free decay.
pub fn ring_down_estimate(traj: &Trajectory) -> Result<f64> {
    envelope_decay_rate(&traj.x_series, traj.dt)
}

/// Energy damping rate (rad/s) estimated from a sampled free decay.
///
/// Positive peaks are located with parabolic interpolation; the first tenth
/// of the record is skipped so start-up transients do not bias the slope,
/// and `ln(peak)` is fitted against time by least squares. The amplitude
/// decays as `e^{-Γt/2}`, hence the factor two.
pub fn envelope_decay_rate(x: &[f64], dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::invalid("sample interval must be positive"));
    }
    let start = x.len() / 10;
    let mut t = Vec::new();
    let mut ln_a = Vec::new();
    for i in start.max(1)..x.len().saturating_sub(1) {
        let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
        if b > 0.0 && b >= a && b > c {
            let denom = a - 2.0 * b + c;
            let (offset, peak) = if denom < 0.0 {
                let d = 0.5 * (a - c) / denom;
                (d, b - 0.25 * (a - c) * d)
            } else {
                (0.0, b)
            };
            t.push((i as f64 + offset) * dt);
            ln_a.push(peak.ln());
        }
    }
    if t.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "ring-down needs at least 4 peaks, found {}",
            t.len()
        )));
    }
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let am = ln_a.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (ti, ai) in t.iter().zip(&ln_a) {
        sxy += (ti - tm) * (ai - am);
        sxx += (ti - tm) * (ti - tm);
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::FitFailed("record does not decay".into()));
    }
    Ok(-2.0 * slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_synthetic_decay() {
        let dt = 0.01;
        let gamma = 0.05;
        let x: Vec<f64> = (0..200_000)
            .map(|i| {
                let t = i as f64 * dt;
                (-0.5 * gamma * t).exp() * (3.0 * t).cos()
            })
            .collect();
        let g = envelope_decay_rate(&x, dt).unwrap();
        assert!((g - gamma).abs() / gamma < 1e-3, "{g}");
    }

    #[test]
    fn rejects_flat_and_growing() {
        assert!(envelope_decay_rate(&[0.0; 100], 0.1).is_err());
        let x: Vec<f64> = (0..10_000).map(|i| (0.001 * i as f64).exp() * (0.3 * i as f64).sin()).collect();
        assert!(matches!(envelope_decay_rate(&x, 1.0), Err(Error::FitFailed(_))));
    }
}
