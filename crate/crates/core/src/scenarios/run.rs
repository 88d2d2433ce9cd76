//! Execution of single run points: plan the segment length and averaging,
//! stream the simulator into the spectral accumulators, and fit.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{rad_to_hz, to_single_sided_hz};
use crate::sim::{Experiment, SimConfig, Simulator};
use crate::spectral::{CrossAccumulator, Spectrum, WelchAccumulator, WelchConfig, Window};

use super::config::ScenarioConfig;

/// Everything needed to run one point independently of the others.
#[derive(Debug, Clone)]
pub(crate) struct PointPlan {
    pub label: String,
    pub g_over_gamma: f64,
    pub experiment: Experiment,
    pub sim: SimConfig,
    pub segment_len: usize,
    pub window: Window,
    pub averages: usize,
    /// Also estimate the readout without the background.
    pub mode_channel: bool,
    /// Also accumulate the displacement/force cross spectrum.
    pub cross: bool,
}

/// Raw output of a point.
#[derive(Debug, Clone)]
pub(crate) struct PointData {
    pub readout: Spectrum,
    pub mode: Option<Spectrum>,
    /// `(−Σ Im S_xF, Σ S_xx)` over the calibration band.
    pub calibration: Option<(f64, f64)>,
    pub steps: u64,
}

/// Compact label of a gain: `g+19`, `g-0.98`, `g+0`.
pub fn gain_label(g: f64) -> String {
    if g == g.trunc() && g.abs() < 1e15 {
        format!("g{:+}", g as i64)
    } else {
        let s = format!("{g:+.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        format!("g{s}")
    }
}

/// Segment length in samples for a feature of angular width `feature`.
pub(crate) fn plan_segment(cfg: &ScenarioConfig, sample_interval: f64, feature: f64) -> Result<usize> {
    let a = &cfg.analysis;
    let n = match a.rbw_hz {
        Some(rbw) => (a.window.nominal_enbw() / (rbw * sample_interval)).round(),
        None => (a.bins_per_linewidth * 2.0 * PI / (feature * sample_interval)).ceil(),
    };
    if !(n >= 16.0) {
        return Err(Error::invalid(format!(
            "resolution too coarse: {n} samples per segment (need at least 16)"
        )));
    }
    if n > 1e8 {
        return Err(Error::invalid(format!("resolution needs {n:e} samples per segment")));
    }
    Ok(next_smooth(n as usize))
}

/// Smallest even integer `≥ n` without prime factors above 5, which keeps
/// the transforms on the fast mixed-radix paths.
fn next_smooth(n: usize) -> usize {
    let smooth = |mut m: usize| {
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        m == 1
    };
    let mut m = n.max(2);
    m += m % 2;
    while !smooth(m) {
        m += 2;
    }
    m
}

/// Number of averages for a point, from the configured count, the step
/// budget and the per-point cap.
pub(crate) fn plan_averages(cfg: &ScenarioConfig, segment_len: usize, decimation: usize) -> usize {
    let a = &cfg.analysis;
    let hop_steps = (segment_len / 2) as f64 * decimation as f64;
    let by_budget = (a.step_budget / hop_steps).floor() as usize;
    let cap = ((a.max_steps_per_point / hop_steps).floor() as usize).max(a.min_averages);
    a.averages.max(by_budget).min(cap).max(a.min_averages)
}

pub(crate) fn run_point(plan: &PointPlan) -> Result<PointData> {
    let cfg = WelchConfig::with_window(plan.window);
    let dt = plan.sim.sample_interval();
    let mut readout = WelchAccumulator::new(plan.segment_len, dt, cfg)?;
    let hop = readout.hop();
    let n_records = plan.segment_len + (plan.averages - 1) * hop;
    let mut sim_cfg = plan.sim;
    sim_cfg.n_samples = n_records;
    sim_cfg.n_scans = 1;
    let mut sim = Simulator::new(plan.experiment, sim_cfg)?;
    let mut mode = if plan.mode_channel {
        Some(WelchAccumulator::new(plan.segment_len, dt, cfg)?)
    } else {
        None
    };
    let mut cross = if plan.cross {
        Some(CrossAccumulator::new(plan.segment_len, dt, cfg)?)
    } else {
        None
    };
    let per_meter = plan.experiment.readout.phase_per_meter();
    sim.run(n_records, |r| {
        let sensed = r.phase / per_meter;
        readout.push(sensed);
        if let Some(m) = mode.as_mut() {
            m.push(sensed - r.background);
        }
        if let Some(c) = cross.as_mut() {
            c.push(r.x, r.force);
        }
    })?;
    let floor = Some(to_single_sided_hz(plan.experiment.readout.shot_noise_floor));
    let mut readout = readout.finish()?;
    readout.floor = floor;
    let mode = match mode {
        Some(m) => {
            let mut s = m.finish()?;
            s.floor = floor;
            Some(s)
        }
        None => None,
    };
    let calibration = match cross {
        Some(c) => {
            let c = c.finish()?;
            let p = &plan.experiment.oscillator;
            let half = rad_to_hz(2.0 * plan.experiment.closed_loop_linewidth().max(p.gamma));
            let f0 = rad_to_hz(p.omega_m);
            let (mut quad, mut sxx) = (0.0, 0.0);
            for (k, &f) in c.freq.iter().enumerate() {
                if (f - f0).abs() <= half {
                    quad -= c.sxy[k].im;
                    sxx += c.sxx[k];
                }
            }
            Some((quad, sxx))
        }
        None => None,
    };
    Ok(PointData { readout, mode, calibration, steps: sim.steps() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_lengths() {
        assert_eq!(next_smooth(1), 2);
        assert_eq!(next_smooth(7), 8);
        assert_eq!(next_smooth(1001), 1024);
        assert_eq!(next_smooth(1000), 1000);
        assert_eq!(next_smooth(15), 16);
    }
}
