//! Named experiment pipelines: simulate every gain of a configuration,
//! estimate and fit the spectra, and compare with the analytic model.
//!
//! All points of a scenario share the seed, so they see the same thermal
//! force record: ratios between points are then far less noisy than the
//! spectra themselves. The warm-up is common as well and sized for the
//! slowest point.

pub mod config;
pub mod report;
mod run;

pub use config::{resolve_config, Profile, ScenarioConfig, ScenarioName, DEFAULT_GAIN_GRID};
pub use report::{
    overlay_names, point_labels, MetricsRow, Overlay, PointReport, RunManifest, ScenarioReport, SHOT_ONLY_LABEL,
};
pub use run::gain_label;

use run::{plan_averages, plan_segment, run_point, PointData, PointPlan};

use crate::error::{Error, Result};
use crate::model::{
    closed_loop_band_variance, closed_loop_psd, cooling_factor_with_background, effective_temperature, hz_to_rad, rad_to_hz,
    thermal_displacement_psd, variance_to_temperature, LoopResponse, OscillatorParams,
};
use crate::spectral::{band_variance, damping_line_scale, linear_fit, lorentzian_fit, model_psd_hz, oracle_deviation};

/// Execution options that do not affect the results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for the run points; all available cores when unset.
    pub threads: Option<usize>,
}

/// Runs the scenario named in the configuration.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    match cfg.name {
        ScenarioName::CoolingSpectra => run_cooling_spectra(cfg, opts),
        ScenarioName::Heating => run_heating(cfg, opts),
        ScenarioName::GainSweep => run_gain_sweep(cfg, opts),
        ScenarioName::OffresCooling => run_offres_cooling(cfg, opts),
        ScenarioName::OracleCheck => run_oracle_check(cfg, opts),
    }
}

/// Spectra at increasing cooling gains, with `R` and linewidth per gain.
pub fn run_cooling_spectra(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    expect(cfg, ScenarioName::CoolingSpectra)?;
    let mut report = base_report(cfg, opts, false)?;
    let rows = &report.metrics;
    let top = rows
        .iter()
        .max_by(|a, b| a.g_over_gamma.total_cmp(&b.g_over_gamma))
        .expect("at least one point");
    let linearity = rows
        .iter()
        .map(|r| (r.gamma_ratio / (1.0 + r.g_over_gamma) - 1.0).abs())
        .fold(0.0, max_or_nan);
    report.summary = vec![
        ("max_gain_over_gamma".into(), top.g_over_gamma),
        ("r_at_max_gain".into(), top.r_amplitude),
        ("gamma_ratio_at_max_gain".into(), top.gamma_ratio),
        ("cooling_fit_at_max_gain".into(), top.cooling_fit),
        ("max_width_linearity_error".into(), linearity),
    ];
    report.overlays = vec![linewidth_overlay(cfg)?];
    Ok(report)
}

/// Negative gains: the line narrows and grows.
pub fn run_heating(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    expect(cfg, ScenarioName::Heating)?;
    if let Some(&g) = cfg.feedback.gains_over_gamma.iter().find(|&&g| g <= -1.0) {
        return Err(Error::Unstable(format!("heating gain {g}Γ is at or below −Γ")));
    }
    let mut report = base_report(cfg, opts, false)?;
    let p = cfg.oscillator_params()?;
    let open = zero_point(&report)?;
    let low = report
        .points
        .iter()
        .min_by(|a, b| a.g_over_gamma.total_cmp(&b.g_over_gamma))
        .expect("at least one point");
    // Widths are compared fit to fit: every point is resolved with the same
    // number of bins per linewidth, so the window's broadening cancels.
    let (gamma_ratio, q_ratio, q_eff, peak_ratio) = match (&low.fit, &open.fit) {
        (Some(f), Some(o)) => {
            let q_low = f.center / f.width;
            let q_open = o.center / o.width;
            (f.width / o.width, q_low / q_open, q_low / q_open * p.q(), f.peak / o.peak)
        }
        _ => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    report.summary = vec![
        ("min_gain_over_gamma".into(), low.g_over_gamma),
        ("gamma_fb_over_gamma".into(), gamma_ratio),
        ("q_eff".into(), q_eff),
        ("q_eff_over_q".into(), q_ratio),
        ("peak_ratio_at_min_gain".into(), peak_ratio),
        ("model_q_eff_over_q".into(), p.gamma / low.model_linewidth),
    ];
    report.overlays = vec![linewidth_overlay(cfg)?];
    Ok(report)
}

/// The full gain grid with a flat background in the readout: the damping
/// line against the independently calibrated gain and the saturating
/// cooling factor.
pub fn run_gain_sweep(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    expect(cfg, ScenarioName::GainSweep)?;
    let mut report = base_report(cfg, opts, true)?;
    let p = cfg.oscillator_params()?;
    let omega_m = p.omega_m;
    let rows = &report.metrics;
    // The linear regime of the damping line; the extreme heating point is
    // dominated by its own statistics.
    let line: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| (-0.9..=19.0).contains(&r.g_over_gamma))
        .filter(|r| r.g_calibrated.is_finite() && r.gamma_ratio.is_finite())
        .map(|r| (r.g_calibrated, r.gamma_ratio))
        .collect();
    let (slope, intercept) = linear_fit(&line).unwrap_or((f64::NAN, f64::NAN));
    // Same line against the raw quadrature ratio: its scale must be the
    // known 1/(M Ω_M Γ).
    let raw: Vec<(f64, f64)> = line.iter().map(|&(g, r)| (g * p.mass_eff * omega_m * p.gamma, r)).collect();
    let scale = damping_line_scale(&raw).map_or(f64::NAN, |k| k * p.mass_eff * omega_m * p.gamma);
    let top = rows
        .iter()
        .max_by(|a, b| a.g_over_gamma.total_cmp(&b.g_over_gamma))
        .expect("at least one point");
    let bg_free_error = rows
        .iter()
        .filter(|r| r.g_over_gamma >= 0.0)
        .map(|r| (r.cooling_fit / (1.0 + r.g_over_gamma) - 1.0).abs())
        .fold(0.0, max_or_nan);
    report.summary = vec![
        ("damping_slope".into(), slope),
        ("damping_intercept".into(), intercept),
        ("calibration_scale".into(), scale),
        ("max_gain_over_gamma".into(), top.g_over_gamma),
        ("cooling_band_at_max_gain".into(), top.cooling_band),
        ("model_cooling_band_at_max_gain".into(), top.model_cooling_band),
        ("cooling_fit_at_max_gain".into(), top.cooling_fit),
        ("r_at_max_gain".into(), top.r_amplitude),
        ("max_background_free_cooling_error".into(), bg_free_error),
    ];

    let gains = &cfg.feedback.gains_over_gamma;
    let lo = gains.iter().copied().fold(f64::INFINITY, f64::min).max(-0.99);
    let hi = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    let bg = cfg.experiment(0.0)?.background;
    let band = cfg.analysis.band_over_gamma * p.gamma;
    let mut cooling = Vec::with_capacity(grid.len());
    for &g in &grid {
        let ideal = p.temperature / effective_temperature(&p, g * p.gamma)?;
        let with_bg = cooling_factor_with_background(&p, &bg, g * p.gamma, band)?;
        cooling.push(vec![g, ideal, with_bg]);
    }
    report.overlays = vec![
        Overlay {
            name: "damping_line".into(),
            columns: vec!["g_over_gamma".into(), "gamma_ratio".into()],
            rows: grid.iter().map(|&g| vec![g, 1.0 + g]).collect(),
        },
        Overlay {
            name: "cooling_curve".into(),
            columns: vec!["g_over_gamma".into(), "cooling_ideal".into(), "cooling_with_background".into()],
            rows: cooling,
        },
    ];
    Ok(report)
}

/// Cooling with the filter centred well below the mode: a dip opens in the
/// mode's off-resonant tail, set by the filter bandwidth.
pub fn run_offres_cooling(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    expect(cfg, ScenarioName::OffresCooling)?;
    if cfg.feedback.gains_over_gamma.len() != 2 {
        return Err(Error::invalid("offres_cooling takes exactly two gains: 0 and the cooling gain"));
    }
    let mut report = base_report(cfg, opts, false)?;
    let open = zero_point(&report)?;
    let closed = report
        .points
        .iter()
        .find(|p| p.g_over_gamma != 0.0)
        .ok_or_else(|| Error::invalid("offres_cooling needs a non-zero gain"))?;
    let fb = closed.experiment.feedback;
    let p = closed.experiment.oscillator;
    let fc = rad_to_hz(fb.filter_center);
    let a = rad_to_hz(fb.filter_bandwidth());
    let sensing = cfg.sim.sensing;
    let range = open.spectrum.bins_in(fc - 10.0 * a, fc + 10.0 * a);
    if range.len() < 8 {
        return Err(Error::InsufficientData("too few bins across the filter band".into()));
    }
    let mut freq = Vec::with_capacity(range.len());
    let mut measured = Vec::with_capacity(range.len());
    let mut model = Vec::with_capacity(range.len());
    for i in range {
        let f = open.spectrum.freq[i];
        freq.push(f);
        measured.push(open.spectrum.psd[i] / closed.spectrum.psd[i]);
        model.push(model_psd_hz(&open.experiment, sensing, f)? / model_psd_hz(&closed.experiment, sensing, f)?);
    }
    let dip = dip_shape(&freq, &measured);
    let model_dip = dip_shape(&freq, &model);
    let dip_oracle = oracle_deviation(&closed.spectrum, |f| model_psd_hz(&closed.experiment, sensing, f).unwrap_or(f64::NAN), fc, a, cfg.analysis.oracle_bands)?;
    let tail_oracle = oracle_deviation(&open.spectrum, |f| model_psd_hz(&open.experiment, sensing, f).unwrap_or(f64::NAN), fc, a, cfg.analysis.oracle_bands)?;
    let spring = p.omega_m * p.omega_m - fb.filter_center * fb.filter_center;
    report.summary = vec![
        ("filter_center_hz".into(), fc),
        ("filter_bandwidth_hz".into(), a),
        ("gain_over_stiffness".into(), fb.gain * fb.filter_center / spring),
        ("dip_center_hz".into(), dip.center),
        ("dip_depth_db".into(), dip.depth_db),
        ("model_dip_depth_db".into(), model_dip.depth_db),
        ("dip_width_hz".into(), dip.width),
        ("model_dip_width_hz".into(), model_dip.width),
        ("dip_width_over_bandwidth".into(), dip.width / a),
        ("dip_oracle_deviation".into(), dip_oracle),
        ("open_tail_oracle_deviation".into(), tail_oracle),
    ];
    report.overlays = vec![Overlay {
        name: "suppression".into(),
        columns: vec!["freq_hz".into(), "measured_open_over_closed".into(), "model_open_over_closed".into()],
        rows: freq.iter().zip(&measured).zip(&model).map(|((&f, &m), &r)| vec![f, m, r]).collect(),
    }];
    report.spectrum_window = (fc - 12.0 * a, rad_to_hz(p.omega_m + 50.0 * p.gamma));
    Ok(report)
}

/// Simulated spectra against the analytic model at several gains, plus a
/// zero-temperature run that must show the bare shot-noise floor.
pub fn run_oracle_check(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    expect(cfg, ScenarioName::OracleCheck)?;
    let mut report = base_report(cfg, opts, false)?;
    let tol = cfg.analysis.oracle_tolerance;
    let worst = report.metrics.iter().map(|r| r.oracle_deviation).fold(0.0, max_or_nan);
    let failures = report.metrics.iter().filter(|r| !(r.oracle_deviation <= tol)).count();
    let mut summary = vec![
        ("max_oracle_deviation".into(), worst),
        ("oracle_tolerance".into(), tol),
        ("oracle_failures".into(), failures as f64),
    ];
    if let Some(shot) = report.point(SHOT_ONLY_LABEL) {
        let s = &shot.spectrum;
        let floor = s.floor.unwrap_or(0.0);
        let p = shot.experiment.oscillator;
        let half = rad_to_hz(5.0 * cfg.analysis.oracle_bands as f64 * p.gamma);
        let f0 = rad_to_hz(p.omega_m);
        let bins = s.bins_in(f0 - half, f0 + half);
        let n = bins.len() as f64;
        let mean = if floor > 0.0 { s.psd[bins].iter().sum::<f64>() / n / floor } else { f64::NAN };
        // Bins one window-width apart are nearly independent.
        let se = (cfg.analysis.window.nominal_enbw() / (n * s.n_averages as f64)).sqrt();
        summary.push(("shot_only_level".into(), mean));
        summary.push(("shot_only_standard_error".into(), se));
        if !((mean - 1.0).abs() <= 5.0 * se) {
            report.flags.push(format!("shot-only level {mean:.4} is not 1 within statistics"));
        }
    }
    report.summary = summary;
    report.overlays = vec![Overlay {
        name: "deviation".into(),
        columns: vec!["g_over_gamma".into(), "oracle_deviation".into(), "tolerance".into()],
        rows: report
            .metrics
            .iter()
            .filter(|r| r.label != SHOT_ONLY_LABEL)
            .map(|r| vec![r.g_over_gamma, r.oracle_deviation, tol])
            .collect(),
    }];
    Ok(report)
}

fn expect(cfg: &ScenarioConfig, name: ScenarioName) -> Result<()> {
    if cfg.name != name {
        return Err(Error::invalid(format!("configuration is for {}, not {name}", cfg.name)));
    }
    cfg.validate()
}

/// Running maximum that remembers a missing value.
fn max_or_nan(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn zero_point(report: &ScenarioReport) -> Result<&PointReport> {
    report
        .points
        .iter()
        .find(|p| p.g_over_gamma == 0.0)
        .ok_or_else(|| Error::invalid("the gain list must contain the open-loop reference 0"))
}

/// Plans every point, runs them, fits and fills the metrics table.
fn base_report(cfg: &ScenarioConfig, opts: &RunOptions, calibrate: bool) -> Result<ScenarioReport> {
    if !cfg.feedback.gains_over_gamma.contains(&0.0) {
        return Err(Error::invalid("the gain list must contain the open-loop reference 0"));
    }
    let plans = plan_points(cfg, calibrate)?;
    let data = execute(&plans, opts)?;
    let p = cfg.oscillator_params()?;
    let mut flags = Vec::new();
    let mut points = Vec::with_capacity(plans.len());
    for (plan, d) in plans.into_iter().zip(data) {
        points.push(finish_point(cfg, plan, d, &p, &mut flags)?);
    }
    let metrics = metrics_rows(cfg, &points, &p)?;
    for r in &metrics {
        if r.oracle_deviation > cfg.analysis.oracle_tolerance {
            flags.push(format!(
                "{}: deviation from the model {:.4} exceeds {}",
                r.label, r.oracle_deviation, cfg.analysis.oracle_tolerance
            ));
        }
    }
    let widest = points.iter().map(|pt| pt.model_linewidth).fold(p.gamma, f64::max);
    let half = (0.5 * cfg.analysis.band_over_gamma * p.gamma).max(12.0 * widest);
    Ok(ScenarioReport {
        config: cfg.clone(),
        points,
        metrics,
        summary: Vec::new(),
        overlays: Vec::new(),
        flags,
        spectrum_window: (rad_to_hz(p.omega_m - half).max(0.0), rad_to_hz(p.omega_m + half)),
    })
}

fn plan_points(cfg: &ScenarioConfig, calibrate: bool) -> Result<Vec<PointPlan>> {
    let base = cfg.base_sim_config(cfg.seed)?;
    let dt_rec = base.sample_interval();
    let filter_width = cfg.feedback.filter_center_ratio * cfg.oscillator.omega_m / cfg.feedback.filter_q;
    let mut experiments = Vec::new();
    for &g in &cfg.feedback.gains_over_gamma {
        experiments.push((gain_label(g), g, cfg.experiment(g)?));
    }
    if cfg.name == ScenarioName::OracleCheck {
        let mut exp = cfg.experiment(0.0)?;
        exp.oscillator = exp.oscillator.with_temperature(0.0);
        experiments.push((SHOT_ONLY_LABEL.to_string(), 0.0, exp));
    }
    let slowest = experiments
        .iter()
        .map(|(_, _, e)| e.closed_loop_linewidth())
        .fold(f64::INFINITY, f64::min);
    if !(slowest > 0.0) {
        return Err(Error::Unstable("a run point has no net damping".into()));
    }
    let warmup = cfg.sim.warmup_decay_times / slowest;
    // The off-resonance dip is read as a ratio of spectra, so all its points
    // share one frequency grid.
    let common_feature = (cfg.name == ScenarioName::OffresCooling).then(|| slowest.min(filter_width));
    let mut plans = Vec::with_capacity(experiments.len());
    for (label, g, exp) in experiments {
        let feature = common_feature.unwrap_or_else(|| exp.closed_loop_linewidth().min(filter_width));
        let segment_len = plan_segment(cfg, dt_rec, feature)?;
        let mut averages = plan_averages(cfg, segment_len, base.decimation);
        if label == SHOT_ONLY_LABEL {
            averages = averages.min(200);
        }
        let mut sim = base;
        sim.warmup = warmup;
        sim.record_force = calibrate;
        plans.push(PointPlan {
            label,
            g_over_gamma: g,
            experiment: exp,
            sim,
            segment_len,
            window: cfg.analysis.window,
            averages,
            mode_channel: exp.background.level > 0.0,
            cross: calibrate,
        });
    }
    Ok(plans)
}

#[cfg(feature = "parallel")]
fn execute(plans: &[PointPlan], opts: &RunOptions) -> Result<Vec<PointData>> {
    use rayon::prelude::*;
    let work = || plans.par_iter().map(run_point).collect::<Result<Vec<_>>>();
    match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
        None => work(),
    }
}

#[cfg(not(feature = "parallel"))]
fn execute(plans: &[PointPlan], _opts: &RunOptions) -> Result<Vec<PointData>> {
    plans.iter().map(run_point).collect()
}

fn finish_point(
    cfg: &ScenarioConfig,
    plan: PointPlan,
    d: PointData,
    p: &OscillatorParams,
    flags: &mut Vec<String>,
) -> Result<PointReport> {
    let exp = plan.experiment;
    let model_linewidth = exp.closed_loop_linewidth();
    let shot_only = plan.label == SHOT_ONLY_LABEL;
    let fitted = d.mode.as_ref().unwrap_or(&d.readout);
    let (fit, fit_error) = if shot_only {
        (None, None)
    } else {
        match lorentzian_fit(fitted, None) {
            Ok(f) if f.converged => (Some(f), None),
            Ok(f) => {
                let msg = format!("{}: fit stopped after {} iterations", plan.label, f.iterations);
                flags.push(msg.clone());
                (None, Some(msg))
            }
            Err(e) => {
                let msg = format!("{}: {e}", plan.label);
                flags.push(msg.clone());
                (None, Some(e.to_string()))
            }
        }
    };
    let sensing = cfg.sim.sensing;
    let center = model_peak_hz(&exp, sensing, &d.readout, shot_only)?;
    let reference = |f: f64| model_psd_hz(&exp, sensing, f).unwrap_or(f64::NAN);
    // The shot-only spectrum is flat: wider bands average down its scatter.
    let band = rad_to_hz(if shot_only { 5.0 * p.gamma } else { model_linewidth });
    let oracle = oracle_deviation(&d.readout, reference, center, band, cfg.analysis.oracle_bands)?;
    let g_calibrated = d.calibration.map(|(quad, sxx)| {
        if sxx > 0.0 {
            quad / (sxx * p.mass_eff * p.omega_m * p.gamma)
        } else {
            f64::NAN
        }
    });
    Ok(PointReport {
        label: plan.label,
        g_over_gamma: plan.g_over_gamma,
        seed: plan.sim.seed,
        experiment: exp,
        spectrum: d.readout,
        mode_spectrum: d.mode,
        fit,
        fit_error,
        model_linewidth,
        model_peak_hz: center,
        oracle_deviation: Some(oracle),
        g_calibrated,
        steps: d.steps,
    })
}

/// Location (Hz) of the model maximum near the mode.
fn model_peak_hz(
    exp: &crate::sim::Experiment,
    sensing: crate::sim::Sensing,
    s: &crate::spectral::Spectrum,
    shot_only: bool,
) -> Result<f64> {
    let f0 = rad_to_hz(exp.oscillator.omega_m);
    if shot_only {
        return Ok(f0);
    }
    let mut best = (f0, f64::NEG_INFINITY);
    for i in s.bins_in(0.8 * f0, 1.2 * f0) {
        let v = model_psd_hz(exp, sensing, s.freq[i])?;
        if v > best.1 {
            best = (s.freq[i], v);
        }
    }
    Ok(best.0)
}

fn metrics_rows(cfg: &ScenarioConfig, points: &[PointReport], p: &OscillatorParams) -> Result<Vec<MetricsRow>> {
    let open = points
        .iter()
        .find(|pt| pt.g_over_gamma == 0.0)
        .ok_or_else(|| Error::invalid("the gain list must contain the open-loop reference 0"))?;
    let f0 = rad_to_hz(p.omega_m);
    let half_band = rad_to_hz(0.5 * cfg.analysis.band_over_gamma * p.gamma);
    let band = (f0 - half_band, f0 + half_band);
    let band_var = |pt: &PointReport| band_variance(&pt.spectrum, band, true).unwrap_or(f64::NAN);
    let open_band = band_var(open);
    let open_peak = thermal_displacement_psd(p, p.omega_m);
    let open_variance = closed_loop_band_variance(p, &open.experiment.feedback, 0.0, 4.0 * p.omega_m, LoopResponse::Filtered)?;
    let mut rows = Vec::with_capacity(points.len());
    for pt in points {
        let g = pt.g_over_gamma;
        let shot_only = pt.label == SHOT_ONLY_LABEL;
        let (gamma_ratio, r_amplitude, cooling_fit, t_eff_fit) = match (&pt.fit, &open.fit) {
            (Some(f), Some(o)) => (
                f.width / o.width,
                (o.peak / f.peak).sqrt(),
                o.area / f.area,
                // The fit is single-sided in Hz: its area is the variance.
                variance_to_temperature(p, f.area),
            ),
            _ => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        let (model_gamma_ratio, model_r, model_cooling, model_cooling_band) = if shot_only {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let fb = &pt.experiment.feedback;
            let bin = hz_to_rad(pt.spectrum.bin_width());
            let around = hz_to_rad(pt.model_peak_hz);
            let closed_peak = golden_max(
                |w| closed_loop_psd(p, fb, w, LoopResponse::Filtered).unwrap_or(f64::NAN),
                around - bin,
                around + bin,
            );
            let variance = closed_loop_band_variance(p, fb, 0.0, 4.0 * p.omega_m, LoopResponse::Filtered)?;
            let added_damping = pt.model_linewidth - p.gamma;
            (
                pt.model_linewidth / p.gamma,
                (open_peak / closed_peak).sqrt(),
                open_variance / variance,
                cooling_factor_with_background(
                    p,
                    &pt.experiment.background,
                    added_damping,
                    cfg.analysis.band_over_gamma * p.gamma,
                )?,
            )
        };
        rows.push(MetricsRow {
            label: pt.label.clone(),
            g_over_gamma: g,
            seed: pt.seed,
            averages: pt.spectrum.n_averages,
            rbw_hz: pt.spectrum.rbw,
            gamma_ratio,
            r_amplitude,
            cooling_fit,
            cooling_band: if shot_only { f64::NAN } else { open_band / band_var(pt) },
            t_eff_fit,
            g_calibrated: pt.g_calibrated.unwrap_or(f64::NAN),
            model_gamma_ratio,
            model_r,
            model_cooling,
            model_cooling_band,
            oracle_deviation: pt.oracle_deviation.unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

fn linewidth_overlay(cfg: &ScenarioConfig) -> Result<Overlay> {
    let p = cfg.oscillator_params()?;
    let mut rows = Vec::new();
    for &g in &cfg.feedback.gains_over_gamma {
        let exp = cfg.experiment(g)?;
        rows.push(vec![g, 1.0 + g, exp.closed_loop_linewidth() / p.gamma]);
    }
    Ok(Overlay {
        name: "linewidth".into(),
        columns: vec!["g_over_gamma".into(), "ideal_gamma_ratio".into(), "filtered_gamma_ratio".into()],
        rows,
    })
}

/// Maximum of a unimodal function on `[lo, hi]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..80 {
        if fa > fb {
            hi = b;
            (b, fb) = (a, fa);
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            (a, fa) = (b, fb);
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    fa.max(fb)
}

struct Dip {
    center: f64,
    depth_db: f64,
    width: f64,
}

/// Peak and full width at half maximum of the excess suppression
/// `ratio − 1`, with linear interpolation of the half-maximum crossings.
fn dip_shape(freq: &[f64], ratio: &[f64]) -> Dip {
    let excess: Vec<f64> = ratio.iter().map(|r| r - 1.0).collect();
    let (k, &top) = excess
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty band");
    let half = 0.5 * top;
    let cross = |i: usize, j: usize| {
        let t = (excess[i] - half) / (excess[i] - excess[j]);
        freq[i] + t * (freq[j] - freq[i])
    };
    let left = (1..=k).rev().find(|&i| excess[i - 1] < half).map(|i| cross(i, i - 1));
    let right = (k..excess.len() - 1).find(|&i| excess[i + 1] < half).map(|i| cross(i, i + 1));
    let width = match (left, right) {
        (Some(l), Some(r)) => r - l,
        _ => f64::NAN,
    };
    Dip { center: freq[k], depth_db: 10.0 * (1.0 + top).log10(), width }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(name: ScenarioName) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::defaults(name, Profile::Scaled);
        cfg.analysis.averages = 16;
        cfg.analysis.min_averages = 16;
        cfg.analysis.step_budget = 0.0;
        cfg.analysis.bins_per_linewidth = 4.0;
        cfg
    }

    fn metrics_text(r: &ScenarioReport) -> Vec<u8> {
        let mut out = Vec::new();
        r.write_metrics(&mut out).unwrap();
        out
    }

    #[test]
    fn quick_cooling_run_is_reproducible_and_complete() {
        let mut cfg = quick(ScenarioName::CoolingSpectra);
        cfg.feedback.gains_over_gamma = vec![0.0, 4.0];
        let a = run_scenario(&cfg, &RunOptions::default()).unwrap();
        let b = run_scenario(&cfg, &RunOptions { threads: Some(1) }).unwrap();
        assert_eq!(metrics_text(&a), metrics_text(&b));
        let row = a.row("g+4").unwrap();
        assert!((row.gamma_ratio - 5.0).abs() < 1.0, "{row:?}");
        assert_eq!(a.row("g+0").unwrap().gamma_ratio, 1.0);

        let dir = tempfile::tempdir().unwrap();
        let manifest = RunManifest::new(&cfg, 0);
        manifest.write(dir.path()).unwrap();
        a.write(dir.path()).unwrap();
        for out in &manifest.outputs {
            assert!(dir.path().join(out).is_file(), "missing {out}");
        }
    }

    #[test]
    fn gain_lists_are_checked() {
        let mut cfg = quick(ScenarioName::CoolingSpectra);
        cfg.feedback.gains_over_gamma = vec![4.0];
        assert!(matches!(run_scenario(&cfg, &RunOptions::default()), Err(Error::InvalidParameter(_))));
        let mut cfg = quick(ScenarioName::Heating);
        cfg.feedback.gains_over_gamma = vec![0.0, -1.0];
        assert!(matches!(run_scenario(&cfg, &RunOptions::default()), Err(Error::Unstable(_))));
        let cfg = quick(ScenarioName::Heating);
        assert!(run_gain_sweep(&cfg, &RunOptions::default()).is_err());
    }

    #[test]
    fn dip_shape_of_a_known_curve() {
        let freq: Vec<f64> = (0..2001).map(|i| -10.0 + 0.01 * i as f64).collect();
        // Excess 3 / (1 + f²): half maximum at ±1.
        let ratio: Vec<f64> = freq.iter().map(|f| 1.0 + 3.0 / (1.0 + f * f)).collect();
        let d = dip_shape(&freq, &ratio);
        assert!(d.center.abs() < 1e-9);
        assert!((d.depth_db - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((d.width - 2.0).abs() < 1e-3);
    }

    #[test]
    fn golden_section_finds_the_maximum() {
        let m = golden_max(|x| -(x - 0.3) * (x - 0.3) + 2.0, 0.0, 1.0);
        assert!((m - 2.0).abs() < 1e-12);
    }
}
