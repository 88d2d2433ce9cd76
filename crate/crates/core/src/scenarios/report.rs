//! Scenario results and their on-disk form.
//!
//! A report folder holds `manifest.toml`, `metrics.tsv`, `summary.tsv`, one
//! `spectra/<label>.tsv` per run point and the analytic `overlays/*.tsv`.
//! Every table is tab-separated text with `#` header lines.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, ScenarioName};
use super::run::gain_label;
use crate::error::{Error, Result};
use crate::sim::Experiment;
use crate::spectral::{model_psd_hz, FitResult, Spectrum};

/// Label of the zero-temperature, shot-noise-only point of `oracle_check`.
pub const SHOT_ONLY_LABEL: &str = "t0-shot";

/// One simulated run point.
#[derive(Debug, Clone)]
pub struct PointReport {
    pub label: String,
    pub g_over_gamma: f64,
    pub seed: u64,
    pub experiment: Experiment,
    /// Readout spectrum (m²/Hz), floor and background included.
    pub spectrum: Spectrum,
    /// Readout with the background removed; only when a background is set.
    pub mode_spectrum: Option<Spectrum>,
    /// Fit of the mode spectrum when present, else of the readout.
    pub fit: Option<FitResult>,
    pub fit_error: Option<String>,
    /// Closed-loop energy damping rate predicted by the model, rad/s.
    pub model_linewidth: f64,
    /// Frequency of the model maximum near the mode, Hz.
    pub model_peak_hz: f64,
    pub oracle_deviation: Option<f64>,
    /// Calibrated gain `g/Γ` from the force/displacement cross spectrum.
    pub g_calibrated: Option<f64>,
    pub steps: u64,
}

impl PointReport {
    /// Spectrum the fit was made on.
    pub fn fitted_spectrum(&self) -> &Spectrum {
        self.mode_spectrum.as_ref().unwrap_or(&self.spectrum)
    }
}

/// One row of the metrics table. Ratios are relative to the zero-gain point;
/// `NaN` marks a value that could not be measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub g_over_gamma: f64,
    pub seed: u64,
    pub averages: usize,
    pub rbw_hz: f64,
    /// `Γ_fb / Γ` from fitted widths.
    pub gamma_ratio: f64,
    /// `R` from fitted peak heights.
    pub r_amplitude: f64,
    /// `T / T_fb` from fitted areas.
    pub cooling_fit: f64,
    /// `T / T_fb` from floor-subtracted band integrals of the readout.
    pub cooling_band: f64,
    /// Effective temperature from the fitted area, K.
    pub t_eff_fit: f64,
    pub g_calibrated: f64,
    pub model_gamma_ratio: f64,
    pub model_r: f64,
    pub model_cooling: f64,
    pub model_cooling_band: f64,
    pub oracle_deviation: f64,
}

impl MetricsRow {
    pub const COLUMNS: [&'static str; 17] = [
        "label",
        "g_over_gamma",
        "seed",
        "averages",
        "rbw_hz",
        "gamma_ratio",
        "r_amplitude",
        "cooling_fit",
        "cooling_band",
        "t_eff_fit_k",
        "g_calibrated_over_gamma",
        "model_gamma_ratio",
        "model_r",
        "model_cooling",
        "model_cooling_band",
        "oracle_deviation",
        "oracle_ok",
    ];
}

/// Analytic or derived curve written next to the measured points.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub points: Vec<PointReport>,
    pub metrics: Vec<MetricsRow>,
    /// Scenario-level results in a fixed order.
    pub summary: Vec<(String, f64)>,
    pub overlays: Vec<Overlay>,
    /// Non-fatal problems: failed fits, oracle tolerance exceeded.
    pub flags: Vec<String>,
    /// Frequency range written to the spectrum files, Hz.
    pub spectrum_window: (f64, f64),
}

impl ScenarioReport {
    pub fn point(&self, label: &str) -> Option<&PointReport> {
        self.points.iter().find(|p| p.label == label)
    }

    pub fn row(&self, label: &str) -> Option<&MetricsRow> {
        self.metrics.iter().find(|r| r.label == label)
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    /// Writes every table except the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("spectra"))?;
        fs::create_dir_all(dir.join("overlays"))?;
        self.write_metrics(file(&dir.join("metrics.tsv"))?)?;
        self.write_summary(file(&dir.join("summary.tsv"))?)?;
        for p in &self.points {
            self.write_spectrum(p, file(&dir.join("spectra").join(format!("{}.tsv", p.label)))?)?;
        }
        for o in &self.overlays {
            write_overlay(o, file(&dir.join("overlays").join(format!("{}.tsv", o.name)))?)?;
        }
        Ok(())
    }

    pub fn write_metrics<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# scenario {}", self.config.name)?;
        writeln!(w, "# ratios relative to the zero-gain point; NaN = not measured")?;
        writeln!(w, "{}", MetricsRow::COLUMNS.join("\t"))?;
        let tol = self.config.analysis.oracle_tolerance;
        for r in &self.metrics {
            let ok = if r.oracle_deviation.is_nan() {
                "-"
            } else if r.oracle_deviation <= tol {
                "yes"
            } else {
                "no"
            };
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.label,
                num(r.g_over_gamma),
                r.seed,
                r.averages,
                num(r.rbw_hz),
                num(r.gamma_ratio),
                num(r.r_amplitude),
                num(r.cooling_fit),
                num(r.cooling_band),
                num(r.t_eff_fit),
                num(r.g_calibrated),
                num(r.model_gamma_ratio),
                num(r.model_r),
                num(r.model_cooling),
                num(r.model_cooling_band),
                num(r.oracle_deviation),
                ok,
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# scenario {}", self.config.name)?;
        for f in &self.flags {
            writeln!(w, "# flag: {f}")?;
        }
        writeln!(w, "key\tvalue")?;
        for (k, v) in &self.summary {
            writeln!(w, "{k}\t{}", num(*v))?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_spectrum<W: Write>(&self, p: &PointReport, mut w: W) -> Result<()> {
        let s = &p.spectrum;
        writeln!(w, "# label {}", p.label)?;
        writeln!(w, "# g_over_gamma {}", num(p.g_over_gamma))?;
        writeln!(w, "# seed {}", p.seed)?;
        writeln!(w, "# rbw_hz {}", num(s.rbw))?;
        writeln!(w, "# n_averages {}", s.n_averages)?;
        if let Some(floor) = s.floor {
            writeln!(w, "# floor {}", num(floor))?;
        }
        writeln!(w, "# units {} single-sided", s.units())?;
        let mut header = vec!["freq_hz", "psd", "model_psd"];
        if p.mode_spectrum.is_some() {
            header.push("mode_psd");
        }
        if p.fit.is_some() {
            header.push("fit");
        }
        writeln!(w, "{}", header.join("\t"))?;
        let sensing = self.config.sim.sensing;
        for i in s.bins_in(self.spectrum_window.0, self.spectrum_window.1) {
            let f = s.freq[i];
            write!(w, "{}\t{}\t{}", num(f), num(s.psd[i]), num(model_psd_hz(&p.experiment, sensing, f)?))?;
            if let Some(m) = &p.mode_spectrum {
                write!(w, "\t{}", num(m.psd[i]))?;
            }
            if let Some(fit) = &p.fit {
                write!(w, "\t{}", num(fit.eval(f)))?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn write_overlay<W: Write>(o: &Overlay, mut w: W) -> Result<()> {
    writeln!(w, "# overlay {}", o.name)?;
    writeln!(w, "{}", o.columns.join("\t"))?;
    for row in &o.rows {
        let cells: Vec<String> = row.iter().map(|&v| num(v)).collect();
        writeln!(w, "{}", cells.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

fn file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.10e}")
    }
}

/// Names of the overlay tables a scenario writes.
pub fn overlay_names(name: ScenarioName) -> &'static [&'static str] {
    match name {
        ScenarioName::CoolingSpectra | ScenarioName::Heating => &["linewidth"],
        ScenarioName::GainSweep => &["damping_line", "cooling_curve"],
        ScenarioName::OffresCooling => &["suppression"],
        ScenarioName::OracleCheck => &["deviation"],
    }
}

/// Labels of the run points of a configuration, in run order.
pub fn point_labels(cfg: &ScenarioConfig) -> Vec<String> {
    let mut labels: Vec<String> = cfg.feedback.gains_over_gamma.iter().map(|&g| gain_label(g)).collect();
    if cfg.name == ScenarioName::OracleCheck {
        labels.push(SHOT_ONLY_LABEL.into());
    }
    labels
}

/// Everything needed to reproduce a report folder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Seconds since the Unix epoch when the run started.
    pub created_unix_s: u64,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub conventions: BTreeMap<String, String>,
    pub config: ScenarioConfig,
}

impl RunManifest {
    pub fn new(cfg: &ScenarioConfig, created_unix_s: u64) -> Self {
        let mut outputs = vec!["manifest.toml".to_string(), "metrics.tsv".into(), "summary.tsv".into()];
        outputs.extend(point_labels(cfg).iter().map(|l| format!("spectra/{l}.tsv")));
        outputs.extend(overlay_names(cfg.name).iter().map(|n| format!("overlays/{n}.tsv")));
        let conventions = [
            ("psd", "single-sided, m^2/Hz; variance = sum of psd times bin width"),
            ("frequency", "Hz in files, rad/s in the configuration"),
            ("fourier", "X(f) = sum x_n exp(-2 pi i f n dt) dt"),
            ("window", "periodic, 50% overlap, segment mean removed"),
            ("gains", "g in units of the intrinsic linewidth Gamma"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            created_unix_s,
            seed: cfg.seed,
            outputs,
            conventions,
            config: cfg.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.toml"), self.to_toml()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::config::{resolve_config, Profile};

    #[test]
    fn manifest_round_trips_to_the_same_config() {
        for name in ScenarioName::ALL {
            let cfg = ScenarioConfig::defaults(name, Profile::Scaled);
            let m = RunManifest::new(&cfg, 0);
            let text = m.to_toml().unwrap();
            assert_eq!(resolve_config(Some(&text), None, None).unwrap(), cfg);
            let back: RunManifest = toml::from_str(&text).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn labels() {
        assert_eq!(gain_label(19.0), "g+19");
        assert_eq!(gain_label(0.0), "g+0");
        assert_eq!(gain_label(-0.98), "g-0.98");
        assert_eq!(gain_label(-1.0), "g-1");
        let cfg = ScenarioConfig::defaults(ScenarioName::OracleCheck, Profile::Scaled);
        assert_eq!(point_labels(&cfg).last().unwrap(), SHOT_ONLY_LABEL);
    }
}
